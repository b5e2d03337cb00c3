import threading

import pytest

from pachyderm.errors import (
    ConcurrentAccess,
    DanglingRef,
    Deleted,
    DuplicateHook,
    HookFailure,
    NonSerializable,
    SessionClosed,
    UnboundSlot,
    UnknownClass,
    UnknownOid,
    UnknownSlot,
)
from pachyderm.graph import reachable_closure
from pachyderm.objects import deref, slot_unbind, snapshot
from pachyderm.schema import SlotSpec
from pachyderm.store import open_store
from pachyderm.values import Opaque, Ref


@pytest.fixture
def points(session):
    session.define_class("point", [SlotSpec("x", 0), SlotSpec("y", 0)])
    return session


def test_create_with_defaults_runs_hook_once(points):
    calls = []
    points.register_init_hook("point", lambda draft, args: calls.append(dict(draft)))
    h = points.create_instance("point")
    assert (h.read("x"), h.read("y")) == (0, 0)
    assert calls == [{"x": 0, "y": 0}]
    assert points.init_calls["point"] == 1


def test_create_with_init_args(points):
    h = points.create_instance("point", {"x": 5})
    assert (h["x"], h["y"]) == (5, 0)


def test_hook_sees_args_and_may_edit_draft(points):
    def hook(draft, args):
        draft["y"] = args.get("x", 0) * 2

    points.register_init_hook("point", hook)
    assert points.create_instance("point", {"x": 4})["y"] == 8


def test_create_unknown_class_or_slot(points):
    with pytest.raises(UnknownClass):
        points.create_instance("line")
    with pytest.raises(UnknownSlot):
        points.create_instance("point", {"z": 1})


def test_hook_failure_leaks_no_oid(points):
    first = points.create_instance("point").oid

    def hook(draft, args):
        raise RuntimeError("no")

    points.register_init_hook("point", hook)
    with pytest.raises(HookFailure):
        points.create_instance("point")
    assert points.live_oids() == [first]
    points._init_hooks.clear()
    assert points.create_instance("point").oid == first + 1


def test_hook_count_survives_reopen(store_path):
    with open_store(store_path) as s:
        s.define_class("photo", ["filename"])
        s.register_init_hook("photo", lambda d, a: None)
        for i in range(5):
            s.create_instance("photo", {"filename": f"{i}.jpg"})
        s.commit()
        assert s.init_calls["photo"] == 5
    with open_store(store_path) as s:
        s.register_init_hook("photo", lambda d, a: None)
        assert [s.lookup_instance(o)["filename"] for o in s.extent("photo")] == [f"{i}.jpg" for i in range(5)]
        assert s.init_calls["photo"] == 0


def test_lookup_identity(points):
    h = points.create_instance("point")
    points.commit()
    assert points.lookup_instance(h.oid) is h
    assert points.lookup_instance(h.oid) is points.lookup_instance(h.oid)


def test_lookup_identity_after_reopen(store_path):
    with open_store(store_path) as s:
        s.define_class("p", ["a"])
        s.create_instance("p")
        s.commit()
    with open_store(store_path) as s:
        assert s.lookup_instance(1) is s.lookup_instance(1)
        assert not s.lookup_instance(1).loaded


def test_lookup_deleted_and_unknown(points):
    h = points.create_instance("point")
    points.commit()
    h.delete()
    points.commit()
    with pytest.raises(Deleted):
        points.lookup_instance(h.oid)
    with pytest.raises(UnknownOid):
        points.lookup_instance(999)


def test_read_write(points):
    h = points.create_instance("point")
    h.write("x", 12)
    assert h.read("x") == 12
    with pytest.raises(UnknownSlot):
        h.read("z")
    with pytest.raises(UnknownSlot):
        h.write("z", 1)


def test_read_returns_ref_without_dereferencing(session):
    session.define_class("node", ["next"])
    a = session.create_instance("node")
    b = session.create_instance("node", {"next": Ref(a.oid)})
    assert b.read("next") == Ref(a.oid)
    assert deref(session, b, "next") is a


def test_unbound_slot(session):
    session.define_class("c", ["a"])
    h = session.create_instance("c")
    with pytest.raises(UnboundSlot) as info:
        h.read("a")
    assert (info.value.class_name, info.value.slot) == ("c", "a")
    assert h.get("a", "fallback") == "fallback"
    h.write("a", 1)
    slot_unbind(h, "a")
    with pytest.raises(UnboundSlot):
        h.read("a")


def test_stale_record_read_upgrades(store_path):
    with open_store(store_path) as s:
        s.define_class("photo", ["filename"])
        s.create_instance("photo", {"filename": "1.jpg"})
        s.commit()
        s.redefine_class("photo", ["filename", SlotSpec("thumbnail", "none")])
        s.commit()
    with open_store(store_path) as s:
        h = s.lookup_instance(1)
        assert not h.loaded
        assert h.read("thumbnail") == "none"
        assert s.upgrade_counter.total == 1
        assert h.version == 2


def test_opaque_only_in_transient_slots(session):
    session.define_class("c", ["data", SlotSpec("fh", persistent=False)])
    h = session.create_instance("c")
    with pytest.raises(NonSerializable):
        h.write("data", [Opaque("file")])
    fh = Opaque("file")
    h.write("fh", fh)
    assert h.read("fh") is fh
    with pytest.raises(NonSerializable):
        session.create_instance("c", {"data": Opaque("x")})


def test_transient_dropped_on_reopen(store_path):
    with open_store(store_path) as s:
        s.define_class("c", ["a", SlotSpec("cache", persistent=False)])
        h = s.create_instance("c", {"a": 1})
        h.write("cache", "warm")
        s.commit()
        assert h.read("cache") == "warm"
    with open_store(store_path) as s:
        h = s.lookup_instance(1)
        with pytest.raises(UnboundSlot):
            h.read("cache")
        assert snapshot(h) == {"a": 1}


def test_transient_default_applies_after_reload(store_path):
    with open_store(store_path) as s:
        s.define_class("c", ["a", SlotSpec("mode", "idle", persistent=False)])
        h = s.create_instance("c")
        h.write("mode", "busy")
        s.commit()
    with open_store(store_path) as s:
        # transient values are gone; only a default from create would have
        # applied, and loading is not creating
        with pytest.raises(UnboundSlot):
            s.lookup_instance(1).read("mode")


def test_writes_copy_values(session):
    session.define_class("c", ["a"])
    h = session.create_instance("c")
    v = [1, 2]
    h.write("a", v)
    v.append(3)
    assert h.read("a") == (1, 2)


def test_delete(points):
    h = points.create_instance("point")
    points.commit()
    h.delete()
    points.commit()
    assert points.extent("point") == []
    with pytest.raises(Deleted):
        h.delete()
    with pytest.raises(Deleted):
        h.read("x")


def test_delete_uncommitted_creation(points):
    h = points.create_instance("point")
    h.delete()
    points.commit()
    assert points.extent("point") == []
    assert points.live_oids() == []


def test_delete_makes_refs_dangle(session):
    session.define_class("node", ["next"])
    b = session.create_instance("node")
    a = session.create_instance("node", {"next": Ref(b.oid)})
    session.commit()
    b.delete()
    session.commit()
    with pytest.raises(DanglingRef) as info:
        reachable_closure(session, [a.oid])
    assert (info.value.source, info.value.target) == (a.oid, b.oid)


def test_oids_never_reused(store_path):
    with open_store(store_path) as s:
        s.define_class("c", ["a"])
        a = s.create_instance("c")
        b = s.create_instance("c")
        s.commit()
        b.delete()
        s.commit()
    with open_store(store_path) as s:
        c = s.create_instance("c")
        assert c.oid > b.oid > a.oid


def test_hook_registration(points):
    calls = []
    points.register_init_hook("point", lambda d, a: calls.append(1))
    points.create_instance("point")
    assert calls == [1]
    with pytest.raises(DuplicateHook):
        points.register_init_hook("point", lambda d, a: None)
    points.register_migration_hook("point", 2, lambda d, a, x: None)
    with pytest.raises(DuplicateHook):
        points.register_migration_hook("point", 2, lambda d, a, x: None)
    with pytest.raises(UnknownClass):
        points.register_init_hook("line", lambda d, a: None)


def test_migration_hook_without_pending_records_never_runs(points):
    calls = []
    points.create_instance("point")
    points.redefine_class("point", ["x", "y", "z"])
    points.create_instance("point")
    points.commit()
    points.register_migration_hook("point", 2, lambda d, a, x: calls.append(1))
    points.register_migration_hook("point", 3, lambda d, a, x: calls.append(2))
    points.migrate_eager("point")
    assert calls == [1]


def test_access_implies_current(store_path):
    with open_store(store_path) as s:
        s.define_class("c", ["a"])
        s.create_instance("c")
        s.commit()
        for i in range(3):
            s.redefine_class("c", ["a", f"b{i}"])
        s.commit()
    with open_store(store_path) as s:
        h = s.lookup_instance(1)
        h.write("a", 1)
        assert h._record.version == 4


def test_concurrent_use_is_detected(points):
    errors = []

    def intruder():
        try:
            points.lookup_instance(1)
        except ConcurrentAccess as exc:
            errors.append(exc)

    def hook(draft, args):
        t = threading.Thread(target=intruder)
        t.start()
        t.join()

    points.register_init_hook("point", hook)
    points.create_instance("point")
    assert len(errors) == 1


def test_session_can_move_between_threads(points):
    h = points.create_instance("point")
    out = []
    t = threading.Thread(target=lambda: out.append(h.read("x")))
    t.start()
    t.join()
    assert out == [0]


def test_closed_session(store_path):
    s = open_store(store_path)
    s.define_class("c", ["a"])
    h = s.create_instance("c")
    s.close()
    with pytest.raises(SessionClosed):
        h.read("a")
    with pytest.raises(SessionClosed):
        s.commit()
