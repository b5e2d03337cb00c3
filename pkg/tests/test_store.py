import json
import os
import shutil
import struct

import pytest

from pachyderm import log
from pachyderm.errors import BadMagic, CorruptStore, DirtySession, IoFailure, Locked, UnknownOid
from pachyderm.graph import graphs_isomorphic
from pachyderm.schema import SlotSpec, encode_descriptor
from pachyderm.store import open_store
from pachyderm.values import Ref


def test_fresh_store(store_path):
    with open_store(store_path) as s:
        assert s.info()["classes"] == 0 and s.info()["objects"] == 0
        assert s.sequence == 1
    with open(store_path, "rb") as fh:
        data = fh.read()
    assert data[:16] == b"PCHYDRM1\x00\x01" + b"\x00" * 6
    # one commit frame: length 8, kind 5, seq 1, crc
    assert data[16:21] == b"\x00\x00\x00\x08\x05"
    assert struct.unpack(">Q", data[21:29])[0] == 1
    assert len(data) == 16 + 4 + 1 + 8 + 4


def test_bad_magic(tmp_path):
    p = tmp_path / "x.pdb"
    p.write_bytes(b"NOTASTORE-------")
    with pytest.raises(BadMagic):
        open_store(str(p))
    assert not os.path.exists(str(p) + ".lock")


def test_empty_file_is_an_empty_store(tmp_path):
    p = tmp_path / "x.pdb"
    p.write_bytes(b"")
    with open_store(str(p)) as s:
        assert s.sequence == 0
        s.define_class("c", ["a"])
        s.commit()
    with open_store(str(p)) as s:
        assert s.class_names() == ["c"]


def test_commit_and_reopen(store_path):
    with open_store(store_path) as s:
        s.define_class("c", ["a"])
        h = s.create_instance("c", {"a": "v"})
        first = s.commit()
        h.write("a", "w")
        second = s.commit()
        assert second > first
        assert s.commit() == second  # empty commit is a no-op
    with open_store(store_path) as s:
        assert s.lookup_instance(1)["a"] == "w"
        assert s.sequence == second


def test_rollback(session):
    session.define_class("c", ["a"])
    h = session.create_instance("c", {"a": 1})
    session.commit()
    h.write("a", 2)
    session.rollback()
    assert h.read("a") == 1
    n = session.create_instance("c")
    session.rollback()
    with pytest.raises(UnknownOid):
        session.lookup_instance(n.oid)
    session.rollback()
    assert session.lookup_instance(h.oid) is h


def test_rollback_discards_schema_and_deletes(session):
    session.define_class("c", ["a"])
    h = session.create_instance("c")
    session.commit()
    h.delete()
    session.redefine_class("c", ["b"])
    session.define_class("d", ["x"])
    session.rollback()
    assert session.class_names() == ["c"]
    assert session.get_descriptor("c").version == 1
    assert not session.lookup_instance(h.oid).deleted
    assert session.extent("c") == [h.oid]


def test_compact_keeps_latest(store_path):
    with open_store(store_path) as s:
        s.define_class("c", ["a"])
        h = s.create_instance("c", {"a": 0})
        s.commit()
        for i in range(100):
            h.write("a", i + 1)
            s.commit()
        old, new = s.compact()
        assert new < old
        assert h.read("a") == 100
    with open(store_path, "rb") as fh:
        data = fh.read()
    writes = [f for _, f, p in log.walk_frames(data) if f.kind == log.INSTANCE_WRITE]
    assert len(writes) == 1
    with open_store(store_path) as s:
        assert s.lookup_instance(1)["a"] == 100
        assert s.sequence == 102


def test_compact_preserves_graph(tmp_path):
    path = str(tmp_path / "a.pdb")
    copy = str(tmp_path / "b.pdb")
    with open_store(path) as s:
        s.define_class("node", ["label", "next"])
        for i in range(1, 6):
            s.create_instance("node", {"label": i, "next": Ref(i % 5 + 1)})
        s.commit()
        s.redefine_class("node", ["label", "next", SlotSpec("w", 1)])
        s.lookup_instance(2).write("label", "two")
        s.commit()
        s.lookup_instance(5).delete()
        s.lookup_instance(4).write("next", Ref(1))
        s.commit()
    shutil.copy(path, copy)
    with open_store(path) as s:
        s.compact()
    with open_store(path) as a, open_store(copy) as b:
        assert a.live_oids() == b.live_oids()
        assert graphs_isomorphic(a, a.live_oids(), b, b.live_oids())
        assert [encode_descriptor(d) for d in a.registry.history("node")] == [
            encode_descriptor(d) for d in b.registry.history("node")
        ]


def test_compact_with_staged_changes(session):
    session.define_class("c", ["a"])
    with pytest.raises(DirtySession):
        session.compact()


def test_compact_failure_leaves_original(store_path, monkeypatch):
    with open_store(store_path) as s:
        s.define_class("c", ["a"])
        s.create_instance("c", {"a": 1})
        s.commit()
        before = open(store_path, "rb").read()
        monkeypatch.setattr(os, "replace", _fail)
        with pytest.raises(IoFailure):
            s.compact()
        monkeypatch.undo()
        assert open(store_path, "rb").read() == before
        assert not os.path.exists(store_path + ".compact")


def _fail(*args, **kwargs):
    raise OSError(5, "simulated I/O error")


def test_commit_io_failure_keeps_staged_changes(store_path, monkeypatch):
    with open_store(store_path) as s:
        s.define_class("c", ["a"])
        h = s.create_instance("c", {"a": 1})
        s.commit()
        size = os.path.getsize(store_path)
        h.write("a", 2)
        monkeypatch.setattr(os, "fsync", _fail)
        with pytest.raises(IoFailure):
            s.commit()
        monkeypatch.undo()
        assert os.path.getsize(store_path) == size
        assert h.dirty
        s.commit()
    with open_store(store_path) as s:
        assert s.lookup_instance(1)["a"] == 2


def test_lock(store_path):
    s = open_store(store_path)
    try:
        with pytest.raises(Locked):
            open_store(store_path)
    finally:
        s.close()
    open_store(store_path).close()


def test_stale_lock_is_replaced(store_path):
    open_store(store_path).close()
    with open(store_path + ".lock", "w") as fh:
        json.dump({"pid": os.getpid(), "start": 1.0}, fh)  # our pid, wrong start time
    open_store(store_path).close()
    assert not os.path.exists(store_path + ".lock")


def test_force_unlock(store_path):
    s = open_store(store_path)
    try:
        t = open_store(store_path, force_unlock=True)
        t.close()
    finally:
        s._lock.held = False
        s.close()


def _three_commits(path):
    with open_store(path) as s:
        s.define_class("c", ["a", "next"])
        a = s.create_instance("c", {"a": 1})
        s.commit()
        b = s.create_instance("c", {"a": 2, "next": Ref(a.oid)})
        s.commit()
        a.write("a", "changed")
        s.commit()


def test_torn_tail_is_ignored_then_truncated(store_path):
    _three_commits(store_path)
    full = os.path.getsize(store_path)
    with open(store_path, "ab") as fh:
        fh.write(b"\x00\x00\x00\x10\x03partial")
    with open_store(store_path) as s:
        assert s.lookup_instance(1)["a"] == "changed"
        assert [f.kind for f in s.verify()] == ["TruncatedTail"]
        s.lookup_instance(2).write("a", 3)
        s.commit()
    with open_store(store_path) as s:
        assert s.verify().ok
        assert s.lookup_instance(2)["a"] == 3
    assert os.path.getsize(store_path) > full


def test_uncommitted_frames_are_ignored(store_path):
    _three_commits(store_path)
    with open_store(store_path) as s:
        rec = s._read_committed(1)
    from pachyderm import codec

    rec.slots["a"] = "uncommitted"
    with open(store_path, "ab") as fh:
        fh.write(log.frame(log.INSTANCE_WRITE, codec.encode_record(rec)))
    with open_store(store_path) as s:
        assert s.lookup_instance(1)["a"] == "changed"
        assert s.verify().kinds() == ["UncommittedTail"]


def test_mid_log_corruption_makes_store_read_only(store_path):
    _three_commits(store_path)
    data = bytearray(open(store_path, "rb").read())
    frames = [f for _, f, _ in log.walk_frames(bytes(data))]
    target = frames[2]  # an early frame with data after it
    data[target.payload_offset] ^= 0x01
    open(store_path, "wb").write(bytes(data))
    with open_store(store_path) as s:
        assert s.damaged
        report = s.verify()
        assert report.kinds() == ["CrcMismatch"]
        with pytest.raises(CorruptStore):
            s.commit()
        with pytest.raises(CorruptStore):
            s.compact()


def test_verify_fresh(session):
    assert session.verify().ok


def test_verify_dangling(session):
    session.define_class("n", ["next"])
    b = session.create_instance("n")
    session.create_instance("n", {"next": Ref(b.oid)})
    session.commit()
    b.delete()
    session.commit()
    report = session.verify()
    assert report.kinds() == ["DanglingRef"]
    assert str(report.findings[0]) == "DanglingRef from=2 to=1"


def test_verify_bit_flip(store_path):
    _three_commits(store_path)
    data = bytearray(open(store_path, "rb").read())
    last_write = [f for _, f, _ in log.walk_frames(bytes(data)) if f.kind == log.INSTANCE_WRITE][-1]
    data[last_write.payload_offset + 3] ^= 0x40
    open(store_path, "wb").write(bytes(data))
    with open_store(store_path) as s:
        report = s.verify()
    assert report.kinds() == ["CrcMismatch"]
    assert f"offset={last_write.offset}" in str(report.findings[0])


def test_durability_byte_level(tmp_path):
    path = str(tmp_path / "d.pdb")
    with open_store(path) as s:
        s.define_class("c", ["a"])
        s.create_instance("c", {"a": [1, 2.5, "x"]})
        s.commit()
        expected = s._read_committed(1)
    with open_store(path) as s:
        got = s._read_committed(1)
    assert got == expected


def test_compaction_never_grows_with_superseded_records(store_path):
    with open_store(store_path) as s:
        s.define_class("c", ["a"])
        h = s.create_instance("c", {"a": 1})
        s.commit()
        h.write("a", 2)
        s.commit()
        old, new = s.compact()
    assert new <= old
