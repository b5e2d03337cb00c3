"""Handles: the in-memory face of persistent objects.

Every slot access goes through a :class:`Handle`, which loads the record on
first use, migrates it to the current class version, and tracks whether it
must be rewritten at the next commit. A session keeps exactly one handle per
oid, so ``session.lookup_instance(oid) is session.lookup_instance(oid)``.

Init hooks run once, when an object is created. Loading an existing object
from disk only decodes it.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

from . import codec
from .codec import InstanceRecord
from .errors import (
    Deleted,
    DuplicateHook,
    HookFailure,
    NonSerializable,
    UnboundSlot,
    UnknownOid,
    UnknownSlot,
)
from .migration import ensure_current
from .values import kind_of

if TYPE_CHECKING:
    from .store import Session

_LIVE, _DELETED, _GONE = "live", "deleted", "gone"


class Handle:
    """Mediator for one persistent object within one session."""

    __slots__ = ("oid", "class_name", "session", "_record", "_transient", "_dirty", "_status")

    def __init__(self, session: Session, oid: int, class_name: str, record: InstanceRecord | None = None):
        self.session = session
        self.oid = oid
        self.class_name = class_name
        self._record = record
        self._transient: dict = {}
        self._dirty = False
        self._status = _LIVE

    @property
    def loaded(self) -> bool:
        return self._record is not None

    @property
    def dirty(self) -> bool:
        return self._dirty

    @property
    def deleted(self) -> bool:
        return self._status == _DELETED

    @property
    def version(self) -> int:
        """Class version of the in-memory record (loads it if needed)."""
        return self.session._ensure_loaded(self).version

    def read(self, slot: str):
        return slot_read(self, slot)

    def write(self, slot: str, value) -> None:
        slot_write(self, slot, value)

    def delete(self) -> None:
        delete_instance(self)

    def get(self, slot: str, default=None):
        try:
            return slot_read(self, slot)
        except UnboundSlot:
            return default

    __getitem__ = read
    __setitem__ = write

    def _check_live(self) -> None:
        if self._status == _DELETED:
            raise Deleted(self.oid)
        if self._status == _GONE:
            raise UnknownOid(self.oid)

    def __repr__(self) -> str:
        state = "loaded" if self.loaded else "not loaded"
        if self._status != _LIVE:
            state = self._status
        return f"<Handle {self.class_name}#{self.oid} {state}{' dirty' if self._dirty else ''}>"


def _freeze(v):
    return codec.decode_exact(codec.encode_value(v))


def _check_storable(class_name: str, slot: str, v, persistent: bool):
    """Validate a value for a slot; return the copy to keep in memory."""
    if persistent:
        try:
            return _freeze(v)
        except NonSerializable as exc:
            raise NonSerializable((f".{slot}",) + exc.path, exc.tag) from None
    kind_of(v)
    return v


def create_instance(session: Session, class_name: str, init_args=None) -> Handle:
    """Create a new object of the current version of ``class_name``."""
    with session._guard():
        desc = session.registry.current(class_name)
        init_args = dict(init_args or {})
        for name in sorted(init_args):
            if desc.slot(name) is None:
                raise UnknownSlot(class_name, name)
        draft = {s.name: s.default for s in desc.slots if s.has_default}
        for name, v in init_args.items():
            draft[name] = _check_storable(class_name, name, v, desc.slot(name).persistent)

        oid = session._allocate_oid()
        hook = session._init_hooks.get(class_name)
        if hook is not None:
            session.init_calls[class_name] += 1
            try:
                hook(draft, dict(init_args))
                for name, v in list(draft.items()):
                    spec = desc.slot(name)
                    if spec is None:
                        raise UnknownSlot(class_name, name)
                    draft[name] = _check_storable(class_name, name, v, spec.persistent)
            except Exception as exc:
                session._release_oid(oid)
                raise HookFailure(f"init hook for {class_name!r} failed: {exc}") from exc

        persistent = desc.persistent_names
        record = InstanceRecord(oid, class_name, desc.version, {n: v for n, v in draft.items() if n in persistent})
        handle = Handle(session, oid, class_name, record)
        handle._transient = {n: v for n, v in draft.items() if n not in persistent}
        session._adopt_created(handle)
        return handle


def lookup_instance(session: Session, oid: int) -> Handle:
    with session._guard():
        handle = session._handles.get(oid)
        if handle is None:
            entry = session._index.get(oid)
            if entry is None:
                if oid in session._deleted:
                    raise Deleted(oid)
                raise UnknownOid(oid)
            handle = Handle(session, oid, entry.class_name)
            session._handles[oid] = handle
        handle._check_live()
        return handle


def slot_read(handle: Handle, slot: str):
    session = handle.session
    with session._guard():
        ensure_current(session, handle)
        spec = session.registry.current(handle.class_name).slot(slot)
        if spec is None:
            raise UnknownSlot(handle.class_name, slot)
        store = handle._record.slots if spec.persistent else handle._transient
        try:
            return store[slot]
        except KeyError:
            raise UnboundSlot(handle.class_name, slot) from None


def slot_write(handle: Handle, slot: str, value) -> None:
    session = handle.session
    with session._guard():
        ensure_current(session, handle)
        spec = session.registry.current(handle.class_name).slot(slot)
        if spec is None:
            raise UnknownSlot(handle.class_name, slot)
        value = _check_storable(handle.class_name, slot, value, spec.persistent)
        if spec.persistent:
            handle._record.slots[slot] = value
            session._mark_dirty(handle)
        else:
            handle._transient[slot] = value


def slot_unbind(handle: Handle, slot: str) -> None:
    """Remove the slot's value so that it reads as unbound."""
    session = handle.session
    with session._guard():
        ensure_current(session, handle)
        spec = session.registry.current(handle.class_name).slot(slot)
        if spec is None:
            raise UnknownSlot(handle.class_name, slot)
        if spec.persistent:
            handle._record.slots.pop(slot, None)
            session._mark_dirty(handle)
        else:
            handle._transient.pop(slot, None)


def delete_instance(handle: Handle) -> None:
    session = handle.session
    with session._guard():
        handle._check_live()
        session._stage_delete(handle)


def deref(session: Session, handle: Handle, slot: str) -> Handle:
    """Read a Ref-valued slot and return the handle it points to."""
    ref = slot_read(handle, slot)
    return lookup_instance(session, ref.oid)


def register_init_hook(session: Session, class_name: str, hook) -> None:
    with session._guard():
        session.registry.current(class_name)
        if class_name in session._init_hooks:
            raise DuplicateHook(f"init hook for {class_name!r} already registered")
        session._init_hooks[class_name] = hook


def register_migration_hook(session: Session, class_name: str, target_version: int, hook) -> None:
    with session._guard():
        session.registry.current(class_name)
        key = (class_name, target_version)
        if key in session._migration_hooks:
            raise DuplicateHook(f"migration hook for {class_name!r} v{target_version} already registered")
        session._migration_hooks[key] = hook


def snapshot(handle: Handle) -> dict:
    """Current persistent and transient slot values, migrated; unbound slots absent."""
    session = handle.session
    with session._guard():
        ensure_current(session, handle)
        out = dict(handle._record.slots)
        out.update(handle._transient)
        return out

