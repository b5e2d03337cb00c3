"""Bringing instance records up to the current class version.

Upgrades are stepwise: a record at version 1 of a class now at version 3 goes
through 1->2 and then 2->3, and each step runs the hook registered for its
target version, so a hook only ever sees the diff it was written against.
"""

from __future__ import annotations

import logging
from collections import Counter
from typing import TYPE_CHECKING

from . import codec
from .codec import InstanceRecord
from .errors import HookFailure, UnknownSlot, VersionSkew
from .schema import ClassDescriptor, class_diff

if TYPE_CHECKING:
    from .objects import Handle
    from .store import Session

log = logging.getLogger(__name__)


class UpgradeCounter(Counter):
    """Per-session tally of record version steps, keyed by class name."""

    @property
    def total(self) -> int:
        return sum(self.values())


def upgrade_record(record: InstanceRecord, old: ClassDescriptor, new: ClassDescriptor, hook=None) -> InstanceRecord:
    """Upgrade ``record`` by exactly one version step.

    Retained slots are copied, added slots take their constant default (or stay
    unbound), discarded values are handed to ``hook(draft, added, discarded)``
    which may mutate ``draft``. The input record is never modified.
    """
    if old.name != new.name or record.class_name != old.name:
        raise VersionSkew(f"cannot upgrade {record.class_name!r} with descriptors of {old.name!r}/{new.name!r}")
    if record.version != old.version or new.version != old.version + 1:
        raise VersionSkew(
            f"record of {record.class_name!r} at v{record.version} cannot go v{old.version}->v{new.version}"
        )
    diff = class_diff(old, new)
    keep = new.persistent_names
    discarded = {n: record.slots[n] for n in diff.discarded if n in record.slots}
    draft = {n: v for n, v in record.slots.items() if n in diff.retained and n in keep}
    for name in sorted(diff.added):
        spec = new.slot(name)
        if spec.persistent and spec.has_default:
            draft[name] = spec.default
    if hook is not None:
        try:
            hook(draft, sorted(diff.added), discarded)
            draft = _validated(draft, new)
        except Exception as exc:
            raise HookFailure(
                f"migration hook for {new.name!r} v{new.version} failed on oid {record.oid}: {exc}"
            ) from exc
    return InstanceRecord(record.oid, record.class_name, new.version, draft)


def _validated(draft, desc: ClassDescriptor) -> dict:
    out = {}
    keep = desc.persistent_names
    for name, v in draft.items():
        if name not in keep:
            raise UnknownSlot(desc.name, name)
        out[name] = codec.decode_exact(codec.encode_value(v))
    return out


def ensure_current(session: Session, handle: Handle) -> int:
    """Upgrade the handle's record to the current class version.

    Returns the number of steps applied. On hook failure the handle keeps the
    last version it reached and the HookFailure propagates.
    """
    with session._guard():
        handle._check_live()
        record = session._ensure_loaded(handle)
        registry = session.registry
        target = registry.current(handle.class_name).version
        if record.version > target:
            raise VersionSkew(f"oid {handle.oid} is at v{record.version}, class is at v{target}")
        steps = 0
        while record.version < target:
            old = registry.get_descriptor(handle.class_name, record.version)
            new = registry.get_descriptor(handle.class_name, record.version + 1)
            hook = session._migration_hooks.get((handle.class_name, new.version))
            lost = hook is None and any(n not in new.slot_names for n in record.slots)
            record = upgrade_record(record, old, new, hook)
            if lost:
                _warn_default_only(session, new)
            handle._record = record
            for name in list(handle._transient):
                spec = new.slot(name)
                if spec is None or spec.persistent:
                    del handle._transient[name]
            session._mark_dirty(handle)
            session.upgrade_counter[handle.class_name] += 1
            steps += 1
        return steps


def _warn_default_only(session: Session, desc: ClassDescriptor) -> None:
    key = (desc.name, desc.version)
    if key not in session._warned:
        session._warned.add(key)
        log.warning(
            "class %s v%d discards slots and no migration hook is registered; "
            "discarded values are dropped",
            desc.name,
            desc.version,
        )


def extent(session: Session, class_name: str) -> list[int]:
    """Live oids of ``class_name`` at any version, ascending."""
    with session._guard():
        session.registry.current(class_name)
        oids = set(session._extents.get(class_name, ()))
        oids.update(o for o, c in session._created.items() if c == class_name)
        oids.difference_update(session._tombstones)
        return sorted(oids)


def migrate_eager(session: Session, class_name: str) -> int:
    """Upgrade every instance of ``class_name``; return how many needed it."""
    with session._guard():
        upgraded = 0
        for oid in extent(session, class_name):
            handle = session.lookup_instance(oid)
            try:
                steps = ensure_current(session, handle)
            except HookFailure as exc:
                exc.completed = upgraded
                raise
            if steps:
                upgraded += 1
        return upgraded
