"""Object graphs: reachability, identity-preserving export/import, isomorphism.

A graph blob is::

    "PGRF" | LEB128 descriptor count | descriptors | LEB128 record count | records

Records carry dense ids 1..n in their oid fields (and in their Refs). Roots
are numbered first, in the order given, then the rest in breadth-first order,
so an importer can recover the roots as ids ``1..len(roots)``.
"""

from __future__ import annotations

from collections import deque

from . import codec
from .codec import InstanceRecord
from .errors import DanglingRef, DecodeError, Malformed, SchemaConflict
from .objects import Handle
from .schema import decode_descriptor_at, descriptors_equal, encode_descriptor
from .values import Kind, iter_refs, kind_of, map_refs, scalar_key, _index_of_map, _index_of_set

MAGIC = b"PGRF"


def _targets(session, oid):
    # slot values are stored in canonical form; visiting slots in name order
    # makes the traversal (and so the dense numbering) a function of content
    slots = session._record_of(oid).slots
    for name in sorted(slots):
        yield from iter_refs(slots[name])


def reachable_closure(session, roots, *, on_visit=None) -> list[int]:
    """Oids reachable from ``roots`` through Ref edges, roots included.

    Returned in discovery order (roots first, then breadth first). ``on_visit``
    is called once per expanded oid.
    """
    with session._guard():
        order: list[int] = []
        seen: set[int] = set()
        queue: deque[int] = deque()
        for root in roots:
            session.lookup_instance(root)
            if root not in seen:
                seen.add(root)
                order.append(root)
                queue.append(root)
        while queue:
            oid = queue.popleft()
            if on_visit is not None:
                on_visit(oid)
            for target in _targets(session, oid):
                if target in seen:
                    continue
                if not session._is_live(target):
                    raise DanglingRef(oid, target)
                seen.add(target)
                order.append(target)
                queue.append(target)
        return order


def export_subgraph(session, roots) -> bytes:
    """Serialize the closure of ``roots`` with dense ids and its schemas."""
    with session._guard():
        order = reachable_closure(session, roots)
        dense = {oid: i for i, oid in enumerate(order, start=1)}
        classes = sorted({session._record_of(oid).class_name for oid in order})
        out = bytearray(MAGIC)
        descriptors = [d for name in classes for d in session.registry.history(name)]
        out += codec.encode_uvarint(len(descriptors))
        for desc in descriptors:
            out += encode_descriptor(desc)
        out += codec.encode_uvarint(len(order))
        for oid in order:
            record = session._record_of(oid)
            slots = {n: map_refs(v, dense.__getitem__) for n, v in record.slots.items()}
            out += codec.encode_record(InstanceRecord(dense[oid], record.class_name, record.version, slots))
        return bytes(out)


def parse_blob(blob):
    """Return ``(descriptors, records)`` from a graph blob; raise Malformed."""
    if bytes(blob[:4]) != MAGIC:
        raise Malformed("graph blob does not start with PGRF")
    try:
        pos = 4
        count, used = codec.decode_uvarint(blob, pos)
        pos += used
        descriptors = []
        for _ in range(count):
            desc, used = decode_descriptor_at(blob, pos)
            pos += used
            descriptors.append(desc)
        count, used = codec.decode_uvarint(blob, pos)
        pos += used
        records = []
        for _ in range(count):
            record, used = codec.decode_record_at(blob, pos)
            pos += used
            records.append(record)
    except DecodeError as exc:
        raise Malformed(f"graph blob: {exc}") from exc
    if pos != len(blob):
        raise Malformed(f"graph blob has {len(blob) - pos} trailing bytes")

    histories: dict[str, list] = {}
    for desc in descriptors:
        history = histories.setdefault(desc.name, [])
        if desc.version != len(history) + 1:
            raise Malformed(f"descriptor {desc.name!r} v{desc.version} out of sequence")
        history.append(desc)
    n = len(records)
    for i, record in enumerate(records, start=1):
        if record.oid != i:
            raise Malformed(f"record {i} carries id {record.oid}")
        for value in record.slots.values():
            for target in iter_refs(value):
                if not 1 <= target <= n:
                    raise Malformed(f"record {i} refers to id {target} outside the blob")
    return histories, records


def import_subgraph(session, blob) -> dict[int, int]:
    """Stage the blob's objects under fresh oids; return ``{dense_id: oid}``.

    Imported objects are deserialized, not created: init hooks do not run.
    """
    with session._guard():
        histories, records = parse_blob(blob)
        registry = session.registry
        additions = []
        for name, history in histories.items():
            mine = registry.history(name) if name in registry else []
            for desc in history[: len(mine)]:
                if not descriptors_equal(desc, mine[desc.version - 1]):
                    raise SchemaConflict(f"class {name!r} v{desc.version} differs from this store's")
            additions.append(history[len(mine):])
        for record in records:
            known = len(histories.get(record.class_name, ()))
            if record.class_name in registry:
                known = max(known, registry.current(record.class_name).version)
            if not 1 <= record.version <= known:
                raise Malformed(f"record {record.oid} has unknown class version {record.class_name} v{record.version}")

        for new in additions:
            for desc in new:
                if desc.version == 1:
                    registry.define_class(desc.name, desc.slots)
                else:
                    registry.redefine_class(desc.name, desc.slots)
        mapping = {record.oid: session._allocate_oid() for record in records}
        for record in records:
            slots = {n: map_refs(v, mapping.__getitem__) for n, v in record.slots.items()}
            fresh = InstanceRecord(mapping[record.oid], record.class_name, record.version, slots)
            session._adopt_created(Handle(session, fresh.oid, fresh.class_name, fresh))
        return mapping


def graphs_isomorphic(s1, roots1, s2, roots2) -> bool:
    """Whether the closures of two root lists match object for object.

    Roots are paired in order; from there the bijection is forced by the
    slot structure, so one parallel traversal decides it.
    """
    roots1, roots2 = list(roots1), list(roots2)
    for s, roots in ((s1, roots1), (s2, roots2)):
        for root in roots:
            s.lookup_instance(root)
    if len(roots1) != len(roots2):
        return False
    fwd: dict[int, int] = {}
    back: dict[int, int] = {}
    queue: deque[tuple[int, int]] = deque()

    source = [0, 0]

    def pair(a: int, b: int) -> bool:
        if a in fwd or b in back:
            return fwd.get(a) == b and back.get(b) == a
        if not s1._is_live(a):
            raise DanglingRef(source[0], a)
        if not s2._is_live(b):
            raise DanglingRef(source[1], b)
        fwd[a] = b
        back[b] = a
        queue.append((a, b))
        return True

    for a, b in zip(roots1, roots2):
        if not pair(a, b):
            return False
    while queue:
        a, b = queue.popleft()
        source[:] = [a, b]
        r1, r2 = s1._record_of(a), s2._record_of(b)
        if r1.class_name != r2.class_name or r1.version != r2.version:
            return False
        if r1.slots.keys() != r2.slots.keys():
            return False
        for name in sorted(r1.slots):
            if not _correspond(r1.slots[name], r2.slots[name], pair):
                return False
    return True


def _correspond(a, b, pair) -> bool:
    ka = kind_of(a)
    if ka is not kind_of(b):
        return False
    if ka is Kind.REF:
        return pair(a.oid, b.oid)
    if ka is Kind.LIST:
        return len(a) == len(b) and all(_correspond(x, y, pair) for x, y in zip(a, b))
    if ka is Kind.MAP:
        ia, ib = _index_of_map(a), _index_of_map(b)
        if ia.keys() != ib.keys():
            return False
        return all(_correspond(va, ib[k][1], pair) for k, (_, va) in ia.items())
    if ka is Kind.SET:
        return _index_of_set(a).keys() == _index_of_set(b).keys()
    if ka is Kind.OPAQUE:
        return a.tag == b.tag
    return scalar_key(a) == scalar_key(b)

