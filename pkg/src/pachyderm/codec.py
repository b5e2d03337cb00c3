"""Canonical binary encoding of values and instance records.

Wire format, one tag byte then payload::

    0x00 Unit     -
    0x01 Bool     1 byte, 0x00 / 0x01
    0x02 Int      zigzag LEB128
    0x03 Float    8 bytes IEEE 754 big-endian
    0x04 Text     LEB128 byte length + UTF-8
    0x05 Bytes    LEB128 length + raw
    0x06 Symbol   LEB128 length + UTF-8
    0x07 List     LEB128 count + elements
    0x08 Map      LEB128 count + key, value pairs; keys ascending by encoding
    0x09 Set      LEB128 count + members ascending by encoding
    0x0A Ref      8 bytes oid big-endian

Record: oid (8 bytes BE), class name (LEB128 length + UTF-8), class version
(LEB128), slot count (LEB128), then per slot its name and encoded value, slots
in ascending name-byte order.

The loops live in a compiled kernel when one is available. Set
``PACHYDERM_PURE_PYTHON=1`` to force the pure-Python kernel.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from . import _kernel_py
from .errors import NonCanonical, NonSerializable
from .values import find_opaque


def _load_kernel():
    if os.environ.get("PACHYDERM_PURE_PYTHON"):
        return _kernel_py
    try:
        from . import _kernel
    except ImportError:
        return _kernel_py
    return _kernel


kernel = _load_kernel()
BACKEND: str = kernel.NAME

encode_uvarint = kernel.encode_uvarint
decode_uvarint = kernel.decode_uvarint


@dataclass
class InstanceRecord:
    """Persisted snapshot of one object. Unbound slots are absent from ``slots``."""

    oid: int
    class_name: str
    version: int
    slots: dict = field(default_factory=dict)

    def copy(self) -> InstanceRecord:
        return InstanceRecord(self.oid, self.class_name, self.version, dict(self.slots))


def _with_path(exc, v, prefix=()):
    found = find_opaque(v)
    path = found[0] if found else exc.path
    return NonSerializable(prefix + tuple(path), exc.tag)


def encode_value(v) -> bytes:
    """Encode ``v`` canonically. Raises NonSerializable if any Opaque is reachable."""
    try:
        return kernel.encode_value(v)
    except NonSerializable as exc:
        raise _with_path(exc, v) from None


def decode_value(buf, offset: int = 0):
    """Decode one value at ``offset``; return ``(value, bytes_consumed)``."""
    return kernel.decode_value(buf, offset)


def decode_exact(buf):
    """Decode a buffer holding exactly one value."""
    v, n = kernel.decode_value(buf, 0)
    if n != len(buf):
        raise NonCanonical(n, f"{len(buf) - n} trailing bytes after value")
    return v


def encode_record(record: InstanceRecord) -> bytes:
    slots = record.slots if type(record.slots) is dict else dict(record.slots)
    try:
        return kernel.encode_record(record.oid, record.class_name, record.version, slots)
    except NonSerializable as exc:
        for name, v in slots.items():
            found = find_opaque(v)
            if found:
                raise NonSerializable((f".{name}",) + tuple(found[0]), found[1].tag) from None
        raise


def decode_record_at(buf, offset: int = 0):
    """Decode a record at ``offset``; return ``(record, bytes_consumed)``."""
    oid, class_name, version, slots, n = kernel.decode_record(buf, offset)
    return InstanceRecord(oid, class_name, version, slots), n


def decode_record(buf) -> InstanceRecord:
    record, n = decode_record_at(buf, 0)
    if n != len(buf):
        raise NonCanonical(n, f"{len(buf) - n} trailing bytes after record")
    return record


def decode_record_header(buf, offset: int = 0):
    """Return ``(oid, class_name, version)`` without decoding slot values."""
    oid, class_name, version, _ = kernel.decode_record_header(buf, offset)
    return oid, class_name, version
