"""Pure-Python codec kernel.

Reference implementation of the hot encode/decode loops. ``_kernel.pyx``
implements the same functions; :mod:`pachyderm.codec` picks one at import.
"""

import struct

from .errors import (
    DuplicateSlot,
    InvalidValue,
    MalformedUtf8,
    NonCanonical,
    NonSerializable,
    TooDeep,
    Truncated,
    UnknownTag,
)
from .values import INT_MAX, INT_MIN, Map, Opaque, Ref, Set, Symbol, kind_of, scalar_key

NAME = "python"
MAX_DEPTH = 512

_D = struct.Struct(">d")
_Q = struct.Struct(">Q")
_U64 = (1 << 64) - 1

T_UNIT, T_BOOL, T_INT, T_FLOAT, T_TEXT, T_BYTES, T_SYMBOL, T_LIST, T_MAP, T_SET, T_REF = range(11)


# -- varints ----------------------------------------------------------------

def encode_uvarint(n):
    if n < 0 or n > _U64:
        raise InvalidValue(f"varint out of range: {n}")
    out = bytearray()
    while n > 0x7F:
        out.append((n & 0x7F) | 0x80)
        n >>= 7
    out.append(n)
    return bytes(out)


def _read_uvarint(buf, pos, end):
    start = pos
    result = 0
    shift = 0
    while True:
        if pos >= end:
            raise Truncated(start, "varint runs past end of input")
        b = buf[pos]
        pos += 1
        if shift == 63 and b > 1:
            raise NonCanonical(start, "varint exceeds 64 bits")
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            if b == 0 and pos - start > 1:
                raise NonCanonical(start, "overlong varint")
            return result, pos
        shift += 7


def decode_uvarint(buf, offset=0):
    n, pos = _read_uvarint(buf, offset, len(buf))
    return n, pos - offset


# -- encoding ---------------------------------------------------------------

def _put_uvarint(out, n):
    while n > 0x7F:
        out.append((n & 0x7F) | 0x80)
        n >>= 7
    out.append(n)


def _put_text(out, s):
    try:
        raw = s.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise InvalidValue(f"text is not valid unicode: {exc}") from None
    _put_uvarint(out, len(raw))
    out += raw


def _encode_scalar_alone(v):
    out = bytearray()
    _enc(out, v, 0)
    return bytes(out)


def _sorted_unique(encoded, what):
    encoded.sort(key=lambda e: e[0])
    for i in range(1, len(encoded)):
        if encoded[i][0] == encoded[i - 1][0]:
            raise InvalidValue(f"duplicate {what} under value equality")
    return encoded


def _enc(out, v, depth):
    if depth > MAX_DEPTH:
        raise InvalidValue(f"value nested deeper than {MAX_DEPTH}")
    t = type(v)
    if t is int:
        if v < INT_MIN or v > INT_MAX:
            raise InvalidValue(f"integer {v} does not fit in 64 bits")
        out.append(T_INT)
        _put_uvarint(out, ((v << 1) ^ (v >> 63)) & _U64)
    elif t is str:
        out.append(T_TEXT)
        _put_text(out, v)
    elif t is list or t is tuple:
        out.append(T_LIST)
        _put_uvarint(out, len(v))
        for item in v:
            _enc(out, item, depth + 1)
    elif t is Ref:
        out.append(T_REF)
        out += _Q.pack(v.oid)
    elif v is None:
        out.append(T_UNIT)
    elif t is bool:
        out.append(T_BOOL)
        out.append(1 if v else 0)
    elif t is float:
        out.append(T_FLOAT)
        out += _D.pack(v)
    elif t is Opaque:
        raise NonSerializable((), v.tag)
    else:
        k = kind_of(v)
        if k == T_BYTES:
            out.append(T_BYTES)
            _put_uvarint(out, len(v))
            out += v
        elif k == T_SYMBOL:
            out.append(T_SYMBOL)
            _put_text(out, v.name)
        elif k == T_MAP:
            entries = []
            for key, val in v.items():
                scalar_key(key)  # rejects composite keys
                entries.append((_encode_scalar_alone(key), val))
            _sorted_unique(entries, "map key")
            out.append(T_MAP)
            _put_uvarint(out, len(entries))
            for kb, val in entries:
                out += kb
                _enc(out, val, depth + 1)
        elif k == T_SET:
            members = []
            for m in v:
                scalar_key(m)
                members.append((_encode_scalar_alone(m),))
            _sorted_unique(members, "set member")
            out.append(T_SET)
            _put_uvarint(out, len(members))
            for (mb,) in members:
                out += mb
        elif k == T_INT:
            _enc(out, int(v), depth)
        elif k == T_FLOAT:
            _enc(out, float(v), depth)
        elif k == T_TEXT:
            _enc(out, str(v), depth)
        elif k == T_LIST:
            _enc(out, tuple(v), depth)
        else:  # pragma: no cover - kind_of covers every kind above
            raise InvalidValue(f"cannot encode {t.__name__}")


def encode_value(v):
    out = bytearray()
    _enc(out, v, 0)
    return bytes(out)


# -- decoding ---------------------------------------------------------------

def _read_text(buf, pos, end, start):
    n, pos = _read_uvarint(buf, pos, end)
    if n > end - pos:
        raise Truncated(start, "string runs past end of input")
    try:
        s = bytes(buf[pos:pos + n]).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedUtf8(pos + exc.start, exc.reason) from None
    return s, pos + n


def _dec(buf, pos, end, depth):
    if pos >= end:
        raise Truncated(pos, "expected a tag byte")
    if depth > MAX_DEPTH:
        raise TooDeep(pos, f"nesting deeper than {MAX_DEPTH}")
    start = pos
    tag = buf[pos]
    pos += 1
    if tag == T_UNIT:
        return None, pos
    if tag == T_BOOL:
        if pos >= end:
            raise Truncated(start, "bool payload missing")
        b = buf[pos]
        if b > 1:
            raise NonCanonical(start, "bool payload must be 0x00 or 0x01")
        return b == 1, pos + 1
    if tag == T_INT:
        z, pos = _read_uvarint(buf, pos, end)
        return (z >> 1) ^ -(z & 1), pos
    if tag == T_FLOAT:
        if end - pos < 8:
            raise Truncated(start, "float payload needs 8 bytes")
        return _D.unpack_from(buf, pos)[0], pos + 8
    if tag == T_TEXT:
        return _read_text(buf, pos, end, start)
    if tag == T_BYTES:
        n, pos = _read_uvarint(buf, pos, end)
        if n > end - pos:
            raise Truncated(start, "bytes run past end of input")
        return bytes(buf[pos:pos + n]), pos + n
    if tag == T_SYMBOL:
        s, pos = _read_text(buf, pos, end, start)
        return Symbol(s), pos
    if tag == T_LIST:
        n, pos = _read_uvarint(buf, pos, end)
        if n > end - pos:
            raise Truncated(start, "list count exceeds remaining input")
        items = []
        for _ in range(n):
            item, pos = _dec(buf, pos, end, depth + 1)
            items.append(item)
        return tuple(items), pos
    if tag == T_MAP:
        n, pos = _read_uvarint(buf, pos, end)
        if n > (end - pos) // 2:
            raise Truncated(start, "map count exceeds remaining input")
        index = {}
        prev = None
        for _ in range(n):
            kstart = pos
            key, pos = _dec_scalar(buf, pos, end, depth)
            kb = bytes(buf[kstart:pos])
            if prev is not None and kb <= prev:
                raise NonCanonical(kstart, "map keys out of order or duplicated")
            prev = kb
            val, pos = _dec(buf, pos, end, depth + 1)
            index[scalar_key(key)] = (key, val)
        return Map._trusted(index), pos
    if tag == T_SET:
        n, pos = _read_uvarint(buf, pos, end)
        if n > end - pos:
            raise Truncated(start, "set count exceeds remaining input")
        index = {}
        prev = None
        for _ in range(n):
            mstart = pos
            member, pos = _dec_scalar(buf, pos, end, depth)
            mb = bytes(buf[mstart:pos])
            if prev is not None and mb <= prev:
                raise NonCanonical(mstart, "set members out of order or duplicated")
            prev = mb
            index[scalar_key(member)] = member
        return Set._trusted(index), pos
    if tag == T_REF:
        if end - pos < 8:
            raise Truncated(start, "ref payload needs 8 bytes")
        oid = _Q.unpack_from(buf, pos)[0]
        if oid == 0:
            raise NonCanonical(start, "oid 0 is reserved")
        return Ref(oid), pos + 8
    raise UnknownTag(tag, start)


def _dec_scalar(buf, pos, end, depth):
    if pos < end and T_SYMBOL < buf[pos] <= T_REF:
        raise NonCanonical(pos, "map keys and set members must be scalars")
    return _dec(buf, pos, end, depth + 1)


def decode_value(buf, offset=0):
    if offset < 0 or offset > len(buf):
        raise Truncated(offset, "offset outside input")
    v, pos = _dec(buf, offset, len(buf), 0)
    return v, pos - offset


# -- records ----------------------------------------------------------------

def encode_record(oid, class_name, version, slots):
    """Record layout: oid, class name, version, then slots in name-byte order."""
    if not 0 <= oid <= _U64:
        raise InvalidValue(f"oid out of range: {oid}")
    out = bytearray(_Q.pack(oid))
    _put_text(out, class_name)
    _put_uvarint(out, version)
    named = []
    for name, v in slots.items():
        try:
            named.append((name.encode("utf-8"), name, v))
        except UnicodeEncodeError as exc:
            raise InvalidValue(f"slot name is not valid unicode: {exc}") from None
    named.sort(key=lambda e: e[0])
    _put_uvarint(out, len(named))
    for raw, name, v in named:
        _put_uvarint(out, len(raw))
        out += raw
        _enc(out, v, 0)
    return bytes(out)


def decode_record_header(buf, offset=0):
    """Return ``(oid, class_name, version, pos)`` where ``pos`` is the offset of
    the slot count."""
    end = len(buf)
    if end - offset < 8:
        raise Truncated(offset, "record oid needs 8 bytes")
    oid = _Q.unpack_from(buf, offset)[0]
    class_name, pos = _read_text(buf, offset + 8, end, offset + 8)
    version, pos = _read_uvarint(buf, pos, end)
    return oid, class_name, version, pos


def decode_record(buf, offset=0):
    """Return ``(oid, class_name, version, slots, consumed)``."""
    end = len(buf)
    oid, class_name, version, pos = decode_record_header(buf, offset)
    n, pos = _read_uvarint(buf, pos, end)
    if n > end - pos:
        raise Truncated(pos, "slot count exceeds remaining input")
    slots = {}
    prev = None
    for _ in range(n):
        sstart = pos
        ln, pos = _read_uvarint(buf, pos, end)
        if ln > end - pos:
            raise Truncated(sstart, "slot name runs past end of input")
        raw = bytes(buf[pos:pos + ln])
        if prev is not None and raw <= prev:
            if raw == prev:
                raise DuplicateSlot(sstart, f"slot {raw!r} appears twice")
            raise NonCanonical(sstart, "slots out of name order")
        prev = raw
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedUtf8(pos + exc.start, exc.reason) from None
        pos += ln
        slots[name], pos = _dec(buf, pos, end, 0)
    return oid, class_name, version, slots, pos - offset
