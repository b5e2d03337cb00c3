# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled codec kernel. Same contract as ``_kernel_py``."""

from cpython.bytes cimport PyBytes_FromStringAndSize
from cpython.mem cimport PyMem_Free, PyMem_Malloc, PyMem_Realloc
from cpython.unicode cimport PyUnicode_DecodeUTF8
from libc.stdint cimport int64_t, uint64_t
from libc.string cimport memcmp, memcpy

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
from .values import Map, Opaque, Ref, Set, Symbol, kind_of, scalar_key

NAME = "cython"
MAX_DEPTH = 512

cdef enum:
    T_UNIT = 0
    T_BOOL = 1
    T_INT = 2
    T_FLOAT = 3
    T_TEXT = 4
    T_BYTES = 5
    T_SYMBOL = 6
    T_LIST = 7
    T_MAP = 8
    T_SET = 9
    T_REF = 10

cdef object _Map_trusted = Map._trusted
cdef object _Set_trusted = Set._trusted


cdef class _Out:
    cdef unsigned char* data
    cdef Py_ssize_t n
    cdef Py_ssize_t cap

    def __cinit__(self, Py_ssize_t cap=64):
        self.data = <unsigned char*>PyMem_Malloc(cap)
        if self.data == NULL:
            raise MemoryError()
        self.n = 0
        self.cap = cap

    def __dealloc__(self):
        PyMem_Free(self.data)

    cdef inline void reserve(self, Py_ssize_t extra) except *:
        cdef Py_ssize_t want = self.n + extra
        cdef Py_ssize_t cap = self.cap
        cdef unsigned char* p
        if want <= cap:
            return
        while cap < want:
            cap *= 2
        p = <unsigned char*>PyMem_Realloc(self.data, cap)
        if p == NULL:
            raise MemoryError()
        self.data = p
        self.cap = cap

    cdef inline void byte(self, unsigned char b) except *:
        self.reserve(1)
        self.data[self.n] = b
        self.n += 1

    cdef inline void raw(self, const unsigned char* p, Py_ssize_t ln) except *:
        self.reserve(ln)
        memcpy(self.data + self.n, p, ln)
        self.n += ln

    cdef inline void uvarint(self, uint64_t v) except *:
        self.reserve(10)
        while v > 0x7F:
            self.data[self.n] = <unsigned char>((v & 0x7F) | 0x80)
            self.n += 1
            v >>= 7
        self.data[self.n] = <unsigned char>v
        self.n += 1

    cdef inline void be64(self, uint64_t v) except *:
        cdef int i
        self.reserve(8)
        for i in range(8):
            self.data[self.n + i] = <unsigned char>(v >> (56 - 8 * i))
        self.n += 8

    cdef bytes tobytes(self):
        return PyBytes_FromStringAndSize(<char*>self.data, self.n)


cdef inline void _put_text(_Out out, str s) except *:
    cdef bytes raw
    try:
        raw = s.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise InvalidValue(f"text is not valid unicode: {exc}") from None
    out.uvarint(len(raw))
    out.raw(<const unsigned char*>raw, len(raw))


cdef bytes _scalar_alone(object v):
    cdef _Out o = _Out(16)
    _enc(o, v, 0)
    return o.tobytes()


cdef list _sorted_unique(list encoded, str what):
    cdef Py_ssize_t i
    encoded.sort(key=_first)
    for i in range(1, len(encoded)):
        if encoded[i][0] == encoded[i - 1][0]:
            raise InvalidValue(f"duplicate {what} under value equality")
    return encoded


def _first(e):
    return e[0]


cdef void _enc(_Out out, object v, int depth) except *:
    cdef object t = type(v)
    cdef int64_t i
    cdef double d
    cdef uint64_t bits
    cdef const unsigned char[::1] view
    if depth > MAX_DEPTH:
        raise InvalidValue(f"value nested deeper than {MAX_DEPTH}")
    if t is int:
        try:
            i = v
        except OverflowError:
            raise InvalidValue(f"integer {v} does not fit in 64 bits") from None
        out.byte(T_INT)
        out.uvarint((<uint64_t>i << 1) ^ <uint64_t>(i >> 63))
    elif t is str:
        out.byte(T_TEXT)
        _put_text(out, <str>v)
    elif t is tuple or t is list:
        out.byte(T_LIST)
        out.uvarint(len(v))
        for item in v:
            _enc(out, item, depth + 1)
    elif t is Ref:
        out.byte(T_REF)
        out.be64(<uint64_t>v.oid)
    elif v is None:
        out.byte(T_UNIT)
    elif t is bool:
        out.byte(T_BOOL)
        out.byte(1 if v else 0)
    elif t is float:
        d = v
        memcpy(&bits, &d, 8)
        out.byte(T_FLOAT)
        out.be64(bits)
    elif t is bytes:
        out.byte(T_BYTES)
        out.uvarint(len(v))
        out.raw(<const unsigned char*>(<bytes>v), len(v))
    elif t is Opaque:
        raise NonSerializable((), v.tag)
    else:
        k = kind_of(v)
        if k == T_BYTES:
            _enc(out, bytes(v), depth)
        elif k == T_SYMBOL:
            out.byte(T_SYMBOL)
            _put_text(out, v.name)
        elif k == T_MAP:
            entries = []
            for key, val in v.items():
                scalar_key(key)
                entries.append((_scalar_alone(key), val))
            _sorted_unique(entries, "map key")
            out.byte(T_MAP)
            out.uvarint(len(entries))
            for kb, val in entries:
                out.raw(<const unsigned char*>(<bytes>kb), len(kb))
                _enc(out, val, depth + 1)
        elif k == T_SET:
            members = []
            for m in v:
                scalar_key(m)
                members.append((_scalar_alone(m),))
            _sorted_unique(members, "set member")
            out.byte(T_SET)
            out.uvarint(len(members))
            for (mb,) in members:
                out.raw(<const unsigned char*>(<bytes>mb), len(mb))
        elif k == T_INT:
            _enc(out, int(v), depth)
        elif k == T_FLOAT:
            _enc(out, float(v), depth)
        elif k == T_TEXT:
            _enc(out, str(v), depth)
        elif k == T_LIST:
            _enc(out, tuple(v), depth)
        else:
            raise InvalidValue(f"cannot encode {t.__name__}")


def encode_uvarint(n):
    if n < 0 or n > 0xFFFFFFFFFFFFFFFF:
        raise InvalidValue(f"varint out of range: {n}")
    cdef _Out o = _Out(10)
    o.uvarint(<uint64_t>n)
    return o.tobytes()


def encode_value(v):
    cdef _Out o = _Out(64)
    _enc(o, v, 0)
    return o.tobytes()


def encode_record(oid, str class_name, version, dict slots):
    if not 0 <= oid <= 0xFFFFFFFFFFFFFFFF:
        raise InvalidValue(f"oid out of range: {oid}")
    cdef _Out o = _Out(128)
    cdef bytes raw
    o.be64(<uint64_t>oid)
    _put_text(o, class_name)
    o.uvarint(<uint64_t>version)
    named = []
    for name, v in slots.items():
        try:
            named.append(((<str>name).encode("utf-8"), v))
        except UnicodeEncodeError as exc:
            raise InvalidValue(f"slot name is not valid unicode: {exc}") from None
    named.sort(key=_first)
    o.uvarint(len(named))
    for raw, v in named:
        o.uvarint(len(raw))
        o.raw(<const unsigned char*>raw, len(raw))
        _enc(o, v, 0)
    return o.tobytes()


# -- decoding ---------------------------------------------------------------

cdef struct Cursor:
    const unsigned char* p
    Py_ssize_t pos
    Py_ssize_t end


cdef uint64_t _uvarint(Cursor* c) except? 0xFFFFFFFFFFFFFFFF:
    cdef Py_ssize_t start = c.pos
    cdef uint64_t result = 0
    cdef int shift = 0
    cdef unsigned char b
    while True:
        if c.pos >= c.end:
            raise Truncated(start, "varint runs past end of input")
        b = c.p[c.pos]
        c.pos += 1
        if shift == 63 and b > 1:
            raise NonCanonical(start, "varint exceeds 64 bits")
        result |= (<uint64_t>(b & 0x7F)) << shift
        if not (b & 0x80):
            if b == 0 and c.pos - start > 1:
                raise NonCanonical(start, "overlong varint")
            return result
        shift += 7


cdef inline uint64_t _be64(const unsigned char* p):
    cdef uint64_t v = 0
    cdef int i
    for i in range(8):
        v = (v << 8) | p[i]
    return v


cdef str _text(Cursor* c, Py_ssize_t start):
    cdef uint64_t n = _uvarint(c)
    cdef Py_ssize_t pos
    if n > <uint64_t>(c.end - c.pos):
        raise Truncated(start, "string runs past end of input")
    pos = c.pos
    try:
        s = PyUnicode_DecodeUTF8(<const char*>(c.p + pos), <Py_ssize_t>n, "strict")
    except UnicodeDecodeError as exc:
        raise MalformedUtf8(pos + exc.start, exc.reason) from None
    c.pos += <Py_ssize_t>n
    return s


cdef object _dec(Cursor* c, int depth):
    cdef Py_ssize_t start = c.pos
    cdef unsigned char tag, b
    cdef uint64_t n, z, bits, k
    cdef double d
    cdef Py_ssize_t ks, prev_s, prev_n
    if c.pos >= c.end:
        raise Truncated(c.pos, "expected a tag byte")
    if depth > MAX_DEPTH:
        raise TooDeep(c.pos, f"nesting deeper than {MAX_DEPTH}")
    tag = c.p[c.pos]
    c.pos += 1
    if tag == T_UNIT:
        return None
    if tag == T_BOOL:
        if c.pos >= c.end:
            raise Truncated(start, "bool payload missing")
        b = c.p[c.pos]
        if b > 1:
            raise NonCanonical(start, "bool payload must be 0x00 or 0x01")
        c.pos += 1
        return b == 1
    if tag == T_INT:
        z = _uvarint(c)
        return <int64_t>((z >> 1) ^ (0 - (z & 1)))
    if tag == T_FLOAT:
        if c.end - c.pos < 8:
            raise Truncated(start, "float payload needs 8 bytes")
        bits = _be64(c.p + c.pos)
        memcpy(&d, &bits, 8)
        c.pos += 8
        return d
    if tag == T_TEXT:
        return _text(c, start)
    if tag == T_BYTES:
        n = _uvarint(c)
        if n > <uint64_t>(c.end - c.pos):
            raise Truncated(start, "bytes run past end of input")
        out = PyBytes_FromStringAndSize(<const char*>(c.p + c.pos), <Py_ssize_t>n)
        c.pos += <Py_ssize_t>n
        return out
    if tag == T_SYMBOL:
        return Symbol(_text(c, start))
    if tag == T_LIST:
        n = _uvarint(c)
        if n > <uint64_t>(c.end - c.pos):
            raise Truncated(start, "list count exceeds remaining input")
        items = [None] * <Py_ssize_t>n
        for k in range(n):
            items[k] = _dec(c, depth + 1)
        return tuple(items)
    if tag == T_MAP:
        n = _uvarint(c)
        if n > <uint64_t>((c.end - c.pos) // 2):
            raise Truncated(start, "map count exceeds remaining input")
        index = {}
        prev_s = -1
        prev_n = 0
        for k in range(n):
            ks = c.pos
            key = _dec_scalar(c, depth)
            if prev_s >= 0 and _cmp(c.p + prev_s, prev_n, c.p + ks, c.pos - ks) >= 0:
                raise NonCanonical(ks, "map keys out of order or duplicated")
            prev_s = ks
            prev_n = c.pos - ks
            val = _dec(c, depth + 1)
            index[scalar_key(key)] = (key, val)
        return _Map_trusted(index)
    if tag == T_SET:
        n = _uvarint(c)
        if n > <uint64_t>(c.end - c.pos):
            raise Truncated(start, "set count exceeds remaining input")
        index = {}
        prev_s = -1
        prev_n = 0
        for k in range(n):
            ks = c.pos
            member = _dec_scalar(c, depth)
            if prev_s >= 0 and _cmp(c.p + prev_s, prev_n, c.p + ks, c.pos - ks) >= 0:
                raise NonCanonical(ks, "set members out of order or duplicated")
            prev_s = ks
            prev_n = c.pos - ks
            index[scalar_key(member)] = member
        return _Set_trusted(index)
    if tag == T_REF:
        if c.end - c.pos < 8:
            raise Truncated(start, "ref payload needs 8 bytes")
        bits = _be64(c.p + c.pos)
        if bits == 0:
            raise NonCanonical(start, "oid 0 is reserved")
        c.pos += 8
        return Ref(bits)
    raise UnknownTag(tag, start)


cdef inline int _cmp(const unsigned char* a, Py_ssize_t na, const unsigned char* b, Py_ssize_t nb):
    cdef int r = memcmp(a, b, na if na < nb else nb)
    if r != 0:
        return r
    return (na > nb) - (na < nb)


cdef object _dec_scalar(Cursor* c, int depth):
    if c.pos < c.end and T_SYMBOL < c.p[c.pos] <= T_REF:
        raise NonCanonical(c.pos, "map keys and set members must be scalars")
    return _dec(c, depth + 1)


def decode_uvarint(buf, Py_ssize_t offset=0):
    cdef const unsigned char[::1] view = _view(buf)
    cdef Cursor c
    if offset < 0 or offset > view.shape[0]:
        raise Truncated(offset, "offset outside input")
    c.p = &view[0] if view.shape[0] else <const unsigned char*>b""
    c.pos = offset
    c.end = view.shape[0]
    n = _uvarint(&c)
    return n, c.pos - offset


cdef const unsigned char[::1] _view(buf):
    if isinstance(buf, bytes) or isinstance(buf, bytearray):
        return buf
    return memoryview(buf).cast("B").tobytes()


def decode_value(buf, Py_ssize_t offset=0):
    cdef const unsigned char[::1] view = _view(buf)
    cdef Cursor c
    if offset < 0 or offset > view.shape[0]:
        raise Truncated(offset, "offset outside input")
    c.p = &view[0] if view.shape[0] else <const unsigned char*>b""
    c.pos = offset
    c.end = view.shape[0]
    v = _dec(&c, 0)
    return v, c.pos - offset


cdef object _header(Cursor* c):
    cdef Py_ssize_t offset = c.pos
    if c.end - c.pos < 8:
        raise Truncated(offset, "record oid needs 8 bytes")
    oid = _be64(c.p + c.pos)
    c.pos += 8
    class_name = _text(c, c.pos)
    version = _uvarint(c)
    return oid, class_name, version


def decode_record_header(buf, Py_ssize_t offset=0):
    cdef const unsigned char[::1] view = _view(buf)
    cdef Cursor c
    if offset < 0 or offset > view.shape[0]:
        raise Truncated(offset, "offset outside input")
    c.p = &view[0] if view.shape[0] else <const unsigned char*>b""
    c.pos = offset
    c.end = view.shape[0]
    oid, class_name, version = _header(&c)
    return oid, class_name, version, c.pos


def decode_record(buf, Py_ssize_t offset=0):
    cdef const unsigned char[::1] view = _view(buf)
    cdef Cursor c
    cdef uint64_t n, k, ln
    cdef Py_ssize_t ss, prev_s = -1, prev_n = 0, ns
    cdef int r
    if offset < 0 or offset > view.shape[0]:
        raise Truncated(offset, "offset outside input")
    c.p = &view[0] if view.shape[0] else <const unsigned char*>b""
    c.pos = offset
    c.end = view.shape[0]
    oid, class_name, version = _header(&c)
    n = _uvarint(&c)
    if n > <uint64_t>(c.end - c.pos):
        raise Truncated(c.pos, "slot count exceeds remaining input")
    slots = {}
    for k in range(n):
        ss = c.pos
        ln = _uvarint(&c)
        if ln > <uint64_t>(c.end - c.pos):
            raise Truncated(ss, "slot name runs past end of input")
        ns = c.pos
        if prev_s >= 0:
            r = _cmp(c.p + prev_s, prev_n, c.p + ns, <Py_ssize_t>ln)
            if r == 0:
                raise DuplicateSlot(ss, f"slot {PyBytes_FromStringAndSize(<const char*>(c.p + ns), <Py_ssize_t>ln)!r} appears twice")
            if r > 0:
                raise NonCanonical(ss, "slots out of name order")
        prev_s = ns
        prev_n = <Py_ssize_t>ln
        try:
            name = PyUnicode_DecodeUTF8(<const char*>(c.p + ns), <Py_ssize_t>ln, "strict")
        except UnicodeDecodeError as exc:
            raise MalformedUtf8(ns + exc.start, exc.reason) from None
        c.pos += <Py_ssize_t>ln
        slots[name] = _dec(&c, 0)
    return oid, class_name, version, slots, c.pos - offset
