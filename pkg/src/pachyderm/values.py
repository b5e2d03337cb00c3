"""The universe of storable values.

Plain Python objects stand in for the scalar kinds and for lists::

    None   -> Unit          bool  -> Bool         int   -> Int (64-bit signed)
    float  -> Float         str   -> Text         bytes -> Bytes
    list / tuple -> List

The remaining kinds need their own types because Python's equality is too
coarse for them (``1 == True == 1.0``, ``0.0 == -0.0``, ``nan != nan``):
:class:`Symbol`, :class:`Map`, :class:`Set`, :class:`Ref` and :class:`Opaque`.
Plain ``dict``, ``set`` and ``frozenset`` are accepted wherever a Map or Set
is expected; decoding always produces the dedicated types.
"""

from __future__ import annotations

import struct
from collections.abc import Mapping
from collections.abc import Set as AbstractSet
from dataclasses import dataclass
from enum import IntEnum

from .errors import DuplicateKey, InvalidValue

OID_MAX = (1 << 64) - 1
INT_MIN = -(1 << 63)
INT_MAX = (1 << 63) - 1

_pack_double = struct.Struct(">d").pack


class Kind(IntEnum):
    """Value kinds. The numeric value doubles as the wire tag."""

    UNIT = 0x00
    BOOL = 0x01
    INT = 0x02
    FLOAT = 0x03
    TEXT = 0x04
    BYTES = 0x05
    SYMBOL = 0x06
    LIST = 0x07
    MAP = 0x08
    SET = 0x09
    REF = 0x0A
    OPAQUE = 0xFF  # never on the wire


SCALAR_KINDS = frozenset(
    {Kind.UNIT, Kind.BOOL, Kind.INT, Kind.FLOAT, Kind.TEXT, Kind.BYTES, Kind.SYMBOL}
)


class Symbol:
    """Interned flat name. ``Symbol("a") is Symbol("a")``."""

    __slots__ = ("name", "__weakref__")
    _table: dict[str, Symbol] = {}

    def __new__(cls, name: str) -> Symbol:
        if not isinstance(name, str):
            raise InvalidValue(f"symbol name must be str, not {type(name).__name__}")
        try:
            return cls._table[name]
        except KeyError:
            sym = super().__new__(cls)
            sym.name = name
            return cls._table.setdefault(name, sym)

    def __repr__(self) -> str:
        return f"Symbol({self.name!r})"

    def __reduce__(self):
        return (Symbol, (self.name,))


@dataclass(frozen=True, slots=True)
class Ref:
    """Reference to a persistent object by oid."""

    oid: int

    def __post_init__(self) -> None:
        if isinstance(self.oid, bool) or not isinstance(self.oid, int) or not 0 < self.oid <= OID_MAX:
            raise InvalidValue(f"oid must be an integer in 1..2**64-1, got {self.oid!r}")


@dataclass(frozen=True, slots=True)
class Opaque:
    """Stand-in for a host resource (file handle, closure...) that cannot be stored."""

    tag: str


def kind_of(v) -> Kind:
    """Return the kind of ``v``; raise :class:`InvalidValue` for foreign objects."""
    t = type(v)
    k = _KIND_BY_TYPE.get(t)
    if k is not None:
        return k
    # subclasses (IntEnum members, OrderedDict, ...) fall through to here
    if v is None:
        return Kind.UNIT
    if isinstance(v, bool):
        return Kind.BOOL
    if isinstance(v, int):
        return Kind.INT
    if isinstance(v, float):
        return Kind.FLOAT
    if isinstance(v, str):
        return Kind.TEXT
    if isinstance(v, (bytes, bytearray, memoryview)):
        return Kind.BYTES
    if isinstance(v, (list, tuple)):
        return Kind.LIST
    if isinstance(v, Mapping):
        return Kind.MAP
    if isinstance(v, AbstractSet):
        return Kind.SET
    raise InvalidValue(f"{t.__name__} is not a storable value type")


def is_scalar(v) -> bool:
    try:
        return kind_of(v) in SCALAR_KINDS
    except InvalidValue:
        return False


def scalar_key(v) -> tuple:
    """Hashable key such that ``scalar_key(a) == scalar_key(b)`` iff
    ``value_equal(a, b)`` for scalars. Raises InvalidValue otherwise."""
    k = kind_of(v)
    if k is Kind.FLOAT:
        return (k, _pack_double(v))
    if k is Kind.BYTES:
        return (k, bytes(v))
    if k is Kind.SYMBOL:
        return (k, v.name)
    if k is Kind.INT:
        return (k, int(v))
    if k in SCALAR_KINDS:
        return (k, v)
    raise InvalidValue(f"{k.name.lower()} cannot be used as a map key or set member")


def _index_of_map(m) -> dict:
    if isinstance(m, Map):
        return m._index
    index = {}
    for key, val in m.items():
        sk = scalar_key(key)
        if sk in index:
            raise DuplicateKey(f"duplicate map key {key!r}")
        index[sk] = (key, val)
    return index


def _index_of_set(s) -> dict:
    if isinstance(s, Set):
        return s._index
    index = {}
    for member in s:
        sk = scalar_key(member)
        if sk in index:
            raise DuplicateKey(f"duplicate set member {member!r}")
        index[sk] = member
    return index


class Map(Mapping):
    """Immutable association with scalar keys, compared by value equality."""

    __slots__ = ("_index",)

    def __init__(self, items=()):
        pairs = items.items() if isinstance(items, Mapping) else items
        index = {}
        for key, val in pairs:
            sk = scalar_key(key)
            if sk in index:
                raise DuplicateKey(f"duplicate map key {key!r}")
            index[sk] = (key, val)
        self._index = index

    @classmethod
    def _trusted(cls, index: dict) -> Map:
        m = cls.__new__(cls)
        m._index = index
        return m

    def __getitem__(self, key):
        try:
            return self._index[scalar_key(key)][1]
        except InvalidValue:
            raise KeyError(key) from None
        except KeyError:
            raise KeyError(key) from None

    def __contains__(self, key) -> bool:
        try:
            return scalar_key(key) in self._index
        except InvalidValue:
            return False

    def __iter__(self):
        return (k for k, _ in self._index.values())

    def __len__(self) -> int:
        return len(self._index)

    def items(self):
        return list(self._index.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mapping):
            return NotImplemented
        return value_equal(self, other)

    __hash__ = None

    def __repr__(self) -> str:
        body = ", ".join(f"{k!r}: {v!r}" for k, v in self._index.values())
        return f"Map({{{body}}})"


class Set(AbstractSet):
    """Immutable collection of scalars, compared by value equality."""

    __slots__ = ("_index",)

    def __init__(self, members=()):
        index = {}
        for member in members:
            sk = scalar_key(member)
            if sk in index:
                raise DuplicateKey(f"duplicate set member {member!r}")
            index[sk] = member
        self._index = index

    @classmethod
    def _trusted(cls, index: dict) -> Set:
        s = cls.__new__(cls)
        s._index = index
        return s

    def __contains__(self, member) -> bool:
        try:
            return scalar_key(member) in self._index
        except InvalidValue:
            return False

    def __iter__(self):
        return iter(self._index.values())

    def __len__(self) -> int:
        return len(self._index)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AbstractSet):
            return NotImplemented
        return value_equal(self, other)

    __hash__ = None

    def __repr__(self) -> str:
        return f"Set({list(self._index.values())!r})"


_KIND_BY_TYPE = {
    type(None): Kind.UNIT,
    bool: Kind.BOOL,
    int: Kind.INT,
    float: Kind.FLOAT,
    str: Kind.TEXT,
    bytes: Kind.BYTES,
    Symbol: Kind.SYMBOL,
    list: Kind.LIST,
    tuple: Kind.LIST,
    dict: Kind.MAP,
    Map: Kind.MAP,
    set: Kind.SET,
    frozenset: Kind.SET,
    Set: Kind.SET,
    Ref: Kind.REF,
    Opaque: Kind.OPAQUE,
}


def value_equal(a, b) -> bool:
    """Structural equality over values.

    Floats compare by bit pattern, refs by oid, maps and sets ignore order.
    """
    ka = kind_of(a)
    if ka is not kind_of(b):
        return False
    if ka is Kind.LIST:
        return len(a) == len(b) and all(value_equal(x, y) for x, y in zip(a, b))
    if ka is Kind.MAP:
        ia, ib = _index_of_map(a), _index_of_map(b)
        if len(ia) != len(ib):
            return False
        for sk, (_, va) in ia.items():
            entry = ib.get(sk)
            if entry is None or not value_equal(va, entry[1]):
                return False
        return True
    if ka is Kind.SET:
        return _index_of_set(a).keys() == _index_of_set(b).keys()
    if ka is Kind.REF:
        return a.oid == b.oid
    if ka is Kind.OPAQUE:
        return a.tag == b.tag
    return scalar_key(a) == scalar_key(b)


def walk(v, path=()):
    """Yield ``(path, value)`` for ``v`` and every nested value, depth first."""
    yield path, v
    k = kind_of(v)
    if k is Kind.LIST:
        for i, item in enumerate(v):
            yield from walk(item, path + (i,))
    elif k is Kind.MAP:
        for key, val in _index_of_map(v).values():
            yield from walk(key, path + (key,))
            yield from walk(val, path + (key,))
    elif k is Kind.SET:
        for member in _index_of_set(v).values():
            yield from walk(member, path + ("<member>",))


def find_opaque(v):
    """Return ``(path, Opaque)`` for the first Opaque inside ``v``, else None."""
    for path, sub in walk(v):
        if type(sub) is Opaque:
            return path, sub
    return None


def iter_refs(v):
    """Yield every Ref oid inside ``v``, in encounter order."""
    t = type(v)
    if t is Ref:
        yield v.oid
    elif t is list or t is tuple:
        for item in v:
            yield from iter_refs(item)
    elif t is Map or t is dict:
        for item in v.values():
            yield from iter_refs(item)
    elif kind_of(v) is Kind.MAP:
        for item in v.values():
            yield from iter_refs(item)
    elif kind_of(v) is Kind.LIST:
        for item in v:
            yield from iter_refs(item)


def map_refs(v, fn):
    """Copy ``v`` with every ``Ref(oid)`` replaced by ``Ref(fn(oid))``."""
    k = kind_of(v)
    if k is Kind.REF:
        return Ref(fn(v.oid))
    if k is Kind.LIST:
        return tuple(map_refs(item, fn) for item in v)
    if k is Kind.MAP:
        return Map._trusted({sk: (key, map_refs(val, fn)) for sk, (key, val) in _index_of_map(v).items()})
    return v
