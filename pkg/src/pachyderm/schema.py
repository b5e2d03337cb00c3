"""Versioned class registry, class diffs, and the schema text format.

Schema text::

    class photo
      slot filename
      slot thumbnail default ""
      slot preview transient
    end

Literals: ``unit``, ``true``, ``false``, decimal integers, decimals containing
``.``, double-quoted strings (``\\"`` and ``\\\\`` escapes), ``:symbol``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from . import codec
from .errors import (
    AlreadyDefined,
    InvalidSlotSpec,
    MalformedUtf8,
    NameMismatch,
    NonCanonical,
    ParseError,
    Truncated,
    UnknownClass,
    UnknownVersion,
)
from .values import INT_MAX, INT_MIN, Kind, Opaque, Ref, Symbol, kind_of, walk


class _UnboundType:
    __slots__ = ()

    def __repr__(self):
        return "UNBOUND"

    def __reduce__(self):
        return "UNBOUND"


UNBOUND = _UnboundType()
"""Default marker for slots that start without a value."""


@dataclass(frozen=True)
class SlotSpec:
    name: str
    default: object = UNBOUND
    persistent: bool = True

    @property
    def has_default(self) -> bool:
        return self.default is not UNBOUND


@dataclass(frozen=True)
class ClassDescriptor:
    name: str
    version: int
    slots: tuple[SlotSpec, ...] = ()

    def slot(self, name: str) -> SlotSpec | None:
        for spec in self.slots:
            if spec.name == name:
                return spec
        return None

    @property
    def slot_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.slots)

    @property
    def persistent_names(self) -> frozenset[str]:
        return frozenset(s.name for s in self.slots if s.persistent)


@dataclass(frozen=True)
class ClassDiff:
    added: frozenset[str] = frozenset()
    discarded: frozenset[str] = frozenset()
    retained: frozenset[str] = frozenset()


def class_diff(old: ClassDescriptor, new: ClassDescriptor) -> ClassDiff:
    if old.name != new.name:
        raise NameMismatch(f"cannot diff {old.name!r} against {new.name!r}")
    old_names, new_names = set(old.slot_names), set(new.slot_names)
    return ClassDiff(
        added=frozenset(new_names - old_names),
        discarded=frozenset(old_names - new_names),
        retained=frozenset(old_names & new_names),
    )


def _normalize_slots(slots) -> tuple[SlotSpec, ...]:
    out = []
    seen = set()
    for spec in slots:
        if isinstance(spec, str):
            spec = SlotSpec(spec)
        if not isinstance(spec, SlotSpec):
            raise InvalidSlotSpec(f"expected SlotSpec or name, got {spec!r}")
        if not isinstance(spec.name, str) or not spec.name:
            raise InvalidSlotSpec(f"slot name must be a non-empty string, got {spec.name!r}")
        if spec.name in seen:
            raise InvalidSlotSpec(f"duplicate slot name {spec.name!r}")
        seen.add(spec.name)
        if spec.has_default:
            for _, sub in walk(spec.default):
                if isinstance(sub, (Opaque, Ref)):
                    raise InvalidSlotSpec(
                        f"default of slot {spec.name!r} contains a {type(sub).__name__}"
                    )
            # frozen copy: no aliasing of a caller's mutable list
            spec = SlotSpec(spec.name, codec.decode_exact(codec.encode_value(spec.default)), spec.persistent)
        out.append(spec)
    return tuple(out)


class Registry:
    """All descriptor versions of every class, plus not-yet-committed changes."""

    def __init__(self):
        self._versions: dict[str, list[ClassDescriptor]] = {}
        self._staged: list[ClassDescriptor] = []

    def __contains__(self, name) -> bool:
        return name in self._versions

    def names(self) -> list[str]:
        return sorted(self._versions)

    def define_class(self, name: str, slots=()) -> ClassDescriptor:
        if not isinstance(name, str) or not name:
            raise InvalidSlotSpec(f"class name must be a non-empty string, got {name!r}")
        if name in self._versions:
            raise AlreadyDefined(f"class {name!r} is already defined")
        desc = ClassDescriptor(name, 1, _normalize_slots(slots))
        self._versions[name] = [desc]
        self._staged.append(desc)
        return desc

    def redefine_class(self, name: str, slots=()) -> tuple[ClassDescriptor, ClassDiff]:
        old = self.current(name)
        desc = ClassDescriptor(name, old.version + 1, _normalize_slots(slots))
        self._versions[name].append(desc)
        self._staged.append(desc)
        return desc, class_diff(old, desc)

    def current(self, name: str) -> ClassDescriptor:
        try:
            return self._versions[name][-1]
        except KeyError:
            raise UnknownClass(f"class {name!r} is not defined") from None

    def get_descriptor(self, name: str, version: int | None = None) -> ClassDescriptor:
        history = self.history(name)
        if version is None:
            return history[-1]
        if not 1 <= version <= len(history):
            raise UnknownVersion(f"class {name!r} has no version {version}")
        return history[version - 1]

    def history(self, name: str) -> list[ClassDescriptor]:
        try:
            return list(self._versions[name])
        except KeyError:
            raise UnknownClass(f"class {name!r} is not defined") from None

    # -- staging, used by the store ------------------------------------------

    def staged(self) -> list[ClassDescriptor]:
        return list(self._staged)

    def mark_committed(self) -> None:
        self._staged.clear()

    def discard_staged(self) -> None:
        for desc in reversed(self._staged):
            history = self._versions[desc.name]
            history.pop()
            if not history:
                del self._versions[desc.name]
        self._staged.clear()

    def load(self, desc: ClassDescriptor) -> None:
        """Install a descriptor read back from durable storage."""
        history = self._versions.setdefault(desc.name, [])
        if desc.version != len(history) + 1:
            if not history:
                del self._versions[desc.name]
            raise UnknownVersion(
                f"class {desc.name!r} version {desc.version} follows version {len(history)}"
            )
        history.append(desc)


# -- durable layout ----------------------------------------------------------

def _put_text(out: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    out += codec.encode_uvarint(len(raw))
    out += raw


def encode_descriptor(desc: ClassDescriptor) -> bytes:
    out = bytearray()
    _put_text(out, desc.name)
    out += codec.encode_uvarint(desc.version)
    out += codec.encode_uvarint(len(desc.slots))
    for spec in desc.slots:
        _put_text(out, spec.name)
        if spec.has_default:
            out.append(0x01)
            out += codec.encode_value(spec.default)
        else:
            out.append(0x00)
        out.append(0x01 if spec.persistent else 0x00)
    return bytes(out)


def _read_text(buf, pos):
    n, used = codec.decode_uvarint(buf, pos)
    pos += used
    if n > len(buf) - pos:
        raise Truncated(pos, "name runs past end of input")
    try:
        return bytes(buf[pos:pos + n]).decode("utf-8"), pos + n
    except UnicodeDecodeError as exc:
        raise MalformedUtf8(pos + exc.start, exc.reason) from None


def _read_flag(buf, pos):
    if pos >= len(buf):
        raise Truncated(pos, "flag byte missing")
    b = buf[pos]
    if b > 1:
        raise NonCanonical(pos, f"flag byte must be 0 or 1, got {b}")
    return b == 1, pos + 1


def decode_descriptor_at(buf, offset: int = 0) -> tuple[ClassDescriptor, int]:
    """Decode a descriptor at ``offset``; return ``(descriptor, bytes_consumed)``."""
    name, pos = _read_text(buf, offset)
    version, used = codec.decode_uvarint(buf, pos)
    pos += used
    count, used = codec.decode_uvarint(buf, pos)
    pos += used
    slots = []
    for _ in range(count):
        slot_name, pos = _read_text(buf, pos)
        has_default, pos = _read_flag(buf, pos)
        default = UNBOUND
        if has_default:
            default, used = codec.decode_value(buf, pos)
            pos += used
        persistent, pos = _read_flag(buf, pos)
        slots.append(SlotSpec(slot_name, default, persistent))
    return ClassDescriptor(name, version, tuple(slots)), pos - offset


def decode_descriptor(buf) -> ClassDescriptor:
    desc, n = decode_descriptor_at(buf, 0)
    if n != len(buf):
        raise NonCanonical(n, "trailing bytes after descriptor")
    return desc


def descriptors_equal(a: ClassDescriptor, b: ClassDescriptor) -> bool:
    """Descriptor identity, judged on the durable encoding."""
    return encode_descriptor(a) == encode_descriptor(b)


# -- text format ---------------------------------------------------------------

_TOKEN = re.compile(r'"(?:[^"\\]|\\.)*"?|\S+')
_INT = re.compile(r"[+-]?\d+\Z")
_FLOAT = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?\Z")
_NAME = re.compile(r"[^\s\"]+\Z")


def parse_literal(token: str, line: int = 0):
    if token == "unit":
        return None
    if token == "true":
        return True
    if token == "false":
        return False
    if token.startswith('"'):
        if len(token) < 2 or not token.endswith('"') or _odd_trailing_backslashes(token[1:-1]):
            raise ParseError(line, f"unterminated string {token}")
        body, out, i = token[1:-1], [], 0
        while i < len(body):
            ch = body[i]
            if ch == "\\":
                nxt = body[i + 1]
                if nxt not in '"\\':
                    raise ParseError(line, f"unknown escape \\{nxt}")
                out.append(nxt)
                i += 2
            else:
                out.append(ch)
                i += 1
        return "".join(out)
    if token.startswith(":") and len(token) > 1:
        return Symbol(token[1:])
    if _INT.match(token):
        n = int(token)
        if not INT_MIN <= n <= INT_MAX:
            raise ParseError(line, f"integer {token} does not fit in 64 bits")
        return n
    if _FLOAT.match(token):
        return float(token)
    raise ParseError(line, f"bad literal {token!r}")


def _odd_trailing_backslashes(s: str) -> bool:
    return (len(s) - len(s.rstrip("\\"))) % 2 == 1


def parse_schema_text(text: str) -> list[tuple[str, list[SlotSpec]]]:
    """Parse schema text into ``[(class_name, [SlotSpec, ...]), ...]`` in file order."""
    classes: list[tuple[str, list[SlotSpec]]] = []
    current: tuple[str, list[SlotSpec]] | None = None
    start_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = _TOKEN.findall(stripped)
        head = tokens[0]
        if head == "class":
            if current is not None:
                raise ParseError(lineno, f"class {current[0]!r} is missing 'end'")
            if len(tokens) != 2 or not _NAME.match(tokens[1]):
                raise ParseError(lineno, "expected 'class <name>'")
            current = (tokens[1], [])
            start_line = lineno
        elif head == "slot":
            if current is None:
                raise ParseError(lineno, "'slot' outside a class")
            current[1].append(_parse_slot(tokens, lineno))
        elif head == "end":
            if current is None or len(tokens) != 1:
                raise ParseError(lineno, "unexpected 'end'")
            if not current[1]:
                raise ParseError(lineno, f"class {current[0]!r} declares no slots")
            names = [s.name for s in current[1]]
            if len(set(names)) != len(names):
                raise ParseError(lineno, f"class {current[0]!r} repeats a slot name")
            classes.append(current)
            current = None
        else:
            raise ParseError(lineno, f"unexpected {head!r}")
    if current is not None:
        raise ParseError(start_line, f"class {current[0]!r} is missing 'end'")
    return classes


def _parse_slot(tokens: list[str], lineno: int) -> SlotSpec:
    if len(tokens) < 2 or not _NAME.match(tokens[1]):
        raise ParseError(lineno, "expected 'slot <name>'")
    name = tokens[1]
    default = UNBOUND
    persistent = True
    rest = tokens[2:]
    if rest and rest[0] == "default":
        if len(rest) < 2 or rest[1] == "transient":
            raise ParseError(lineno, f"slot {name!r}: 'default' needs a literal")
        default = parse_literal(rest[1], lineno)
        rest = rest[2:]
    if rest and rest[0] == "transient":
        persistent = False
        rest = rest[1:]
    if rest:
        raise ParseError(lineno, f"slot {name!r}: unexpected {rest[0]!r}")
    return SlotSpec(name, default, persistent)


def format_value(v) -> str:
    """Human-readable rendering; scalars use the schema literal syntax."""
    k = kind_of(v)
    if k is Kind.UNIT:
        return "unit"
    if k is Kind.BOOL:
        return "true" if v else "false"
    if k is Kind.INT:
        return str(int(v))
    if k is Kind.FLOAT:
        if math.isnan(v) or math.isinf(v):
            return repr(v)
        text = repr(float(v))
        if "." not in text:
            mant, _, exp = text.partition("e")
            text = f"{mant}.0e{exp}" if exp else f"{mant}.0"
        return text
    if k is Kind.TEXT:
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if k is Kind.BYTES:
        return "#bytes(" + bytes(v).hex() + ")"
    if k is Kind.SYMBOL:
        return ":" + v.name
    if k is Kind.LIST:
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    if k is Kind.MAP:
        items = sorted(v.items(), key=lambda kv: codec.encode_value(kv[0]))
        return "{" + ", ".join(f"{format_value(a)}: {format_value(b)}" for a, b in items) + "}"
    if k is Kind.SET:
        return "#{" + ", ".join(format_value(x) for x in sorted(v, key=codec.encode_value)) + "}"
    if k is Kind.REF:
        return f"@{v.oid}"
    return f"#opaque({v.tag})"


def format_slot(spec: SlotSpec) -> str:
    text = f"slot {spec.name}"
    if spec.has_default:
        text += f" default {format_value(spec.default)}"
    if not spec.persistent:
        text += " transient"
    return text
