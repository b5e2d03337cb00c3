"""Exception hierarchy.

Every error the library raises on purpose derives from :class:`PachydermError`,
so callers (and the CLI) can separate domain failures from programming bugs.
"""


class PachydermError(Exception):
    """Base class for all library errors."""


# -- values and encoding ----------------------------------------------------

class InvalidValue(PachydermError, ValueError):
    """Object is not a storable value (unsupported type, range, key kind)."""


class DuplicateKey(InvalidValue):
    """Two map keys or set members are equal under value equality."""


class NonSerializable(PachydermError):
    """An Opaque value was reached while encoding.

    ``path`` is a tuple of steps from the root value to the offending
    sub-value: list indexes, map keys, or ``"<member>"`` for set members.
    """

    def __init__(self, path=(), tag=None):
        self.path = tuple(path)
        self.tag = tag
        super().__init__(f"opaque value {tag!r} at {format_path(self.path)} is not serializable")


def format_path(path):
    out = "$"
    for step in path:
        if isinstance(step, int) and not isinstance(step, bool):
            out += f"[{step}]"
        elif isinstance(step, str) and step.startswith("."):
            out += step
        else:
            out += "{" + repr(step) + "}"
    return out


class DecodeError(PachydermError):
    """Bytes do not form a valid encoding."""

    def __init__(self, offset, reason=""):
        self.offset = offset
        self.reason = reason
        msg = f"{type(self).__name__} at offset {offset}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class UnknownTag(DecodeError):
    def __init__(self, tag, offset):
        self.tag = tag
        super().__init__(offset, f"tag 0x{tag:02X} is not assigned")


class Truncated(DecodeError):
    pass


class MalformedUtf8(DecodeError):
    pass


class NonCanonical(DecodeError):
    pass


class TooDeep(DecodeError):
    pass


class DuplicateSlot(DecodeError):
    pass


# -- schema -----------------------------------------------------------------

class SchemaError(PachydermError):
    pass


class AlreadyDefined(SchemaError):
    pass


class InvalidSlotSpec(SchemaError):
    pass


class UnknownClass(SchemaError, LookupError):
    pass


class UnknownVersion(SchemaError, LookupError):
    pass


class NameMismatch(SchemaError):
    pass


class SchemaConflict(SchemaError):
    pass


class ParseError(SchemaError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


# -- objects and migration --------------------------------------------------

class UnknownSlot(PachydermError, LookupError):
    def __init__(self, class_name, slot):
        self.class_name = class_name
        self.slot = slot
        super().__init__(f"class {class_name!r} has no slot {slot!r}")


class UnboundSlot(PachydermError, LookupError):
    """Slot exists but holds no value."""

    def __init__(self, class_name, slot):
        self.class_name = class_name
        self.slot = slot
        super().__init__(f"slot {slot!r} of {class_name!r} is unbound")


class UnknownOid(PachydermError, LookupError):
    def __init__(self, oid):
        self.oid = oid
        super().__init__(f"no object with oid {oid}")


class Deleted(PachydermError, LookupError):
    def __init__(self, oid):
        self.oid = oid
        super().__init__(f"object {oid} has been deleted")


class DanglingRef(PachydermError):
    def __init__(self, source, target):
        self.source = source
        self.target = target
        super().__init__(f"object {source} refers to missing object {target}")


class HookFailure(PachydermError):
    """A user hook raised or produced an invalid draft.

    The original exception is chained as ``__cause__``. ``completed`` is set by
    eager migration to the number of records upgraded before the failure.
    """

    def __init__(self, message, completed=None):
        self.completed = completed
        super().__init__(message)


class DuplicateHook(PachydermError):
    pass


class VersionSkew(PachydermError):
    pass


# -- store ------------------------------------------------------------------

class StoreError(PachydermError):
    pass


class BadMagic(StoreError):
    pass


class Locked(StoreError):
    def __init__(self, path, holder=None):
        self.path = path
        self.holder = holder
        super().__init__(f"store {path} is locked" + (f" by pid {holder}" if holder else ""))


class IoFailure(StoreError):
    pass


class DirtySession(StoreError):
    pass


class CorruptStore(StoreError):
    pass


class SessionClosed(StoreError):
    pass


class ConcurrentAccess(StoreError):
    pass


class Malformed(PachydermError):
    """A graph blob could not be parsed."""
