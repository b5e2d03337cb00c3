"""Append-only log file format, recovery scan, and the single-writer lock.

File layout::

    header   "PCHYDRM1" | u16 BE format version (1) | 6 zero bytes
    record*  u32 BE payload length | kind (1 byte) | payload | u32 BE CRC-32(kind + payload)

A transaction is a run of non-commit records closed by one commit record.
Anything after the last commit record is discarded on open.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import psutil

from .errors import BadMagic, Locked

MAGIC = b"PCHYDRM1"
FORMAT_VERSION = 1
HEADER = MAGIC + struct.pack(">H", FORMAT_VERSION) + bytes(6)
HEADER_SIZE = len(HEADER)

SCHEMA_DEFINE = 0x01
SCHEMA_REDEFINE = 0x02
INSTANCE_WRITE = 0x03
INSTANCE_DELETE = 0x04
TXN_COMMIT = 0x05
KINDS = frozenset({SCHEMA_DEFINE, SCHEMA_REDEFINE, INSTANCE_WRITE, INSTANCE_DELETE, TXN_COMMIT})
KIND_NAMES = {
    SCHEMA_DEFINE: "schema-define",
    SCHEMA_REDEFINE: "schema-redefine",
    INSTANCE_WRITE: "instance-write",
    INSTANCE_DELETE: "instance-delete",
    TXN_COMMIT: "txn-commit",
}

_PREFIX = struct.Struct(">IB")
_CRC = struct.Struct(">I")
_U64 = struct.Struct(">Q")
FRAME_OVERHEAD = _PREFIX.size + _CRC.size


def crc32(kind: int, payload) -> int:
    return zlib.crc32(payload, zlib.crc32(bytes((kind,))))


def frame(kind: int, payload: bytes) -> bytes:
    return _PREFIX.pack(len(payload), kind) + payload + _CRC.pack(crc32(kind, payload))


def commit_payload(seq: int) -> bytes:
    return _U64.pack(seq)


def delete_payload(oid: int) -> bytes:
    return _U64.pack(oid)


def read_u64(payload) -> int:
    return _U64.unpack_from(payload)[0]


@dataclass(frozen=True)
class Frame:
    kind: int
    offset: int  # start of the length prefix
    payload_offset: int
    length: int

    @property
    def end(self) -> int:
        return self.payload_offset + self.length + _CRC.size


@dataclass
class ScanResult:
    transactions: list[list[Frame]] = field(default_factory=list)
    committed_end: int = HEADER_SIZE
    header_present: bool = True
    stop: str = "eof"  # eof | truncated | crc | kind
    stop_offset: int | None = None
    damaged: bool = False  # a bad frame is followed by more data


def check_header(data: bytes) -> bool:
    """Return whether a full header is present; raise BadMagic if the bytes
    cannot be the start of a store file."""
    if len(data) < HEADER_SIZE:
        if HEADER[: len(data)] == bytes(data):
            return False
        raise BadMagic("file is not a pachyderm store (bad magic)")
    if data[:8] != MAGIC:
        raise BadMagic("file is not a pachyderm store (bad magic)")
    (version,) = struct.unpack_from(">H", data, 8)
    if version != FORMAT_VERSION:
        raise BadMagic(f"unsupported store format version {version}")
    return True


def read_frame(data, pos: int):
    """Parse the frame at ``pos``.

    Returns ``(frame, problem)`` where problem is None, ``"truncated"``,
    ``"crc"`` or ``"kind"``. ``frame`` is None only when truncated.
    """
    if len(data) - pos < FRAME_OVERHEAD:
        return None, "truncated"
    length, kind = _PREFIX.unpack_from(data, pos)
    start = pos + _PREFIX.size
    end = start + length + _CRC.size
    if end > len(data):
        return None, "truncated"
    f = Frame(kind, pos, start, length)
    (stored,) = _CRC.unpack_from(data, start + length)
    if crc32(kind, memoryview(data)[start:start + length]) != stored:
        return f, "crc"
    if kind not in KINDS:
        return f, "kind"
    return f, None


def scan(data: bytes) -> ScanResult:
    """Split a log image into committed transactions, stopping at the first
    frame that is torn or fails its checksum."""
    result = ScanResult()
    if not check_header(data):
        result.header_present = False
        return result
    pos = HEADER_SIZE
    pending: list[Frame] = []
    while pos < len(data):
        f, problem = read_frame(data, pos)
        if problem:
            result.stop = problem
            result.stop_offset = pos
            result.damaged = f is not None and f.end < len(data)
            break
        pending.append(f)
        if f.kind == TXN_COMMIT:
            result.transactions.append(pending)
            result.committed_end = f.end
            pending = []
        pos = f.end
    return result


def walk_frames(data: bytes):
    """Yield ``(offset, frame, problem)`` for every frame, continuing past
    checksum failures by trusting the length prefix. Used by verify."""
    pos = HEADER_SIZE
    while pos < len(data):
        f, problem = read_frame(data, pos)
        yield pos, f, problem
        if f is None:
            return
        pos = f.end


# -- lock sentinel -------------------------------------------------------------

def _start_token(pid: int) -> float | None:
    try:
        return psutil.Process(pid).create_time()
    except (psutil.NoSuchProcess, psutil.AccessDenied, psutil.ZombieProcess):
        return None


class LockFile:
    """Sentinel file beside the store recording the holder's pid and process
    start time. A sentinel whose process is gone (or whose pid was reused by a
    newer process) is stale and silently replaced."""

    def __init__(self, store_path: str):
        self.path = store_path + ".lock"
        self.held = False

    def acquire(self, force: bool = False) -> None:
        me = {"pid": os.getpid(), "start": _start_token(os.getpid())}
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o644)
            except FileExistsError:
                holder = self._read()
                if not force and holder is not None and self._alive(holder):
                    raise Locked(self.path[:-5], holder.get("pid")) from None
                try:
                    os.unlink(self.path)
                except FileNotFoundError:
                    pass
                continue
            with os.fdopen(fd, "w") as fh:
                json.dump(me, fh)
            self.held = True
            return
        raise Locked(self.path[:-5])

    def release(self) -> None:
        if self.held:
            self.held = False
            try:
                os.unlink(self.path)
            except FileNotFoundError:
                pass

    def _read(self):
        try:
            with open(self.path) as fh:
                return json.load(fh)
        except (OSError, ValueError):
            return None

    @staticmethod
    def _alive(holder) -> bool:
        pid = holder.get("pid")
        if not isinstance(pid, int):
            return False
        token = _start_token(pid)
        return token is not None and token == holder.get("start")
