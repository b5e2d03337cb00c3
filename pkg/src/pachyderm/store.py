"""Store sessions over a single append-only log file.

>>> with open_store("shop.pdb") as s:               # doctest: +SKIP
...     s.define_class("photo", ["filename"])
...     h = s.create_instance("photo", {"filename": "1.jpg"})
...     s.commit()

Opening scans the whole log and rebuilds the indexes in memory. Records are
decoded lazily, on first access through a handle. ``commit`` is the only
durability point: dirty records, schema changes and deletions go out as one
transaction followed by an fsync.
"""

from __future__ import annotations

import contextlib
import logging
import os
import threading
from collections import Counter
from dataclasses import dataclass, field

from . import codec, log, migration, objects
from .codec import InstanceRecord
from .errors import (
    CorruptStore,
    ConcurrentAccess,
    DecodeError,
    DirtySession,
    IoFailure,
    PachydermError,
    SchemaError,
    SessionClosed,
)
from .schema import ClassDescriptor, Registry, decode_descriptor, encode_descriptor
from .values import iter_refs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IndexEntry:
    offset: int  # payload offset in the log file
    length: int
    class_name: str
    version: int


@dataclass(frozen=True)
class Finding:
    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind} {self.detail}"


@dataclass
class VerifyReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def kinds(self) -> list[str]:
        return [f.kind for f in self.findings]

    def __iter__(self):
        return iter(self.findings)

    def __len__(self) -> int:
        return len(self.findings)


def _fsync_dir(path: str) -> None:
    try:
        fd = os.open(os.path.dirname(os.path.abspath(path)), os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


class Session:
    """Exclusive, single-threaded view of one store file.

    Use :func:`open_store` rather than constructing this directly.
    """

    def __init__(self, path: str, *, force_unlock: bool = False):
        self.path = os.fspath(path)
        self._lock = log.LockFile(self.path)
        self._lock.acquire(force=force_unlock)
        self._fd = None
        self._busy = threading.RLock()
        self._closed = False
        self.upgrade_counter = migration.UpgradeCounter()
        self.init_calls: Counter = Counter()
        self._init_hooks: dict = {}
        self._migration_hooks: dict = {}
        self._warned: set = set()
        try:
            if not os.path.exists(self.path):
                self._initialize()
            self._fd = os.open(self.path, os.O_RDWR)
            self._load()
        except BaseException:
            self._release()
            raise

    # -- lifecycle -------------------------------------------------------------

    def _initialize(self) -> None:
        image = log.HEADER + log.frame(log.TXN_COMMIT, log.commit_payload(1))
        try:
            fd = os.open(self.path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o644)
            try:
                os.write(fd, image)
                os.fsync(fd)
            finally:
                os.close(fd)
            _fsync_dir(self.path)
        except OSError as exc:
            raise IoFailure(f"cannot create {self.path}: {exc}") from exc

    def _read_image(self) -> bytes:
        try:
            size = os.fstat(self._fd).st_size
            return os.pread(self._fd, size, 0)
        except OSError as exc:
            raise IoFailure(f"cannot read {self.path}: {exc}") from exc

    def _load(self) -> None:
        """(Re)build every committed index from the log image."""
        data = self._read_image()
        scan = log.scan(data)
        self.registry = Registry()
        self._index: dict[int, IndexEntry] = {}
        self._extents: dict[str, set[int]] = {}
        self._deleted: set[int] = set()
        self._high_water = 0
        self._seq = 0
        self._commit_count = 0
        self._handles: dict[int, objects.Handle] = {}
        self._dirty: set[int] = set()
        self._created: dict[int, str] = {}
        self._tombstones: set[int] = set()
        self._file_size = len(data)
        self._committed_end = scan.committed_end if scan.header_present else 0
        self._damaged = scan.damaged
        if scan.damaged:
            logger.warning("%s: corrupt record at offset %d; store is read-only", self.path, scan.stop_offset)
        elif scan.stop != "eof" or scan.committed_end < len(data):
            logger.info("%s: discarding %d bytes after the last commit", self.path, len(data) - self._committed_end)
        for txn in scan.transactions:
            for f in txn:
                self._apply(f, data)
        self._next_oid = self._high_water + 1

    def _apply(self, f: log.Frame, data: bytes) -> None:
        payload = memoryview(data)[f.payload_offset:f.payload_offset + f.length]
        try:
            if f.kind in (log.SCHEMA_DEFINE, log.SCHEMA_REDEFINE):
                desc = decode_descriptor(payload)
                if (desc.version == 1) != (f.kind == log.SCHEMA_DEFINE):
                    raise CorruptStore(f"descriptor kind mismatch at offset {f.offset}")
                self.registry.load(desc)
            elif f.kind == log.INSTANCE_WRITE:
                oid, class_name, version = codec.decode_record_header(payload)
                self._index[oid] = IndexEntry(f.payload_offset, f.length, class_name, version)
                self._extents.setdefault(class_name, set()).add(oid)
                self._high_water = max(self._high_water, oid)
            elif f.kind == log.INSTANCE_DELETE:
                oid = log.read_u64(payload)
                entry = self._index.pop(oid, None)
                if entry is not None:
                    self._extents[entry.class_name].discard(oid)
                self._deleted.add(oid)
                self._high_water = max(self._high_water, oid)
            elif f.kind == log.TXN_COMMIT:
                self._seq = log.read_u64(payload)
                self._commit_count += 1
        except (DecodeError, SchemaError) as exc:
            raise CorruptStore(f"{self.path}: undecodable record at offset {f.offset}: {exc}") from exc
        finally:
            payload.release()

    def close(self) -> None:
        """Release the file and the lock. Staged changes are discarded."""
        if self._closed:
            return
        self._closed = True
        self._release()

    def _release(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        self._lock.release()

    def __enter__(self) -> Session:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self) -> str:
        return f"<Session {self.path!r} seq={self._seq}{' closed' if self._closed else ''}>"

    @contextlib.contextmanager
    def _guard(self):
        """Fail fast on use from two threads at once or after close."""
        if self._closed:
            raise SessionClosed(f"session on {self.path} is closed")
        if not self._busy.acquire(blocking=False):
            raise ConcurrentAccess(f"session on {self.path} is in use by another thread")
        try:
            yield
        finally:
            self._busy.release()

    # -- read-only state -----------------------------------------------------

    @property
    def sequence(self) -> int:
        """Sequence number of the last committed transaction (0 if none)."""
        return self._seq

    @property
    def damaged(self) -> bool:
        return self._damaged

    @property
    def has_staged_changes(self) -> bool:
        return bool(self._dirty or self._tombstones or self._created or self.registry.staged())

    def live_oids(self) -> list[int]:
        """Every live oid, staged creations and deletions included, ascending."""
        with self._guard():
            oids = set(self._index)
            oids.update(self._created)
            oids.difference_update(self._tombstones)
            return sorted(oids)

    def class_names(self) -> list[str]:
        return self.registry.names()

    # -- schema ----------------------------------------------------------------

    def define_class(self, name: str, slots=()) -> ClassDescriptor:
        with self._guard():
            return self.registry.define_class(name, slots)

    def redefine_class(self, name: str, slots=()):
        with self._guard():
            return self.registry.redefine_class(name, slots)

    def get_descriptor(self, name: str, version: int | None = None) -> ClassDescriptor:
        return self.registry.get_descriptor(name, version)

    # -- objects ---------------------------------------------------------------

    def create_instance(self, class_name: str, init_args=None) -> objects.Handle:
        return objects.create_instance(self, class_name, init_args)

    def lookup_instance(self, oid: int) -> objects.Handle:
        return objects.lookup_instance(self, oid)

    def register_init_hook(self, class_name: str, hook) -> None:
        objects.register_init_hook(self, class_name, hook)

    def register_migration_hook(self, class_name: str, target_version: int, hook) -> None:
        objects.register_migration_hook(self, class_name, target_version, hook)

    def extent(self, class_name: str) -> list[int]:
        return migration.extent(self, class_name)

    def ensure_current(self, handle: objects.Handle) -> int:
        return migration.ensure_current(self, handle)

    def migrate_eager(self, class_name: str) -> int:
        return migration.migrate_eager(self, class_name)

    # -- internals used by objects / migration / graph -----------------------

    def _allocate_oid(self) -> int:
        oid = self._next_oid
        self._next_oid += 1
        return oid

    def _release_oid(self, oid: int) -> None:
        if oid == self._next_oid - 1:
            self._next_oid = oid

    def _adopt_created(self, handle: objects.Handle) -> None:
        self._handles[handle.oid] = handle
        self._created[handle.oid] = handle.class_name
        self._mark_dirty(handle)

    def _mark_dirty(self, handle: objects.Handle) -> None:
        handle._dirty = True
        self._dirty.add(handle.oid)

    def _stage_delete(self, handle: objects.Handle) -> None:
        handle._status = objects._DELETED
        self._tombstones.add(handle.oid)

    def _read_committed(self, oid: int) -> InstanceRecord:
        entry = self._index[oid]
        try:
            raw = os.pread(self._fd, entry.length, entry.offset)
        except OSError as exc:
            raise IoFailure(f"cannot read object {oid}: {exc}") from exc
        if len(raw) != entry.length:
            raise CorruptStore(f"object {oid}: short read")
        try:
            return codec.decode_record(raw)
        except DecodeError as exc:
            raise CorruptStore(f"object {oid}: {exc}") from exc

    def _ensure_loaded(self, handle: objects.Handle) -> InstanceRecord:
        if handle._record is None:
            handle._record = self._read_committed(handle.oid)
        return handle._record

    def _record_of(self, oid: int) -> InstanceRecord:
        """Current in-session record of a live oid, as stored (not migrated)."""
        return self._ensure_loaded(self.lookup_instance(oid))

    def _is_live(self, oid: int) -> bool:
        return (oid in self._index or oid in self._created) and oid not in self._tombstones

    # -- transactions --------------------------------------------------------

    def commit(self) -> int:
        """Write all staged changes as one transaction; return its sequence number."""
        with self._guard():
            if self._damaged:
                raise CorruptStore(f"{self.path} is damaged; run verify and restore before writing")
            staged = self.registry.staged()
            if not (staged or self._dirty or self._tombstones):
                return self._seq
            seq = self._seq + 1
            parts: list[tuple[int, bytes, object]] = []
            for desc in staged:
                kind = log.SCHEMA_DEFINE if desc.version == 1 else log.SCHEMA_REDEFINE
                parts.append((kind, encode_descriptor(desc), None))
            for oid in sorted(self._dirty):
                if oid in self._tombstones and oid not in self._created:
                    continue
                record = self._handles[oid]._record
                parts.append((log.INSTANCE_WRITE, codec.encode_record(record), record))
            for oid in sorted(self._tombstones):
                parts.append((log.INSTANCE_DELETE, log.delete_payload(oid), oid))
            parts.append((log.TXN_COMMIT, log.commit_payload(seq), None))

            base = self._committed_end
            prefix = b"" if base else log.HEADER
            start = base if base else log.HEADER_SIZE
            chunks, placed, pos = [prefix], [], start
            for kind, payload, what in parts:
                framed = log.frame(kind, payload)
                chunks.append(framed)
                placed.append((kind, pos + 5, len(payload), what))
                pos += len(framed)
            image = b"".join(chunks)
            try:
                if self._file_size > base:
                    os.ftruncate(self._fd, base)
                    self._file_size = base
                written = os.pwrite(self._fd, image, base)
                if written != len(image):
                    raise OSError(f"short write ({written} of {len(image)} bytes)")
                os.fsync(self._fd)
            except OSError as exc:
                try:
                    os.ftruncate(self._fd, base)
                    self._file_size = base
                except OSError:
                    self._file_size = max(self._file_size, base + len(image))
                raise IoFailure(f"commit to {self.path} failed: {exc}") from exc

            self._committed_end = self._file_size = pos
            for kind, offset, length, what in placed:
                if kind == log.INSTANCE_WRITE:
                    self._index[what.oid] = IndexEntry(offset, length, what.class_name, what.version)
                    self._extents.setdefault(what.class_name, set()).add(what.oid)
                    self._high_water = max(self._high_water, what.oid)
                elif kind == log.INSTANCE_DELETE:
                    entry = self._index.pop(what, None)
                    if entry is not None:
                        self._extents[entry.class_name].discard(what)
                    self._deleted.add(what)
                    self._high_water = max(self._high_water, what)
            for oid in self._dirty:
                handle = self._handles.get(oid)
                if handle is not None:
                    handle._dirty = False
            self._dirty.clear()
            self._created.clear()
            self._tombstones.clear()
            self.registry.mark_committed()
            self._seq = seq
            self._commit_count += 1
            return seq

    def rollback(self) -> None:
        """Discard every staged change; cached handles go back to not-loaded."""
        with self._guard():
            self.registry.discard_staged()
            for oid in self._created:
                handle = self._handles.pop(oid, None)
                if handle is not None:
                    handle._status = objects._GONE
                    handle._record = None
            for handle in self._handles.values():
                handle._record = None
                handle._transient = {}
                handle._dirty = False
                handle._status = objects._LIVE
            self._next_oid = self._high_water + 1
            self._dirty.clear()
            self._created.clear()
            self._tombstones.clear()
            for key in [k for k in self._migration_hooks if k[0] not in self.registry]:
                del self._migration_hooks[key]
            for key in [k for k in self._init_hooks if k not in self.registry]:
                del self._init_hooks[key]

    # -- maintenance ---------------------------------------------------------

    def compact(self) -> tuple[int, int]:
        """Rewrite the log keeping only the latest version of each live record.

        Returns ``(old_size, new_size)`` in bytes.
        """
        with self._guard():
            if self.has_staged_changes:
                raise DirtySession("commit or roll back staged changes before compacting")
            if self._damaged:
                raise CorruptStore(f"{self.path} is damaged; refusing to compact")
            old_size = self._file_size
            chunks = [log.HEADER]
            for name in self.registry.names():
                for desc in self.registry.history(name):
                    kind = log.SCHEMA_DEFINE if desc.version == 1 else log.SCHEMA_REDEFINE
                    chunks.append(log.frame(kind, encode_descriptor(desc)))
            try:
                for oid in sorted(self._index):
                    entry = self._index[oid]
                    raw = os.pread(self._fd, entry.length, entry.offset)
                    chunks.append(log.frame(log.INSTANCE_WRITE, raw))
                if self._seq:
                    chunks.append(log.frame(log.TXN_COMMIT, log.commit_payload(self._seq)))
                image = b"".join(chunks)
                tmp = self.path + ".compact"
                fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
                try:
                    os.write(fd, image)
                    os.fsync(fd)
                finally:
                    os.close(fd)
                os.replace(tmp, self.path)
                _fsync_dir(self.path)
            except OSError as exc:
                with contextlib.suppress(OSError):
                    os.unlink(self.path + ".compact")
                raise IoFailure(f"compaction of {self.path} failed: {exc}") from exc
            os.close(self._fd)
            self._fd = os.open(self.path, os.O_RDWR)
            handles = self._handles
            counter, calls, warned = self.upgrade_counter, self.init_calls, self._warned
            self._load()
            # loaded handles stay valid: compaction keeps every record unchanged
            self._handles = handles
            self.upgrade_counter, self.init_calls, self._warned = counter, calls, warned
            return old_size, len(image)

    def verify(self) -> VerifyReport:
        """Audit the committed log: checksums, references, versions, extents."""
        with self._guard():
            report = VerifyReport()
            add = report.findings.append
            data = self._read_image()
            if len(data) < log.HEADER_SIZE:
                if data:
                    add(Finding("TruncatedTail", f"offset=0 header has {len(data)} of {log.HEADER_SIZE} bytes"))
                return report
            last_commit_end = log.HEADER_SIZE
            for offset, f, problem in log.walk_frames(data):
                if problem == "truncated":
                    add(Finding("TruncatedTail", f"offset={offset} bytes={len(data) - offset}"))
                elif problem == "crc":
                    add(Finding("CrcMismatch", f"offset={offset} kind=0x{f.kind:02X} length={f.length}"))
                elif problem == "kind":
                    add(Finding("UnknownKind", f"offset={offset} kind=0x{f.kind:02X}"))
                elif f.kind == log.TXN_COMMIT:
                    last_commit_end = f.end
            if not report.findings and last_commit_end < len(data):
                add(Finding("UncommittedTail", f"offset={last_commit_end} bytes={len(data) - last_commit_end}"))

            recomputed: dict[str, set[int]] = {}
            for oid in sorted(self._index):
                entry = self._index[oid]
                recomputed.setdefault(entry.class_name, set()).add(oid)
                try:
                    record = self._read_committed(oid)
                except PachydermError as exc:
                    add(Finding("Undecodable", f"oid={oid} {exc}"))
                    continue
                if record.oid != oid or record.class_name != entry.class_name:
                    add(Finding("IndexMismatch", f"oid={oid} record says {record.class_name}#{record.oid}"))
                if entry.class_name not in self.registry:
                    add(Finding("UnknownClass", f"oid={oid} class={entry.class_name}"))
                else:
                    current = self.registry.current(entry.class_name).version
                    if record.version > current:
                        add(Finding("VersionAhead", f"oid={oid} version={record.version} current={current}"))
                seen = set()
                for value in record.slots.values():
                    for target in iter_refs(value):
                        if target not in self._index and target not in seen:
                            seen.add(target)
                            add(Finding("DanglingRef", f"from={oid} to={target}"))
            actual = {k: v for k, v in self._extents.items() if v}
            if actual != recomputed:
                for name in sorted(set(actual) | set(recomputed)):
                    if actual.get(name, set()) != recomputed.get(name, set()):
                        add(Finding("ExtentMismatch", f"class={name}"))
            return report

    def info(self) -> dict:
        with self._guard():
            return {
                "classes": len(self.registry.names()),
                "objects": len(self._index),
                "commits": self._seq,
                "bytes": self._file_size,
            }


def open_store(path, *, force_unlock: bool = False) -> Session:
    """Open the store at ``path``, creating and initializing it if absent."""
    return Session(path, force_unlock=force_unlock)
