"""In-memory state with a snapshot file and an append-only command log.

A state directory holds::

    snapshot.dc   one frame: {"body", "sequence", "state_kind", "suite_id"}
    log.dc        frames: {"record", "sequence"}, contiguous after the snapshot
    lock          "<pid> <nonce>" of the owning process

``load`` folds the log over the snapshot. A torn final record (the process
died mid-write) is dropped with a warning and cut off the file. ``save``
writes a new snapshot through a temp file and an atomic rename, then empties
the log. Records already folded into the snapshot are skipped on load, so a
crash between the rename and the log truncation is harmless.
"""

from __future__ import annotations

import errno
import logging
import os
import secrets
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Generic, Optional, TypeVar

from . import wire
from .errors import (
    CorruptLog,
    CorruptSnapshot,
    DiskFull,
    LockHeld,
    LockLost,
    LogGap,
    SuiteMismatch,
    WireError,
)

log = logging.getLogger(__name__)

SNAPSHOT_FILE = "snapshot.dc"
LOG_FILE = "log.dc"
LOCK_FILE = "lock"
TMP_SUFFIX = ".tmp"

S = TypeVar("S")


@dataclass(frozen=True)
class StateCodec(Generic[S]):
    """How one kind of state is bootstrapped, serialized and replayed."""

    kind: str
    empty: Callable[[], S]
    to_obj: Callable[[S], Any]
    from_obj: Callable[[Any], S]
    apply: Callable[[S, Any], None]


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _write_all(fd: int, data: bytes) -> None:
    view = memoryview(data)
    while view:
        try:
            n = os.write(fd, view)
        except OSError as exc:
            if exc.errno in (errno.ENOSPC, errno.EDQUOT):
                raise DiskFull(str(exc)) from exc
            raise
        view = view[n:]


def encode_snapshot(codec: StateCodec, suite_id: str, sequence: int, state: Any) -> bytes:
    return wire.frame(wire.dumps({
        "body": codec.to_obj(state), "sequence": sequence,
        "state_kind": codec.kind, "suite_id": suite_id,
    }))


def read_state(path: Path, codec: StateCodec[S], suite_id: str) -> tuple[S, int, int]:
    """Fold snapshot and log found in ``path``.

    Returns ``(state, sequence, good_log_length)``; the last item is the byte
    length of the log prefix that holds only complete records.
    """
    snap_path = path / SNAPSHOT_FILE
    if snap_path.exists():
        raw = snap_path.read_bytes()
        try:
            frames, end = wire.split_frames(raw)
            if len(frames) != 1 or end != len(raw):
                raise CorruptSnapshot("snapshot is not exactly one frame")
            obj = wire.loads(frames[0][1])
        except WireError as exc:
            raise CorruptSnapshot(str(exc)) from exc
        if not isinstance(obj, dict) or set(obj) != {"body", "sequence", "state_kind", "suite_id"}:
            raise CorruptSnapshot("snapshot has the wrong shape")
        if obj["suite_id"] != suite_id:
            raise SuiteMismatch(f"snapshot suite {obj['suite_id']!r}, expected {suite_id!r}")
        if obj["state_kind"] != codec.kind:
            raise CorruptSnapshot(f"snapshot holds {obj['state_kind']!r} state, expected {codec.kind!r}")
        try:
            state = codec.from_obj(obj["body"])
        except (WireError, KeyError, TypeError, ValueError) as exc:
            raise CorruptSnapshot(f"snapshot body: {exc}") from exc
        sequence = obj["sequence"]
    else:
        state, sequence = codec.empty(), 0

    log_path = path / LOG_FILE
    raw = log_path.read_bytes() if log_path.exists() else b""
    try:
        frames, good = wire.split_frames(raw)
    except WireError as exc:
        raise CorruptLog(str(exc)) from exc
    if good != len(raw):
        log.warning("%s: discarding torn final log record (%d bytes)", log_path, len(raw) - good)
    for offset, payload in frames:
        try:
            rec = wire.loads(payload)
        except WireError as exc:
            raise CorruptLog(f"record at offset {offset}: {exc}") from exc
        if not isinstance(rec, dict) or set(rec) != {"record", "sequence"}:
            raise CorruptLog(f"record at offset {offset} has the wrong shape")
        seq = rec["sequence"]
        if seq <= sequence:
            continue  # already folded into the snapshot
        if seq != sequence + 1:
            raise LogGap(f"expected record {sequence + 1}, found {seq}")
        codec.apply(state, rec["record"])
        sequence = seq
    return state, sequence, good


class StateDir(Generic[S]):
    """Single-owner handle on a state directory.

    ``durable=False`` skips fsync; the write order is unchanged, so the files
    still survive a crash of this process, just not of the machine.
    """

    def __init__(self, path: os.PathLike | str, codec: StateCodec[S], suite_id: str,
                 *, durable: bool = True) -> None:
        self.path = Path(path)
        self.codec = codec
        self.suite_id = suite_id
        self.durable = durable
        self.sequence = 0
        self._nonce: Optional[str] = None
        self._log_fd: Optional[int] = None

    # -- lock
    def _acquire(self) -> None:
        self.path.mkdir(parents=True, exist_ok=True)
        lock = self.path / LOCK_FILE
        nonce = secrets.token_hex(16)
        for _ in range(2):
            try:
                fd = os.open(lock, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
            except FileExistsError:
                holder = lock.read_text().split()
                pid = int(holder[0]) if holder and holder[0].isdigit() else -1
                if pid > 0 and _pid_alive(pid):
                    raise LockHeld(f"{self.path} is locked by pid {pid}")
                log.warning("%s: removing stale lock of pid %s", self.path, pid)
                lock.unlink(missing_ok=True)
                continue
            with os.fdopen(fd, "w") as fh:
                fh.write(f"{os.getpid()} {nonce}\n")
            self._nonce = nonce
            return
        raise LockHeld(f"could not take the lock on {self.path}")

    def _check_lock(self) -> None:
        try:
            holder = (self.path / LOCK_FILE).read_text().split()
        except FileNotFoundError:
            holder = []
        if self._nonce is None or len(holder) != 2 or holder[1] != self._nonce:
            raise LockLost(f"lock on {self.path} is no longer ours")

    # -- lifecycle
    def open(self) -> S:
        """Take the lock and recover the state."""
        self._acquire()
        try:
            (self.path / (SNAPSHOT_FILE + TMP_SUFFIX)).unlink(missing_ok=True)
            state, self.sequence, good = read_state(self.path, self.codec, self.suite_id)
            if not (self.path / SNAPSHOT_FILE).exists():
                self._write_snapshot(state)
            log_path = self.path / LOG_FILE
            self._log_fd = os.open(log_path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o600)
            if os.fstat(self._log_fd).st_size != good:
                os.ftruncate(self._log_fd, good)
                self._sync(self._log_fd)
        except BaseException:
            self.abandon()
            raise
        return state

    def append(self, record: Any) -> int:
        """Durably log one command and return its sequence number."""
        if self._log_fd is None:
            raise LockLost("state directory is not open")
        self._check_lock()
        seq = self.sequence + 1
        _write_all(self._log_fd, wire.frame(wire.dumps({"record": record, "sequence": seq})))
        self._sync(self._log_fd)
        self.sequence = seq
        return seq

    def save(self, state: S) -> None:
        """Write a fresh snapshot atomically and empty the log."""
        if self._log_fd is None:
            raise LockLost("state directory is not open")
        self._check_lock()
        self._write_snapshot(state)
        os.ftruncate(self._log_fd, 0)
        self._sync(self._log_fd)

    def close(self, state: Optional[S] = None) -> None:
        if state is not None and self._log_fd is not None:
            self.save(state)
        self.abandon()

    def abandon(self) -> None:
        """Release everything without saving, as a crashed process would."""
        if self._log_fd is not None:
            os.close(self._log_fd)
            self._log_fd = None
        if self._nonce is not None:
            try:
                holder = (self.path / LOCK_FILE).read_text().split()
                if len(holder) == 2 and holder[1] == self._nonce:
                    (self.path / LOCK_FILE).unlink()
            except FileNotFoundError:
                pass
            self._nonce = None

    @property
    def is_open(self) -> bool:
        return self._log_fd is not None

    # -- internals
    def _sync(self, fd: int) -> None:
        if self.durable:
            os.fsync(fd)

    def _write_snapshot(self, state: S) -> None:
        data = encode_snapshot(self.codec, self.suite_id, self.sequence, state)
        tmp = self.path / (SNAPSHOT_FILE + TMP_SUFFIX)
        fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        try:
            _write_all(fd, data)
            self._sync(fd)
        finally:
            os.close(fd)
        os.replace(tmp, self.path / SNAPSHOT_FILE)
        if self.durable:
            dfd = os.open(self.path, os.O_RDONLY)
            try:
                os.fsync(dfd)
            finally:
                os.close(dfd)

    def durable_bytes(self) -> bytes:
        """Snapshot and log bytes as currently on disk (lock file excluded)."""
        out = b""
        for name in (SNAPSHOT_FILE, LOG_FILE):
            p = self.path / name
            if p.exists():
                out += p.read_bytes()
        return out


def load(path: os.PathLike | str, codec: StateCodec[S], suite_id: str) -> S:
    """Recover the state in ``path`` without taking ownership of it."""
    path = Path(path)
    if not path.exists():
        return codec.empty()
    return read_state(path, codec, suite_id)[0]
