"""Request/response sessions between an agent and a synchronizer."""

from __future__ import annotations

import socket
from typing import Optional, Protocol, TypeVar

from . import wire
from .crypto import SUITE_ID
from .errors import SyncUnreachable, UnexpectedMessage, WireError, error_for_code
from .wire import Err, Message

M = TypeVar("M", bound=Message)


class Session(Protocol):
    def request(self, m: Message) -> Message: ...


def expect(reply: Message, cls: type[M]) -> M:
    """Return ``reply`` if it is a ``cls``; raise the remote error otherwise."""
    if isinstance(reply, Err):
        raise error_for_code(reply.code, reply.detail)
    if not isinstance(reply, cls):
        raise UnexpectedMessage(f"expected {cls.TYPE}, got {reply.TYPE}")
    return reply


class LocalSession:
    """In-process session that still goes through the canonical byte encoding."""

    def __init__(self, sync) -> None:
        self.sync = sync

    def request(self, m: Message) -> Message:
        return wire.decode(self.sync.dispatch_bytes(wire.canonical_encode(m)))


class OfflineSession:
    def request(self, m: Message) -> Message:
        raise SyncUnreachable("no synchronizer configured")


class TcpSession:
    """One persistent connection; reconnects lazily after a failure."""

    def __init__(self, host: str, port: int, suite_id: str = SUITE_ID, timeout: float = 10.0):
        self.address = (host, port)
        self.suite_id = suite_id
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._rfile = None

    def _connect(self) -> None:
        try:
            sock = socket.create_connection(self.address, timeout=self.timeout)
        except OSError as exc:
            raise SyncUnreachable(f"{self.address[0]}:{self.address[1]}: {exc}") from exc
        rfile = sock.makefile("rb")
        line = wire.handshake_line(self.suite_id)
        try:
            sock.sendall(line)
            answer = rfile.readline(256)
        except OSError as exc:
            sock.close()
            raise SyncUnreachable(str(exc)) from exc
        if answer != line:
            sock.close()
            raise SyncUnreachable(f"handshake refused: {answer!r}")
        self._sock, self._rfile = sock, rfile

    def request(self, m: Message) -> Message:
        if self._sock is None:
            self._connect()
        try:
            self._sock.sendall(wire.frame(wire.canonical_encode(m)))
            payload = wire.deframe(self._rfile)
        except (OSError, WireError) as exc:
            self.close()
            raise SyncUnreachable(str(exc)) from exc
        return wire.decode(payload)

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._rfile.close()
                self._sock.close()
            finally:
                self._sock = self._rfile = None
