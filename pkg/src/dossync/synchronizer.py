"""The untrusted synchronizer: key registry, wrapped-key store, pending queues.

Every handler is split into a ``check`` that may reject and an ``apply``
that cannot fail. :class:`Synchronizer` runs check, logs the message, then
applies, so the journal only ever holds messages whose replay is a plain
apply. Nothing in here ever sees a plaintext dossier or an unwrapped key.
"""

from __future__ import annotations

import logging
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from . import wire
from .crypto import SUITE_ID, PublicKeyBundle, WrappedKey, verify
from .errors import (
    BadSignature,
    DossierError,
    FrameTooLarge,
    KeyConflict,
    NoKey,
    NotGrantOwner,
    OwnerAsReceiver,
    ReplayedRequest,
    TruncatedFrame,
    UnexpectedMessage,
    UnknownOwner,
    UnknownUser,
    WireError,
)
from .store import StateCodec, StateDir
from .wire import (
    Ack,
    Err,
    Fetch,
    GetKey,
    Grant,
    Lookup,
    Message,
    OkBundle,
    OkEmpty,
    OkKey,
    OkPending,
    PendingWire,
    Register,
    Revoke,
    Send,
)

log = logging.getLogger(__name__)


@dataclass
class PendingEntry:
    entry_id: int
    dossier: str
    owner: str
    receiver: str
    version: int
    nonce: bytes
    ciphertext: bytes
    signature: bytes

    def to_wire(self) -> PendingWire:
        return PendingWire(self.entry_id, self.dossier, self.owner, self.version,
                           self.nonce, self.ciphertext, self.signature)


@dataclass
class SyncState:
    registry: dict[str, PublicKeyBundle] = field(default_factory=dict)
    keystore: dict[tuple[str, str], WrappedKey] = field(default_factory=dict)
    pending: dict[str, list[PendingEntry]] = field(default_factory=dict)
    last_seq: dict[str, int] = field(default_factory=dict)
    next_entry_id: int = 1
    # first owner to grant or send a dossier id keeps it
    owners: dict[str, str] = field(default_factory=dict)


# ------------------------------------------------------------ serialization

def state_to_obj(s: SyncState) -> dict[str, Any]:
    b64 = wire.b64
    keystore: dict[str, dict[str, Any]] = {}
    for (d, r), wk in s.keystore.items():
        keystore.setdefault(d, {})[r] = {"owner": wk.owner, "signature": b64(wk.signature),
                                         "wrapped": b64(wk.wrapped)}
    return {
        "keystore": keystore,
        "last_seq": dict(s.last_seq),
        "next_entry_id": s.next_entry_id,
        "owners": dict(s.owners),
        "pending": {
            r: [{"ciphertext": b64(e.ciphertext), "dossier": e.dossier, "entry_id": e.entry_id,
                 "nonce": b64(e.nonce), "owner": e.owner, "signature": b64(e.signature),
                 "version": e.version} for e in entries]
            for r, entries in s.pending.items() if entries
        },
        "registry": {u: {"enc_public": b64(b.enc_public), "sig_public": b64(b.sig_public)}
                     for u, b in s.registry.items()},
    }


def state_from_obj(obj: dict[str, Any]) -> SyncState:
    unb64 = wire.unb64
    s = SyncState(next_entry_id=obj["next_entry_id"], last_seq=dict(obj["last_seq"]),
                  owners=dict(obj["owners"]))
    for u, b in obj["registry"].items():
        s.registry[u] = PublicKeyBundle(u, unb64(b["enc_public"]), unb64(b["sig_public"]))
    for d, row in obj["keystore"].items():
        for r, wk in row.items():
            s.keystore[(d, r)] = WrappedKey(d, wk["owner"], r, unb64(wk["wrapped"]),
                                            unb64(wk["signature"]))
    for r, entries in obj["pending"].items():
        s.pending[r] = [PendingEntry(e["entry_id"], e["dossier"], e["owner"], r, e["version"],
                                     unb64(e["nonce"]), unb64(e["ciphertext"]),
                                     unb64(e["signature"])) for e in entries]
    return s


def serialize_state(s: SyncState) -> bytes:
    return wire.dumps(state_to_obj(s))


# ----------------------------------------------------------------- handlers

def _registered(s: SyncState, user: str, exc: type[DossierError]) -> PublicKeyBundle:
    bundle = s.registry.get(user)
    if bundle is None:
        raise exc(user)
    return bundle


def _check_signed(s: SyncState, m: Message, signer: str, missing: type[DossierError]) -> None:
    bundle = _registered(s, signer, missing)
    if not verify(wire.signing_bytes(m), m.signature, bundle):
        raise BadSignature(f"{m.TYPE} from {signer}")


def _check_fresh(s: SyncState, user: str, seq: int) -> None:
    if seq <= s.last_seq.get(user, 0):
        raise ReplayedRequest(f"{user} request_seq {seq} <= {s.last_seq.get(user, 0)}")


def _check_dossier_owner(s: SyncState, dossier: str, owner: str) -> None:
    holder = s.owners.get(dossier)
    if holder is not None and holder != owner:
        raise NotGrantOwner(f"{dossier} belongs to another user")


def check_register(s: SyncState, m: Register) -> None:
    bundle = PublicKeyBundle(m.user, m.enc_public, m.sig_public).validate()
    known = s.registry.get(m.user)
    if known is not None and known != bundle:
        raise KeyConflict(f"{m.user} is already registered with different keys")


def apply_register(s: SyncState, m: Register) -> Message:
    s.registry.setdefault(m.user, PublicKeyBundle(m.user, m.enc_public, m.sig_public))
    return OkEmpty()


def check_grant(s: SyncState, m: Grant) -> None:
    _check_signed(s, m, m.owner, UnknownOwner)
    if m.receiver == m.owner:
        raise OwnerAsReceiver(m.owner)
    _check_dossier_owner(s, m.dossier, m.owner)


def apply_grant(s: SyncState, m: Grant) -> Message:
    s.owners.setdefault(m.dossier, m.owner)
    s.keystore[(m.dossier, m.receiver)] = WrappedKey(m.dossier, m.owner, m.receiver,
                                                     m.wrapped, m.signature)
    return OkEmpty()


def check_send(s: SyncState, m: Send) -> None:
    _check_signed(s, m, m.owner, UnknownOwner)
    _check_dossier_owner(s, m.dossier, m.owner)


def apply_send(s: SyncState, m: Send) -> Message:
    s.owners.setdefault(m.dossier, m.owner)
    queue = s.pending.setdefault(m.receiver, [])
    if any(e.dossier == m.dossier and e.version == m.version for e in queue):
        return OkEmpty()
    queue.append(PendingEntry(s.next_entry_id, m.dossier, m.owner, m.receiver, m.version,
                              m.nonce, m.ciphertext, m.signature))
    s.next_entry_id += 1
    return OkEmpty()


def check_read(s: SyncState, m: Fetch | Ack | GetKey) -> None:
    _check_signed(s, m, m.receiver, UnknownUser)
    _check_fresh(s, m.receiver, m.request_seq)


def apply_fetch(s: SyncState, m: Fetch) -> Message:
    s.last_seq[m.receiver] = m.request_seq
    return OkPending(tuple(e.to_wire() for e in s.pending.get(m.receiver, ())))


def apply_ack(s: SyncState, m: Ack) -> Message:
    s.last_seq[m.receiver] = m.request_seq
    gone = set(m.entry_ids)
    queue = s.pending.get(m.receiver)
    if queue:
        queue[:] = [e for e in queue if e.entry_id not in gone]
        if not queue:
            del s.pending[m.receiver]
    return OkEmpty()


def apply_getkey(s: SyncState, m: GetKey) -> Message:
    s.last_seq[m.receiver] = m.request_seq
    wk = s.keystore.get((m.dossier, m.receiver))
    if wk is None:
        # never granted and revoked look the same on purpose
        return Err(NoKey.__name__, m.dossier)
    return OkKey(wk.wrapped)


def check_revoke(s: SyncState, m: Revoke) -> None:
    _check_signed(s, m, m.owner, UnknownOwner)
    wk = s.keystore.get((m.dossier, m.receiver))
    if wk is not None and wk.owner != m.owner:
        raise NotGrantOwner(f"{m.owner} did not grant {m.dossier} to {m.receiver}")
    _check_dossier_owner(s, m.dossier, m.owner)


def apply_revoke(s: SyncState, m: Revoke) -> Message:
    s.keystore.pop((m.dossier, m.receiver), None)
    queue = s.pending.get(m.receiver)
    if queue:
        queue[:] = [e for e in queue if not (e.dossier == m.dossier and e.owner == m.owner)]
        if not queue:
            del s.pending[m.receiver]
    return OkEmpty()


def check_lookup(s: SyncState, m: Lookup) -> None:
    _registered(s, m.user, UnknownUser)


def apply_lookup(s: SyncState, m: Lookup) -> Message:
    b = s.registry[m.user]
    return OkBundle(b.user, b.enc_public, b.sig_public)


_Handler = tuple[Callable[[SyncState, Any], None], Callable[[SyncState, Any], Message], bool]

HANDLERS: dict[type, _Handler] = {
    Register: (check_register, apply_register, True),
    Grant: (check_grant, apply_grant, True),
    Send: (check_send, apply_send, True),
    Fetch: (check_read, apply_fetch, True),
    Ack: (check_read, apply_ack, True),
    GetKey: (check_read, apply_getkey, True),
    Revoke: (check_revoke, apply_revoke, True),
    Lookup: (check_lookup, apply_lookup, False),
}


def _handle(s: SyncState, m: Message) -> Message:
    check, apply, _ = HANDLERS[type(m)]
    check(s, m)
    return apply(s, m)


def handle_register(s: SyncState, m: Register) -> Message:
    return _handle(s, m)


def handle_grant(s: SyncState, m: Grant) -> Message:
    return _handle(s, m)


def handle_send(s: SyncState, m: Send) -> Message:
    return _handle(s, m)


def handle_fetch(s: SyncState, m: Fetch) -> OkPending:
    return _handle(s, m)


def handle_ack(s: SyncState, m: Ack) -> Message:
    return _handle(s, m)


def handle_getkey(s: SyncState, m: GetKey) -> Message:
    return _handle(s, m)


def handle_revoke(s: SyncState, m: Revoke) -> Message:
    return _handle(s, m)


def replay(s: SyncState, record: Any) -> None:
    """Apply one journaled message; it already passed its checks once."""
    m = wire.from_obj(record)
    HANDLERS[type(m)][1](s, m)


SYNC_CODEC: StateCodec[SyncState] = StateCodec(
    kind="synchronizer", empty=SyncState, to_obj=state_to_obj, from_obj=state_from_obj,
    apply=replay,
)


def audit(s: SyncState) -> list[str]:
    """Re-verify every stored signature and the queue invariants."""
    problems = []
    for (d, r), wk in sorted(s.keystore.items()):
        bundle = s.registry.get(wk.owner)
        m = Grant(d, wk.owner, r, wk.wrapped, wk.signature)
        if bundle is None or not verify(wire.signing_bytes(m), wk.signature, bundle):
            problems.append(f"keystore {d}/{r}: signature does not verify")
    for r, queue in sorted(s.pending.items()):
        seen = set()
        last = 0
        for e in queue:
            bundle = s.registry.get(e.owner)
            if bundle is None or not verify(wire.pending_signing_bytes(e.to_wire(), r),
                                            e.signature, bundle):
                problems.append(f"pending {e.entry_id}: signature does not verify")
            if e.entry_id <= last or e.entry_id >= s.next_entry_id:
                problems.append(f"pending {e.entry_id}: id out of order")
            last = e.entry_id
            if (e.dossier, e.version) in seen:
                problems.append(f"pending {e.entry_id}: duplicate version")
            seen.add((e.dossier, e.version))
    return problems


class Synchronizer:
    """Serializes all mutations and journals each one before it takes effect."""

    def __init__(self, state: Optional[SyncState] = None,
                 journal: Optional[StateDir[SyncState]] = None) -> None:
        self.state = state if state is not None else SyncState()
        self.journal = journal
        self._lock = threading.Lock()

    @classmethod
    def open(cls, path, suite_id: str = SUITE_ID, *, durable: bool = True) -> "Synchronizer":
        journal = StateDir(path, SYNC_CODEC, suite_id, durable=durable)
        return cls(journal.open(), journal)

    def handle(self, m: Message) -> Message:
        entry = HANDLERS.get(type(m))
        if entry is None:
            raise UnexpectedMessage(f"{m.TYPE} is not a request")
        check, apply, logged = entry
        with self._lock:
            check(self.state, m)
            if logged and self.journal is not None:
                self.journal.append(wire.to_obj(m))
            return apply(self.state, m)

    def dispatch(self, m: Message) -> Message:
        try:
            return self.handle(m)
        except DossierError as exc:
            return Err(exc.code, str(exc)[:200])

    def dispatch_bytes(self, payload: bytes) -> bytes:
        try:
            m = wire.decode(payload)
        except WireError as exc:
            return wire.canonical_encode(Err(exc.code, str(exc)[:200]))
        return wire.canonical_encode(self.dispatch(m))

    def save(self) -> None:
        with self._lock:
            if self.journal is not None:
                self.journal.save(self.state)

    def close(self, save: bool = True) -> None:
        with self._lock:
            if self.journal is not None:
                self.journal.close(self.state if save else None)
                self.journal = None

    def crash(self) -> None:
        """Drop the in-memory state and the lock without saving."""
        with self._lock:
            if self.journal is not None:
                self.journal.abandon()
                self.journal = None
            self.state = SyncState()


# ------------------------------------------------------------------ network

class _ConnectionHandler(socketserver.StreamRequestHandler):
    server: "SyncServer"

    def handle(self) -> None:
        expected = wire.handshake_line(self.server.suite_id)
        line = self.rfile.readline(256)
        if line != expected:
            self.wfile.write(b"ERR suite\n")
            return
        self.wfile.write(expected)
        self.wfile.flush()
        sync = self.server.sync
        while True:
            try:
                payload = wire.read_frame(self.rfile)
            except FrameTooLarge as exc:
                # the stream cannot be resynchronized after a bad length
                self._reply(wire.canonical_encode(Err(exc.code, str(exc))))
                return
            except (TruncatedFrame, OSError):
                return
            if payload is None:
                return
            try:
                reply = sync.dispatch_bytes(payload)
            except Exception:  # keep the service up whatever one request does
                log.exception("request failed")
                reply = wire.canonical_encode(Err("Internal", "request failed"))
            if not self._reply(reply):
                return

    def _reply(self, payload: bytes) -> bool:
        try:
            self.wfile.write(wire.frame(payload))
            self.wfile.flush()
            return True
        except OSError:
            return False


class SyncServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], sync: Synchronizer, suite_id: str = SUITE_ID):
        self.sync = sync
        self.suite_id = suite_id
        super().__init__(address, _ConnectionHandler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def serve(state_dir, listen_addr: str, suite_id: str = SUITE_ID) -> None:
    """Recover ``state_dir`` and serve until interrupted, then save."""
    sync = Synchronizer.open(state_dir, suite_id)
    server = SyncServer(parse_endpoint(listen_addr), sync, suite_id)
    try:
        server.serve_forever()
    finally:
        server.server_close()
        sync.close(save=True)
