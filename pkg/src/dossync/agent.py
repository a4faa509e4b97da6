"""The trusted client agent.

Owned dossiers live in plaintext; foreign dossiers only as the ciphertext
received from their owner. Every change to the local state is expressed as a
small command dict, applied by :func:`apply_command` and, when the agent has
a state directory, journaled first. The five protocol sequences are
:meth:`Agent.grant`, :meth:`Agent.push`, :meth:`Agent.pull`,
:meth:`Agent.use_dossier` and :meth:`Agent.revoke`.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Optional, Union

from . import wire
from .crypto import (
    SUITE_ID,
    Entropy,
    Identity,
    PublicKeyBundle,
    SealedBox,
    gen_sym_key,
    open_box,
    seal,
    sign,
    system_entropy,
    unwrap_key,
    verify,
    wrap_key,
)
from .errors import (
    AccessRevoked,
    CorruptRecord,
    DossierError,
    DuplicateDossier,
    IdentityMismatch,
    NoKey,
    NotOwner,
    OpenFailed,
    SyncUnreachable,
    UnknownDossier,
    UnknownField,
    UnknownReceiver,
    UnknownUser,
    UnwrapFailed,
    WireError,
)
from .model import (
    Acl,
    Dossier,
    RedactedView,
    acl_grant,
    acl_revoke,
    check_dossier,
    check_field_name,
    check_field_value,
    check_user,
    redact,
)
from .session import OfflineSession, Session, expect
from .store import StateCodec, StateDir
from .wire import (
    Ack,
    Fetch,
    GetKey,
    Grant,
    Lookup,
    Message,
    OkBundle,
    OkEmpty,
    OkKey,
    OkPending,
    Register,
    Revoke,
    Send,
)

log = logging.getLogger(__name__)

RETAIN = "retain"
PURGE = "purge"


@dataclass(frozen=True)
class AgentConfig:
    revoke_policy: str = RETAIN
    key_cache_ttl_seconds: int = 0
    sync_endpoint: Optional[str] = None

    def __post_init__(self) -> None:
        if self.revoke_policy not in (RETAIN, PURGE):
            raise ValueError(f"revoke_policy must be {RETAIN!r} or {PURGE!r}")
        if self.key_cache_ttl_seconds < 0:
            raise ValueError("key_cache_ttl_seconds must be >= 0")


@dataclass(frozen=True)
class ForeignRecord:
    dossier: str
    owner: str
    version: int
    nonce: bytes
    ciphertext: bytes


@dataclass
class AgentState:
    user: Optional[str] = None
    owned: dict[str, Dossier] = field(default_factory=dict)
    acl: Acl = field(default_factory=Acl)
    # one symmetric key per (dossier, receiver); active iff the ACL has the pair
    keys: dict[tuple[str, str], bytes] = field(default_factory=dict)
    foreign: dict[str, ForeignRecord] = field(default_factory=dict)
    contacts: dict[str, PublicKeyBundle] = field(default_factory=dict)
    seq: int = 0


# ------------------------------------------------------------------ commands

def apply_command(s: AgentState, cmd: Mapping[str, Any]) -> None:
    op = cmd["op"]
    unb64 = wire.unb64
    if op == "init":
        s.user = cmd["user"]
    elif op == "create":
        fields = {k: unb64(v) for k, v in cmd["fields"].items()}
        s.owned[cmd["dossier"]] = Dossier(cmd["dossier"], s.user, 1, fields)
    elif op == "set":
        s.owned[cmd["dossier"]] = s.owned[cmd["dossier"]].with_field(cmd["field"], unb64(cmd["value"]))
    elif op == "del_field":
        s.owned[cmd["dossier"]] = s.owned[cmd["dossier"]].with_field(cmd["field"], None)
    elif op == "touch":
        s.owned[cmd["dossier"]] = s.owned[cmd["dossier"]].bumped()
    elif op == "key":
        s.keys[(cmd["dossier"], cmd["receiver"])] = unb64(cmd["key"])
    elif op == "acl_grant":
        s.acl = acl_grant(s.acl, cmd["dossier"], cmd["receiver"], cmd["fields"], owner=s.user)
    elif op == "acl_revoke":
        s.acl = acl_revoke(s.acl, cmd["dossier"], cmd["receiver"])
    elif op == "foreign":
        s.foreign[cmd["dossier"]] = ForeignRecord(cmd["dossier"], cmd["owner"], cmd["version"],
                                                  unb64(cmd["nonce"]), unb64(cmd["ciphertext"]))
    elif op == "drop_foreign":
        s.foreign.pop(cmd["dossier"], None)
    elif op == "contact":
        s.contacts[cmd["user"]] = PublicKeyBundle(cmd["user"], unb64(cmd["enc_public"]),
                                                  unb64(cmd["sig_public"]))
    elif op == "seq":
        s.seq = cmd["value"]
    else:
        raise ValueError(f"unknown agent command {op!r}")


def state_to_obj(s: AgentState) -> dict[str, Any]:
    b64 = wire.b64
    acl: dict[str, dict[str, list[str]]] = {}
    for (d, r), names in s.acl.entries.items():
        acl.setdefault(d, {})[r] = sorted(names)
    keys: dict[str, dict[str, str]] = {}
    for (d, r), k in s.keys.items():
        keys.setdefault(d, {})[r] = b64(k)
    return {
        "acl": acl,
        "contacts": {u: {"enc_public": b64(b.enc_public), "sig_public": b64(b.sig_public)}
                     for u, b in s.contacts.items()},
        "foreign": {d: {"ciphertext": b64(f.ciphertext), "nonce": b64(f.nonce), "owner": f.owner,
                        "version": f.version} for d, f in s.foreign.items()},
        "keys": keys,
        "owned": {d: {"fields": {n: b64(v) for n, v in o.fields.items()}, "version": o.version}
                  for d, o in s.owned.items()},
        "seq": s.seq,
        "user": s.user or "",
    }


def state_from_obj(obj: Mapping[str, Any]) -> AgentState:
    unb64 = wire.unb64
    s = AgentState(user=obj["user"] or None, seq=obj["seq"])
    for d, o in obj["owned"].items():
        s.owned[d] = Dossier(d, s.user, o["version"], {n: unb64(v) for n, v in o["fields"].items()})
    s.acl = Acl({(d, r): frozenset(names) for d, row in obj["acl"].items() for r, names in row.items()})
    for d, row in obj["keys"].items():
        for r, k in row.items():
            s.keys[(d, r)] = unb64(k)
    for d, f in obj["foreign"].items():
        s.foreign[d] = ForeignRecord(d, f["owner"], f["version"], unb64(f["nonce"]),
                                     unb64(f["ciphertext"]))
    for u, b in obj["contacts"].items():
        s.contacts[u] = PublicKeyBundle(u, unb64(b["enc_public"]), unb64(b["sig_public"]))
    return s


def serialize_state(s: AgentState) -> bytes:
    return wire.dumps(state_to_obj(s))


AGENT_CODEC: StateCodec[AgentState] = StateCodec(
    kind="agent", empty=AgentState, to_obj=state_to_obj, from_obj=state_from_obj,
    apply=apply_command,
)


# ------------------------------------------------------------------ results

@dataclass(frozen=True)
class PushRecord:
    """One Send accepted by the synchronizer."""

    dossier: str
    receiver: str
    version: int
    fields: tuple[str, ...]


@dataclass
class PushResult:
    sent: list[PushRecord] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)


@dataclass
class PullResult:
    applied: list[int] = field(default_factory=list)
    stale: list[int] = field(default_factory=list)
    quarantined: list[int] = field(default_factory=list)


# -------------------------------------------------------------------- agent

class Agent:
    def __init__(
        self,
        identity: Identity,
        session: Optional[Session] = None,
        *,
        config: Optional[AgentConfig] = None,
        state: Optional[AgentState] = None,
        journal: Optional[StateDir[AgentState]] = None,
        entropy: Entropy = system_entropy,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.identity = identity
        self.session: Session = session if session is not None else OfflineSession()
        self.config = config or AgentConfig()
        self.journal = journal
        self.entropy = entropy
        self.clock = clock
        self._key_cache: dict[str, tuple[bytes, float]] = {}
        self.state = state if state is not None else AgentState()
        if self.state.user is None:
            self._commit({"op": "init", "user": identity.user})
        elif self.state.user != identity.user:
            raise IdentityMismatch(f"store belongs to {self.state.user}, identity is {identity.user}")

    @classmethod
    def open(cls, identity: Identity, path, session: Optional[Session] = None, *,
             suite_id: str = SUITE_ID, durable: bool = True, **kwargs) -> "Agent":
        journal = StateDir(path, AGENT_CODEC, suite_id, durable=durable)
        state = journal.open()
        try:
            return cls(identity, session, state=state, journal=journal, **kwargs)
        except BaseException:
            journal.abandon()
            raise

    def close(self) -> None:
        if self.journal is not None:
            self.journal.close(self.state)
            self.journal = None

    @property
    def user(self) -> str:
        return self.identity.user

    def serialize(self) -> bytes:
        return serialize_state(self.state)

    # -- plumbing
    def _commit(self, cmd: dict[str, Any]) -> None:
        if self.journal is not None:
            self.journal.append(cmd)
        apply_command(self.state, cmd)

    def _next_seq(self) -> int:
        seq = self.state.seq + 1
        self._commit({"op": "seq", "value": seq})
        return seq

    def _signed(self, m: Message) -> Message:
        return replace(m, signature=sign(wire.signing_bytes(m), self.identity.sig_private))

    def _owned(self, dossier: str) -> Dossier:
        d = self.state.owned.get(dossier)
        if d is None:
            if dossier in self.state.foreign:
                raise NotOwner(f"{dossier} is owned by {self.state.foreign[dossier].owner}")
            raise UnknownDossier(dossier)
        return d

    def _bundle(self, user: str) -> PublicKeyBundle:
        known = self.state.contacts.get(user)
        if known is not None:
            return known
        reply = expect(self.session.request(Lookup(user)), OkBundle)
        bundle = PublicKeyBundle(reply.user, reply.enc_public, reply.sig_public).validate()
        if bundle.user != user:
            raise UnknownUser(user)
        self._commit({"op": "contact", "user": user, "enc_public": wire.b64(bundle.enc_public),
                      "sig_public": wire.b64(bundle.sig_public)})
        return bundle

    # -- local operations
    def register(self) -> None:
        pub = self.identity.public
        expect(self.session.request(Register(pub.user, pub.enc_public, pub.sig_public)), OkEmpty)
        if self.user not in self.state.contacts:
            self._commit({"op": "contact", "user": pub.user, "enc_public": wire.b64(pub.enc_public),
                          "sig_public": wire.b64(pub.sig_public)})

    def create_dossier(self, dossier: str, fields: Mapping[str, bytes] = ()) -> Dossier:
        check_dossier(dossier)
        if dossier in self.state.owned or dossier in self.state.foreign:
            raise DuplicateDossier(dossier)
        fields = dict(fields)
        for name, value in fields.items():
            check_field_name(name)
            check_field_value(value)
        self._commit({"op": "create", "dossier": dossier,
                      "fields": {n: wire.b64(v) for n, v in fields.items()}})
        return self.state.owned[dossier]

    def edit_field(self, dossier: str, name: str, value: Optional[bytes]) -> Dossier:
        """Set ``name`` to ``value``, or delete it when ``value`` is None."""
        d = self._owned(dossier)
        if value is None:
            if name not in d.fields:
                raise UnknownField(name)
            self._commit({"op": "del_field", "dossier": dossier, "field": name})
        else:
            check_field_name(name)
            check_field_value(value)
            self._commit({"op": "set", "dossier": dossier, "field": name, "value": wire.b64(value)})
        return self.state.owned[dossier]

    # -- Grant
    def grant(self, dossier: str, receiver: str, fields: Iterable[str]) -> PushResult:
        d = self._owned(dossier)
        fields = frozenset(fields)
        check_user(receiver)
        acl_grant(self.state.acl, dossier, receiver, fields, owner=self.user)
        redact(d, fields)
        try:
            bundle = self._bundle(receiver)
        except UnknownUser as exc:
            raise UnknownReceiver(receiver) from exc
        key = self.state.keys.get((dossier, receiver))
        regrant = key is not None
        if key is None:
            key = gen_sym_key(self.entropy)
            self._commit({"op": "key", "dossier": dossier, "receiver": receiver, "key": wire.b64(key)})
        wrapped = wrap_key(key, bundle, self.entropy)
        expect(self.session.request(self._signed(Grant(dossier, self.user, receiver, wrapped))), OkEmpty)
        self._commit({"op": "acl_grant", "dossier": dossier, "receiver": receiver,
                      "fields": sorted(fields)})
        if regrant:
            # the receiver may hold this version with another projection already
            self._commit({"op": "touch", "dossier": dossier})
        return self._push_to(dossier, [receiver])

    # -- Send
    def push(self, dossier: str) -> PushResult:
        self._owned(dossier)
        return self._push_to(dossier, self.state.acl.receivers(dossier))

    def push_all(self) -> PushResult:
        total = PushResult()
        for dossier in sorted(self.state.owned):
            res = self.push(dossier)
            total.sent.extend(res.sent)
            total.failed.update({f"{dossier}/{r}": c for r, c in res.failed.items()})
        return total

    def _push_to(self, dossier: str, receivers: Iterable[str]) -> PushResult:
        result = PushResult()
        d = self.state.owned[dossier]
        for r in receivers:
            allowed = self.state.acl.fields_for(dossier, r) & set(d.fields)
            view = redact(d, allowed)
            box = seal(wire.encode_view(view), self.state.keys[(dossier, r)], self.entropy)
            msg = self._signed(Send(dossier, self.user, r, d.version, box.nonce, box.ciphertext))
            try:
                expect(self.session.request(msg), OkEmpty)
            except SyncUnreachable:
                raise
            except DossierError as exc:
                result.failed[r] = exc.code
                continue
            result.sent.append(PushRecord(dossier, r, d.version, tuple(sorted(allowed))))
        return result

    # -- Receive
    def pull(self) -> PullResult:
        reply = expect(self.session.request(self._signed(Fetch(self.user, self._next_seq()))), OkPending)
        result = PullResult()
        for e in reply.entries:
            if not self._authentic(e):
                log.warning("%s: quarantining pending entry %d for %s", self.user, e.entry_id, e.dossier)
                result.quarantined.append(e.entry_id)
                continue
            local = self.state.foreign.get(e.dossier)
            if local is None or e.version > local.version:
                self._commit({"op": "foreign", "dossier": e.dossier, "owner": e.owner,
                              "version": e.version, "nonce": wire.b64(e.nonce),
                              "ciphertext": wire.b64(e.ciphertext)})
                self._key_cache.pop(e.dossier, None)
                result.applied.append(e.entry_id)
            else:
                result.stale.append(e.entry_id)
        done = tuple(result.applied + result.stale)
        if done:
            ack = self._signed(Ack(self.user, done, self._next_seq()))
            expect(self.session.request(ack), OkEmpty)
        return result

    def _authentic(self, e: wire.PendingWire) -> bool:
        if e.owner == self.user or e.dossier in self.state.owned:
            return False
        local = self.state.foreign.get(e.dossier)
        if local is not None and local.owner != e.owner:
            return False
        try:
            bundle = self._bundle(e.owner)
        except SyncUnreachable:
            raise
        except DossierError:
            return False
        return verify(wire.pending_signing_bytes(e, self.user), e.signature, bundle)

    # -- Use
    def key_cache_lookup(self, dossier: str, now: float) -> Optional[bytes]:
        ttl = self.config.key_cache_ttl_seconds
        hit = self._key_cache.get(dossier)
        if hit is None:
            return None
        if ttl <= 0 or now - hit[1] >= ttl:
            del self._key_cache[dossier]
            return None
        return hit[0]

    def clear_key_cache(self) -> None:
        self._key_cache.clear()

    def use_dossier(self, dossier: str) -> Union[Dossier, RedactedView]:
        if dossier in self.state.owned:
            return self.state.owned[dossier]
        rec = self.state.foreign.get(dossier)
        if rec is None:
            raise UnknownDossier(dossier)
        now = self.clock()
        key = self.key_cache_lookup(dossier, now)
        fetched = key is None
        if key is None:
            reply = self.session.request(self._signed(GetKey(dossier, self.user, self._next_seq())))
            try:
                wrapped = expect(reply, OkKey).wrapped
            except NoKey:
                if self.config.revoke_policy == PURGE:
                    self._commit({"op": "drop_foreign", "dossier": dossier})
                    # the log still holds the ciphertext; rewrite it away
                    if self.journal is not None:
                        self.journal.save(self.state)
                raise AccessRevoked(dossier) from None
            try:
                key = unwrap_key(wrapped, self.identity.enc_private)
            except UnwrapFailed as exc:
                raise CorruptRecord(f"{dossier}: key does not unwrap") from exc
        try:
            view = wire.decode_view(open_box(SealedBox(rec.nonce, rec.ciphertext), key))
        except (OpenFailed, WireError) as exc:
            raise CorruptRecord(f"{dossier}: {exc.code}") from exc
        if (view.id, view.owner, view.version) != (rec.dossier, rec.owner, rec.version):
            raise CorruptRecord(f"{dossier}: content does not match its envelope")
        if fetched and self.config.key_cache_ttl_seconds > 0:
            self._key_cache[dossier] = (key, now)
        return view

    # -- Revoke
    def revoke(self, dossier: str, receiver: str) -> None:
        self._owned(dossier)
        expect(self.session.request(self._signed(Revoke(dossier, self.user, receiver))), OkEmpty)
        self._commit({"op": "acl_revoke", "dossier": dossier, "receiver": receiver})
