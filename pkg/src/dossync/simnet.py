"""Deterministic in-process harness: agents and one synchronizer on a fake network.

A :class:`Scenario` is a seed, a list of users and a script of events. All
randomness (identities, keys, nonces) is drawn from the seed and time is a
virtual clock, so :func:`run_scenario` is a pure function of its input and two
runs produce byte-identical :class:`Trace` encodings.

Agents that are offline, or that act while the synchronizer is down, queue
their synchronizing operations (grant, revoke, push, pull) and replay them in
order once both ends are reachable again. Local edits always run immediately.
"""

from __future__ import annotations

import hashlib
import random
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Union

from . import wire
from .agent import PURGE, RETAIN, Agent, AgentConfig
from .crypto import Identity, gen_identity, seeded_entropy, sign
from .errors import DossierError, InvalidScenario, QueuesNotDrained, SyncUnreachable, WireError
from .model import Dossier, RedactedView, check_user, redact
from .synchronizer import Synchronizer, serialize_state
from .wire import Ack, Fetch, GetKey, Grant, Message, OkPending, PendingWire, Register, Revoke, Send


# ------------------------------------------------------------------- events

@dataclass(frozen=True)
class AgentOp:
    user: str
    op: str
    args: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class GoOffline:
    user: str


@dataclass(frozen=True)
class GoOnline:
    user: str


@dataclass(frozen=True)
class CrashSync:
    pass


@dataclass(frozen=True)
class RestartSync:
    pass


@dataclass(frozen=True)
class AdvanceClock:
    seconds: int


Event = Union[AgentOp, GoOffline, GoOnline, CrashSync, RestartSync, AdvanceClock]

# argument kinds per agent operation
OPS: dict[str, dict[str, str]] = {
    "create": {"dossier": "text", "fields": "fieldmap"},
    "set": {"dossier": "text", "field": "text", "value": "bytes"},
    "del_field": {"dossier": "text", "field": "text"},
    "grant": {"dossier": "text", "receiver": "text", "fields": "names"},
    "revoke": {"dossier": "text", "receiver": "text"},
    "push": {"dossier": "text"},
    "push_all": {},
    "pull": {},
    "use": {"dossier": "text"},
    "configure": {"revoke_policy": "text", "key_cache_ttl": "int"},
}
DEFERRABLE = frozenset({"grant", "revoke", "push", "push_all", "pull"})


@dataclass(frozen=True)
class Scenario:
    seed: int
    agents: tuple[str, ...]
    script: tuple[Event, ...] = ()

    def validate(self) -> "Scenario":
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise InvalidScenario("seed must be an unsigned 64-bit integer")
        if len(set(self.agents)) != len(self.agents):
            raise InvalidScenario("duplicate agent")
        for u in self.agents:
            try:
                check_user(u)
            except DossierError as exc:
                raise InvalidScenario(str(exc)) from exc
        known = set(self.agents)
        for i, ev in enumerate(self.script):
            user = getattr(ev, "user", None)
            if user is not None and user not in known:
                raise InvalidScenario(f"event {i} names undeclared agent {user!r}")
            if isinstance(ev, AgentOp):
                kinds = OPS.get(ev.op)
                if kinds is None:
                    raise InvalidScenario(f"event {i}: unknown operation {ev.op!r}")
                if set(ev.args) != set(kinds):
                    raise InvalidScenario(f"event {i}: {ev.op} takes {sorted(kinds)}")
                for name, kind in kinds.items():
                    if not _arg_ok(kind, ev.args[name]):
                        raise InvalidScenario(f"event {i}: bad {name} for {ev.op}")
            elif isinstance(ev, AdvanceClock):
                if not isinstance(ev.seconds, int) or ev.seconds < 0:
                    raise InvalidScenario(f"event {i}: clock can only move forward")
            elif not isinstance(ev, (GoOffline, GoOnline, CrashSync, RestartSync)):
                raise InvalidScenario(f"event {i}: unknown event {ev!r}")
        return self


def _arg_ok(kind: str, v: Any) -> bool:
    if kind == "text":
        return isinstance(v, str)
    if kind == "bytes":
        return isinstance(v, bytes)
    if kind == "int":
        return isinstance(v, int) and not isinstance(v, bool) and v >= 0
    if kind == "names":
        return isinstance(v, (list, tuple)) and all(isinstance(x, str) for x in v)
    if kind == "fieldmap":
        return isinstance(v, Mapping) and all(
            isinstance(k, str) and isinstance(x, bytes) for k, x in v.items())
    return False


# ---------------------------------------------------------- scenario files

_EVENT_NAMES = {GoOffline: "go_offline", GoOnline: "go_online", CrashSync: "crash_sync",
                RestartSync: "restart_sync", AdvanceClock: "advance_clock", AgentOp: "agent_op"}


def _enc_arg(kind: str, v: Any) -> Any:
    if kind == "bytes":
        return wire.b64(v)
    if kind == "names":
        return list(v)
    if kind == "fieldmap":
        return {k: wire.b64(x) for k, x in v.items()}
    return v


def _dec_arg(kind: str, v: Any) -> Any:
    if kind == "bytes":
        return wire.unb64(v)
    if kind == "names":
        if not isinstance(v, list):
            raise InvalidScenario("expected a list of names")
        return tuple(v)
    if kind == "fieldmap":
        if not isinstance(v, dict):
            raise InvalidScenario("expected a field map")
        return {k: wire.unb64(x) for k, x in v.items()}
    return v


def event_to_obj(ev: Event) -> dict[str, Any]:
    obj: dict[str, Any] = {"type": _EVENT_NAMES[type(ev)]}
    if isinstance(ev, AgentOp):
        kinds = OPS[ev.op]
        obj.update(user=ev.user, op=ev.op,
                   args={k: _enc_arg(kinds[k], v) for k, v in ev.args.items()})
    elif isinstance(ev, (GoOffline, GoOnline)):
        obj["user"] = ev.user
    elif isinstance(ev, AdvanceClock):
        obj["seconds"] = ev.seconds
    return obj


def event_from_obj(obj: Any) -> Event:
    try:
        kind = obj["type"]
        if kind == "agent_op":
            kinds = OPS[obj["op"]]
            return AgentOp(obj["user"], obj["op"],
                           {k: _dec_arg(kinds[k], v) for k, v in obj["args"].items()})
        if kind in ("go_offline", "go_online"):
            return (GoOffline if kind == "go_offline" else GoOnline)(obj["user"])
        if kind == "crash_sync":
            return CrashSync()
        if kind == "restart_sync":
            return RestartSync()
        if kind == "advance_clock":
            return AdvanceClock(obj["seconds"])
    except (KeyError, TypeError, WireError) as exc:
        raise InvalidScenario(f"bad event {obj!r}") from exc
    raise InvalidScenario(f"unknown event type {obj.get('type')!r}")


def encode_scenario(sc: Scenario) -> bytes:
    return wire.frame(wire.dumps({
        "agents": list(sc.agents), "script": [event_to_obj(e) for e in sc.script],
        "seed": sc.seed, "type": "scenario",
    }))


def decode_scenario(data: bytes) -> Scenario:
    try:
        frames, end = wire.split_frames(data)
        if len(frames) != 1 or end != len(data):
            raise InvalidScenario("scenario file must hold exactly one frame")
        obj = wire.loads(frames[0][1])
    except WireError as exc:
        raise InvalidScenario(str(exc)) from exc
    if not isinstance(obj, dict) or obj.get("type") != "scenario":
        raise InvalidScenario("not a scenario")
    return Scenario(obj["seed"], tuple(obj["agents"]),
                    tuple(event_from_obj(e) for e in obj["script"])).validate()


# -------------------------------------------------------------------- trace

@dataclass
class TraceEntry:
    index: int
    user: Optional[str]
    label: str
    messages: list[tuple[str, bytes]] = field(default_factory=list)
    outputs: list[tuple[str, bytes]] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    digests: dict[str, str] = field(default_factory=dict)


@dataclass
class Capture:
    """Full bytes of some party's state at one point, for leak scanning."""

    index: int
    party: str
    label: str
    data: bytes


@dataclass
class Trace:
    scenario: Scenario
    entries: list[TraceEntry] = field(default_factory=list)
    captures: list[Capture] = field(default_factory=list)
    # owner-side ground truth
    dossier_owner: dict[str, str] = field(default_factory=dict)
    history: dict[str, dict[int, dict[str, bytes]]] = field(default_factory=dict)
    pushes: dict[tuple[str, str, int], tuple[str, ...]] = field(default_factory=dict)
    granted_ever: set[tuple[str, str, str]] = field(default_factory=set)
    final_acl: dict[tuple[str, str], tuple[str, ...]] = field(default_factory=dict)
    revoked: set[tuple[str, str]] = field(default_factory=set)
    symkeys: dict[tuple[str, str], bytes] = field(default_factory=dict)
    # receiver-side outcome of a final Use per foreign record
    final_views: dict[tuple[str, str], Union[bytes, str]] = field(default_factory=dict)
    drained: bool = False

    def messages(self) -> Iterable[tuple[int, str, bytes]]:
        for e in self.entries:
            for user, data in e.messages:
                yield e.index, user, data

    def uses(self) -> Iterable[tuple[int, str, bytes]]:
        for e in self.entries:
            for user, data in e.outputs:
                yield e.index, user, data

    def canaries(self) -> dict[bytes, tuple[str, str]]:
        """Every field value planted by the script, mapped to (dossier, field)."""
        out: dict[bytes, tuple[str, str]] = {}
        for ev in self.scenario.script:
            if isinstance(ev, AgentOp) and ev.op == "create":
                for name, value in ev.args["fields"].items():
                    out.setdefault(value, (ev.args["dossier"], name))
            elif isinstance(ev, AgentOp) and ev.op == "set":
                out.setdefault(ev.args["value"], (ev.args["dossier"], ev.args["field"]))
        return out

    def converged_views(self) -> dict[tuple[str, str], bytes]:
        """Final decrypted views of every active grant, keyed by (receiver, dossier)."""
        out = {}
        for (d, r) in sorted(self.final_acl):
            view = self.final_views.get((r, d))
            if isinstance(view, bytes):
                out[(r, d)] = view
        return out

    def owner_dossiers(self) -> dict[str, bytes]:
        out = {}
        for d, versions in sorted(self.history.items()):
            v = max(versions)
            out[d] = wire.encode_view(RedactedView(d, self.dossier_owner[d], v, versions[v]))
        return out

    def to_obj(self) -> dict[str, Any]:
        b64 = wire.b64
        return {
            "captures": [[c.index, c.party, c.label, b64(c.data)] for c in self.captures],
            "drained": self.drained,
            "entries": [{
                "digests": e.digests, "errors": e.errors, "index": e.index, "label": e.label,
                "messages": [[u, b64(m)] for u, m in e.messages],
                "outputs": [[u, b64(m)] for u, m in e.outputs],
                "user": e.user or "",
            } for e in self.entries],
            "final_views": [[r, d, v if isinstance(v, str) else b64(v)]
                            for (r, d), v in sorted(self.final_views.items())],
            "pushes": [[d, r, v, list(f)] for (d, r, v), f in sorted(self.pushes.items())],
        }

    def to_bytes(self) -> bytes:
        return wire.dumps(self.to_obj())


# ------------------------------------------------------------------ harness

Deliver = Callable[[str, tuple[PendingWire, ...]], Iterable[PendingWire]]


class _SimSession:
    def __init__(self, net: "_Net", user: str) -> None:
        self.net = net
        self.user = user

    def request(self, m: Message) -> Message:
        net = self.net
        if not net.online[self.user]:
            raise SyncUnreachable(f"{self.user} is offline")
        if net.sync is None:
            raise SyncUnreachable("synchronizer is down")
        req = wire.canonical_encode(m)
        resp = net.sync.dispatch_bytes(req)
        net.current.messages.append((self.user, req))
        net.current.messages.append((self.user, resp))
        reply = wire.decode(resp)
        if net.deliver is not None and isinstance(reply, OkPending):
            # the network may reorder or withhold what the synchronizer sent
            reply = replace(reply, entries=tuple(net.deliver(self.user, reply.entries)))
        return reply


class _Net:
    def __init__(self, sc: Scenario, workdir: Path, deliver: Optional[Deliver] = None) -> None:
        self.sc = sc
        self.deliver = deliver
        self.trace = Trace(sc)
        rng = random.Random(sc.seed)
        self.now = 0.0
        self.sync_dir = workdir / "sync"
        self.sync: Optional[Synchronizer] = Synchronizer.open(self.sync_dir, durable=False)
        self.online = {u: True for u in sc.agents}
        self.outbox: dict[str, list[AgentOp]] = {u: [] for u in sc.agents}
        self.agents: dict[str, Agent] = {}
        for u in sc.agents:
            ident = gen_identity(u, seeded_entropy(rng.getrandbits(64)))
            self.agents[u] = Agent(ident, _SimSession(self, u), entropy=seeded_entropy(rng.getrandbits(64)),
                                   clock=lambda: self.now)
        self._digests: dict[str, str] = {}
        self.current = TraceEntry(-1, None, "setup")

    # -- bookkeeping
    def _begin(self, index: int, user: Optional[str], label: str) -> TraceEntry:
        self.current = TraceEntry(index, user, label)
        return self.current

    def _end(self, touched: Iterable[str]) -> None:
        for u in touched:
            self._digests[u] = hashlib.sha256(self.agents[u].serialize()).hexdigest()
        self.current.digests = dict(sorted(self._digests.items()))
        self.trace.entries.append(self.current)

    def _record_owned(self, user: str) -> None:
        for d, dossier in self.agents[user].state.owned.items():
            self.trace.dossier_owner.setdefault(d, user)
            self.trace.history.setdefault(d, {}).setdefault(dossier.version, dict(dossier.fields))

    def _capture(self, index: int, label: str) -> None:
        if self.sync is not None:
            self.trace.captures.append(Capture(index, "sync", f"{label}:memory",
                                               serialize_state(self.sync.state)))
        disk = b""
        for name in ("snapshot.dc", "log.dc"):
            p = self.sync_dir / name
            if p.exists():
                disk += p.read_bytes()
        self.trace.captures.append(Capture(index, "sync", f"{label}:disk", disk))
        for u in self.sc.agents:
            self.trace.captures.append(Capture(index, u, f"{label}:store", self.agents[u].serialize()))

    # -- execution
    def setup(self) -> None:
        for u in self.sc.agents:
            self.agents[u].register()
        self._end(self.sc.agents)

    def run_op(self, ev: AgentOp) -> None:
        agent = self.agents[ev.user]
        a = ev.args
        entry = self.current
        try:
            if ev.op == "create":
                agent.create_dossier(a["dossier"], a["fields"])
            elif ev.op == "set":
                agent.edit_field(a["dossier"], a["field"], a["value"])
            elif ev.op == "del_field":
                agent.edit_field(a["dossier"], a["field"], None)
            elif ev.op == "grant":
                res = agent.grant(a["dossier"], a["receiver"], a["fields"])
                for name in a["fields"]:
                    self.trace.granted_ever.add((a["dossier"], a["receiver"], name))
                self._note_pushes(res)
            elif ev.op == "revoke":
                agent.revoke(a["dossier"], a["receiver"])
            elif ev.op == "push":
                self._note_pushes(agent.push(a["dossier"]))
            elif ev.op == "push_all":
                self._note_pushes(agent.push_all())
            elif ev.op == "pull":
                res = agent.pull()
                if res.quarantined:
                    entry.errors.append(f"quarantined:{len(res.quarantined)}")
            elif ev.op == "use":
                view = agent.use_dossier(a["dossier"])
                if isinstance(view, RedactedView):
                    entry.outputs.append((ev.user, wire.encode_view(view)))
            elif ev.op == "configure":
                agent.config = AgentConfig(a["revoke_policy"], a["key_cache_ttl"])
                agent.clear_key_cache()
        except DossierError as exc:
            entry.errors.append(f"{ev.op}:{exc.code}")
        except ValueError as exc:  # bad configure arguments
            entry.errors.append(f"{ev.op}:{type(exc).__name__}")
        self._record_owned(ev.user)

    def _note_pushes(self, res) -> None:
        for p in res.sent:
            self.trace.pushes.setdefault((p.dossier, p.receiver, p.version), p.fields)
        for r, code in sorted(res.failed.items()):
            self.current.errors.append(f"push:{r}:{code}")

    def reachable(self, user: str) -> bool:
        return self.online[user] and self.sync is not None

    def flush(self, user: str) -> None:
        queued, self.outbox[user] = self.outbox[user], []
        for i, op in enumerate(queued):
            if not self.reachable(user):
                self.outbox[user] = queued[i:] + self.outbox[user]
                return
            self.run_op(op)

    def step(self, index: int, ev: Event) -> None:
        if isinstance(ev, AgentOp):
            self._begin(index, ev.user, ev.op)
            if ev.op in DEFERRABLE and (not self.reachable(ev.user) or self.outbox[ev.user]):
                self.outbox[ev.user].append(ev)
                self.current.errors.append("deferred")
            else:
                self.run_op(ev)
            self._end([ev.user])
        elif isinstance(ev, GoOffline):
            self._begin(index, ev.user, "go_offline")
            self.online[ev.user] = False
            self._end([])
        elif isinstance(ev, GoOnline):
            self._begin(index, ev.user, "go_online")
            self.online[ev.user] = True
            if self.sync is not None:
                self.flush(ev.user)
            self._end([ev.user])
        elif isinstance(ev, CrashSync):
            self._begin(index, None, "crash_sync")
            if self.sync is None:
                self.current.errors.append("already-down")
            else:
                self._capture(index, "crash")
                self.sync.crash()
                self.sync = None
            self._end([])
        elif isinstance(ev, RestartSync):
            self._begin(index, None, "restart_sync")
            touched = []
            if self.sync is not None:
                self.current.errors.append("already-up")
            else:
                self.sync = Synchronizer.open(self.sync_dir, durable=False)
                for u in self.sc.agents:
                    if self.online[u] and self.outbox[u]:
                        self.flush(u)
                        touched.append(u)
            self._end(touched)
        elif isinstance(ev, AdvanceClock):
            self._begin(index, None, "advance_clock")
            self.now += ev.seconds
            self._end([])

    def finish(self) -> None:
        t = self.trace
        end = len(self.sc.script)
        t.drained = (self.sync is not None and not self.sync.state.pending
                     and not any(self.outbox.values()))
        for u in self.sc.agents:
            st = self.agents[u].state
            for (d, r), names in st.acl.entries.items():
                t.final_acl[(d, r)] = tuple(sorted(names))
            for (d, r), key in st.keys.items():
                t.symkeys[(d, r)] = key
                if (d, r) not in st.acl.entries:
                    t.revoked.add((d, r))
        self._capture(end, "final")
        self._begin(end, None, "epilogue")
        for u in self.sc.agents:
            agent = self.agents[u]
            agent.clear_key_cache()
            for d in sorted(agent.state.foreign):
                if not self.reachable(u):
                    t.final_views[(u, d)] = "SyncUnreachable"
                    continue
                try:
                    view = agent.use_dossier(d)
                    data = wire.encode_view(view)
                    self.current.outputs.append((u, data))
                    t.final_views[(u, d)] = data
                except DossierError as exc:
                    t.final_views[(u, d)] = exc.code
        self._end(self.sc.agents)
        if self.sync is not None:
            self.sync.close(save=True)
            self.sync = None
        self._capture(end, "closed")


def run_scenario(sc: Scenario, *, deliver: Optional[Deliver] = None) -> Trace:
    """Execute ``sc`` and return its trace.

    ``deliver(user, entries)`` lets a test play the network: it sees each
    Fetch reply on its way to ``user`` and returns the entries to hand over,
    in any order, possibly fewer.
    """
    sc.validate()
    if not sc.script:
        return Trace(sc, drained=True)
    with tempfile.TemporaryDirectory(prefix="dossync-sim-") as tmp:
        net = _Net(sc, Path(tmp), deliver)
        try:
            net.setup()
            for i, ev in enumerate(sc.script):
                net.step(i, ev)
            net.finish()
        finally:
            if net.sync is not None:
                net.sync.crash()
    return net.trace


# ------------------------------------------------------------------ checks

@dataclass
class ConvergenceReport:
    checked: int = 0
    violations: list[str] = field(default_factory=list)
    revoked_ok: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def expected_view(t: Trace, dossier: str, receiver: str, version: int) -> Optional[bytes]:
    """Owner-side redaction for what ``receiver`` was sent at ``version``."""
    fields = t.pushes.get((dossier, receiver, version))
    fields_at = t.history.get(dossier, {}).get(version)
    if fields is None or fields_at is None:
        return None
    d = Dossier(dossier, t.dossier_owner[dossier], version, fields_at)
    return wire.encode_view(redact(d, fields))


def check_convergence(t: Trace) -> ConvergenceReport:
    if not t.drained:
        raise QueuesNotDrained("pending queues or offline outboxes are not empty")
    rep = ConvergenceReport()
    for (d, r) in sorted(t.final_acl):
        rep.checked += 1
        versions = [v for (dd, rr, v) in t.pushes if dd == d and rr == r]
        if not versions:
            rep.violations.append(f"{d}->{r}: granted but never pushed")
            continue
        want = expected_view(t, d, r, max(versions))
        got = t.final_views.get((r, d))
        if got != want:
            shown = got if isinstance(got, str) else "different view"
            rep.violations.append(f"{d}->{r}: {shown}")
    for (d, r) in sorted(t.revoked):
        if isinstance(t.final_views.get((r, d)), bytes):
            rep.violations.append(f"{d}->{r}: revoked receiver can still decrypt")
        else:
            rep.revoked_ok.append((d, r))
    return rep


def check_redaction(t: Trace) -> list[str]:
    """Every successful Use equals the owner's redaction at that version."""
    problems = []
    for index, user, data in t.uses():
        view = wire.decode_view(data)
        want = expected_view(t, view.id, user, view.version)
        if want != data:
            problems.append(f"event {index}: {user} saw {view.id} v{view.version} != owner redaction")
    return problems


class CanaryScanner:
    """Finds raw or base64-embedded occurrences of secret byte strings.

    Every needle is searched raw and in the three base64 alignments. Blobs are
    probed at every 8th offset against an index of all 8-byte grams starting
    at needle offsets 0..7, which catches any needle of 15 bytes or more.
    """

    GRAM = 8

    def __init__(self, secrets: Mapping[bytes, str]) -> None:
        self._index: dict[bytes, list[tuple[bytes, int, str]]] = {}
        for secret, label in secrets.items():
            for needle in self.forms(secret):
                if len(needle) < 2 * self.GRAM - 1:
                    raise ValueError("secrets must be at least 12 bytes")
                for j in range(self.GRAM):
                    self._index.setdefault(needle[j:j + self.GRAM], []).append((needle, j, label))

    @staticmethod
    def forms(secret: bytes) -> list[bytes]:
        out = [secret]
        n = len(secret)
        for shift in range(3):
            enc = wire.b64(bytes(shift) + secret).encode("ascii")
            start = -(-8 * shift // 6)
            stop = (8 * (shift + n)) // 6
            out.append(enc[start:stop])
        return out

    def scan(self, blob: bytes) -> list[str]:
        hits = []
        index = self._index
        g = self.GRAM
        for pos in range(0, len(blob) - g + 1, g):
            cands = index.get(blob[pos:pos + g])
            if cands is None:
                continue
            for needle, j, label in cands:
                start = pos - j
                if start >= 0 and blob[start:start + len(needle)] == needle:
                    hits.append(label)
        return sorted(set(hits))


@dataclass
class ConfidentialityReport:
    hits: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.hits


def check_confidentiality(t: Trace) -> ConfidentialityReport:
    rep = ConfidentialityReport()
    canaries = t.canaries()
    secrets = {c: f"canary {d}/{f}" for c, (d, f) in canaries.items()}
    secrets.update({k: f"symkey {d}->{r}" for (d, r), k in t.symkeys.items()})
    scanner = CanaryScanner(secrets)

    # the synchronizer sees every message and nothing may leak to it
    all_msgs = b"\n".join(data for _, _, data in t.messages())
    rep.hits += [f"wire: {h}" for h in scanner.scan(all_msgs)]
    for c in t.captures:
        if c.party == "sync":
            rep.hits += [f"sync {c.label}@{c.index}: {h}" for h in scanner.scan(c.data)]

    owned = {u: {d for d, o in t.dossier_owner.items() if o == u} for u in t.scenario.agents}
    for d, f in set(canaries.values()):
        owner = t.dossier_owner.get(d)
        if owner is not None:
            owned.setdefault(owner, set()).add(d)

    def forbidden_in_store(user: str, label: str) -> bool:
        if label.startswith("canary "):
            d = label[len("canary "):].split("/", 1)[0]
        else:
            d = label[len("symkey "):].split("->", 1)[0]
        return d not in owned.get(user, set())

    def never_granted(user: str, label: str) -> bool:
        if not label.startswith("canary "):
            return forbidden_in_store(user, label)
        d, f = label[len("canary "):].split("/", 1)
        return d not in owned.get(user, set()) and (d, user, f) not in t.granted_ever

    for c in t.captures:
        if c.party != "sync":
            rep.hits += [f"{c.party} {c.label}@{c.index}: {h}" for h in scanner.scan(c.data)
                         if forbidden_in_store(c.party, h)]
    for u in t.scenario.agents:
        seen = b"\n".join([data for _, user, data in t.messages() if user == u]
                          + [data for _, user, data in t.uses() if user == u])
        rep.hits += [f"{u} saw: {h}" for h in scanner.scan(seen) if never_granted(u, h)]
    return rep


# ---------------------------------------------------------------- generators

def random_scenario(
    seed: int,
    *,
    max_agents: int = 6,
    max_dossiers: int = 10,
    max_events: int = 300,
    offline: bool = True,
    crashes: bool = True,
    deletes: bool = True,
) -> Scenario:
    """A random but well-formed scenario ending in a full drain."""
    rng = random.Random(seed)
    n_agents = rng.randint(2, max_agents)
    agents = tuple(f"u{i}" for i in range(n_agents))
    dossiers = [f"d{i}" for i in range(rng.randint(1, max_dossiers))]
    owner_of = {d: rng.choice(agents) for d in dossiers}
    names = ["a", "b", "c", "d", "e"]
    fields: dict[str, set[str]] = {}
    used: set[bytes] = set()
    script: list[Event] = []
    is_online = {u: True for u in agents}
    sync_up = True

    def canary() -> bytes:
        while True:
            c = rng.randbytes(32)
            if c not in used:
                used.add(c)
                return c

    for u in agents:
        ttl = rng.choice([0, 0, 0, 30])
        script.append(AgentOp(u, "configure", {"revoke_policy": rng.choice([RETAIN, PURGE]),
                                               "key_cache_ttl": ttl}))
    tail = 1 + 3 * n_agents
    body = rng.randint(max(0, min(40, max_events - tail - len(script))), max_events - tail - len(script))
    kinds = ["create", "set", "set", "del_field", "grant", "grant", "revoke", "push", "push",
             "pull", "pull", "use", "use", "clock"]
    if offline:
        kinds += ["offline", "online"]
    if crashes:
        kinds += ["crash"]
    while len(script) < len(agents) + body:
        kind = rng.choice(kinds)
        created = sorted(fields)
        if kind == "create" or not created:
            fresh = [d for d in dossiers if d not in fields]
            if not fresh:
                continue
            d = rng.choice(fresh)
            picked = rng.sample(names, rng.randint(1, 3))
            fields[d] = set(picked)
            script.append(AgentOp(owner_of[d], "create", {"dossier": d,
                                                          "fields": {n: canary() for n in picked}}))
        elif kind == "set":
            d = rng.choice(created)
            # now and then a non-owner tries, which must fail
            user = owner_of[d] if rng.random() < 0.9 else rng.choice(agents)
            n = rng.choice(names)
            if user == owner_of[d]:
                fields[d].add(n)
            script.append(AgentOp(user, "set", {"dossier": d, "field": n, "value": canary()}))
        elif kind == "del_field":
            d = rng.choice(created)
            if not deletes or len(fields[d]) < 2:
                continue
            n = rng.choice(sorted(fields[d]))
            fields[d].discard(n)
            script.append(AgentOp(owner_of[d], "del_field", {"dossier": d, "field": n}))
        elif kind == "grant":
            d = rng.choice(created)
            r = rng.choice([u for u in agents if u != owner_of[d]])
            present = sorted(fields[d])
            picked = tuple(sorted(rng.sample(present, rng.randint(1, len(present)))))
            script.append(AgentOp(owner_of[d], "grant", {"dossier": d, "receiver": r, "fields": picked}))
        elif kind == "revoke":
            d = rng.choice(created)
            r = rng.choice([u for u in agents if u != owner_of[d]])
            script.append(AgentOp(owner_of[d], "revoke", {"dossier": d, "receiver": r}))
        elif kind == "push":
            d = rng.choice(created)
            script.append(AgentOp(owner_of[d], "push", {"dossier": d}))
        elif kind == "pull":
            script.append(AgentOp(rng.choice(agents), "pull", {}))
        elif kind == "use":
            script.append(AgentOp(rng.choice(agents), "use", {"dossier": rng.choice(created)}))
        elif kind == "clock":
            script.append(AdvanceClock(rng.choice([1, 5, 10, 29, 30, 31, 60])))
        elif kind == "offline":
            u = rng.choice(agents)
            if is_online[u]:
                is_online[u] = False
                script.append(GoOffline(u))
        elif kind == "online":
            offline_users = [u for u in agents if not is_online[u]]
            if offline_users:
                u = rng.choice(offline_users)
                is_online[u] = True
                script.append(GoOnline(u))
        elif kind == "crash":
            script.append(CrashSync() if sync_up else RestartSync())
            sync_up = not sync_up
    if not sync_up:
        script.append(RestartSync())
    for u in agents:
        if not is_online[u]:
            script.append(GoOnline(u))
    script += [AgentOp(u, "push_all", {}) for u in agents]
    script += [AgentOp(u, "pull", {}) for u in agents]
    return Scenario(seed, agents, tuple(script)).validate()


def strip_offline(sc: Scenario) -> Scenario:
    """The always-online twin of ``sc``."""
    script = tuple(e for e in sc.script if not isinstance(e, (GoOffline, GoOnline)))
    return Scenario(sc.seed, sc.agents, script)


def random_sync_schedule(seed: int, n_ops: int = 200, n_users: int = 4) -> list[Message]:
    """Signed synchronizer requests from a few users, some deliberately invalid.

    Used to check that journal replay reproduces the live state.
    """
    rng = random.Random(seed)
    ids: list[Identity] = [gen_identity(f"s{i}", seeded_entropy(rng.getrandbits(64)))
                           for i in range(n_users)]
    seqs = {i.user: 0 for i in ids}
    dossiers = ["x0", "x1", "x2"]
    out: list[Message] = [Register(i.user, i.public.enc_public, i.public.sig_public) for i in ids]
    versions = {d: 0 for d in dossiers}

    def signed(m: Message, who: Identity) -> Message:
        sig = sign(wire.signing_bytes(m), who.sig_private)
        if rng.random() < 0.05:
            sig = bytes(64)  # forged
        return replace(m, signature=sig)

    def next_seq(user: str) -> int:
        if rng.random() < 0.05 and seqs[user] > 0:
            return seqs[user]  # replay
        seqs[user] += 1
        return seqs[user]

    while len(out) < n_ops:
        who = rng.choice(ids)
        other = rng.choice([i for i in ids if i is not who])
        d = rng.choice(dossiers)
        kind = rng.choice(["grant", "send", "send", "fetch", "ack", "getkey", "revoke", "register"])
        if kind == "grant":
            out.append(signed(Grant(d, who.user, other.user, rng.randbytes(92)), who))
        elif kind == "send":
            versions[d] += rng.choice([0, 1, 1])
            out.append(signed(Send(d, who.user, other.user, max(1, versions[d]),
                                   rng.randbytes(12), rng.randbytes(rng.randint(16, 80))), who))
        elif kind == "fetch":
            out.append(signed(Fetch(who.user, next_seq(who.user)), who))
        elif kind == "ack":
            ids_ = tuple(sorted(rng.sample(range(1, 60), rng.randint(0, 6))))
            out.append(signed(Ack(who.user, ids_, next_seq(who.user)), who))
        elif kind == "getkey":
            out.append(signed(GetKey(d, who.user, next_seq(who.user)), who))
        elif kind == "revoke":
            out.append(signed(Revoke(d, who.user, other.user), who))
        else:
            # a conflicting re-registration, always rejected
            fake = gen_identity(who.user, seeded_entropy(rng.getrandbits(64)))
            out.append(Register(who.user, fake.public.enc_public, fake.public.sig_public))
    return out
