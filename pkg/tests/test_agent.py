import random
from itertools import permutations

import pytest

from dossync import wire
from dossync.agent import PURGE, RETAIN, Agent, AgentConfig
from dossync.crypto import gen_identity, seeded_entropy
from dossync.errors import (AccessRevoked, DuplicateDossier, EmptyGrant, NotOwner,
                            SyncUnreachable, UnknownDossier, UnknownReceiver)
from dossync.model import Dossier, redact
from dossync.session import LocalSession
from dossync.synchronizer import Synchronizer, apply_send, audit, serialize_state
from dossync.wire import Ack, OkPending, Send

from oracles import naive_leaks


class Recorder:
    """Session that records requests and can go dark or reorder deliveries."""

    def __init__(self, sync):
        self.inner = LocalSession(sync)
        self.sent = []
        self.down = False
        self.fail_on = None
        self.order = None

    def request(self, m):
        if self.down or (self.fail_on and isinstance(m, self.fail_on)):
            raise SyncUnreachable("cut")
        self.sent.append(m)
        reply = self.inner.request(m)
        if self.order is not None and isinstance(reply, OkPending):
            reply = OkPending(tuple(self.order(reply.entries)))
        return reply


class World:
    def __init__(self, *users, **config):
        self.sync = Synchronizer()
        self.now = 1000.0
        self.agents = {}
        for i, u in enumerate(users):
            sess = Recorder(self.sync)
            a = Agent(gen_identity(u, seeded_entropy(i)), sess, entropy=seeded_entropy(100 + i),
                      config=AgentConfig(**config), clock=lambda: self.now)
            a.register()
            self.agents[u] = a

    def __getitem__(self, u):
        return self.agents[u]


def test_create_rules():
    w = World("alice")
    a = w["alice"]
    d = a.create_dossier("d", {"n": b"x"})
    assert (d.version, d.fields) == (1, {"n": b"x"})
    assert a.create_dossier("empty").fields == {}
    with pytest.raises(DuplicateDossier):
        a.create_dossier("d")


def test_edit_versions_and_owner_rule():
    w = World("alice", "bob")
    a = w["alice"]
    a.create_dossier("d", {"n": b"x"})
    rng = random.Random(1)
    for i in range(100):
        a.edit_field("d", rng.choice("abc"), bytes([i]))
    assert a.state.owned["d"].version == 101
    a.grant("d", "bob", ["n"])
    w["bob"].pull()
    with pytest.raises(NotOwner):
        w["bob"].edit_field("d", "n", b"y")
    with pytest.raises(UnknownDossier):
        w["bob"].edit_field("zz", "n", b"y")


def test_grant_pull_use_exact_view():
    w = World("alice", "bob")
    d = w["alice"].create_dossier("d", {"n": b"Ann", "s": b"secret"})
    w["alice"].grant("d", "bob", ["n"])
    w["bob"].pull()
    view = w["bob"].use_dossier("d")
    assert wire.encode_view(view) == wire.encode_view(redact(d, {"n"}))


def test_grant_errors():
    w = World("alice")
    w["alice"].create_dossier("d", {"n": b""})
    with pytest.raises(EmptyGrant):
        w["alice"].grant("d", "bob", [])
    with pytest.raises(UnknownReceiver):
        w["alice"].grant("d", "nobody", ["n"])


def test_regrant_narrower_takes_effect():
    w = World("alice", "bob")
    w["alice"].create_dossier("d", {"a": b"1", "b": b"2"})
    w["alice"].grant("d", "bob", ["a", "b"])
    w["bob"].pull()
    assert set(w["bob"].use_dossier("d").fields) == {"a", "b"}
    w["alice"].grant("d", "bob", ["a"])
    w["bob"].pull()
    assert set(w["bob"].use_dossier("d").fields) == {"a"}


def test_three_receivers_disjoint_projections():
    w = World("alice", "r1", "r2", "r3")
    w["alice"].create_dossier("d", {"a": b"A" * 32, "b": b"B" * 32, "c": b"C" * 32})
    for r, f in (("r1", "a"), ("r2", "b"), ("r3", "c")):
        w["alice"].grant("d", r, [f])
    keys = {w["alice"].state.keys[("d", r)] for r in ("r1", "r2", "r3")}
    assert len(keys) == 3
    for r, f in (("r1", "a"), ("r2", "b"), ("r3", "c")):
        w[r].pull()
        assert set(w[r].use_dossier("d").fields) == {f}
        store = w[r].serialize()
        assert naive_leaks(store, [b"A" * 32, b"B" * 32, b"C" * 32]) == set()


def test_push_fan_out():
    w = World("alice", "bob", "carol")
    a = w["alice"]
    a.create_dossier("d", {"a": b"1", "b": b"2"})
    n = len(a.session.sent)
    assert a.push("d").sent == [] and len(a.session.sent) == n
    a.grant("d", "bob", ["a"])
    a.grant("d", "carol", ["a", "b"])
    a.session.sent.clear()
    a.push("d")
    sends = [m for m in a.session.sent if isinstance(m, Send)]
    assert [m.receiver for m in sends] == ["bob", "carol"]
    assert sends[0].ciphertext != sends[1].ciphertext


@pytest.mark.parametrize("order", list(permutations(range(3))))
def test_push_delivery_order(order):
    w = World("alice", "bob")
    a = w["alice"]
    a.create_dossier("d", {"a": b"1"})
    a.grant("d", "bob", ["a"])
    a.edit_field("d", "a", b"2")
    a.push("d")
    a.edit_field("d", "a", b"3")
    a.push("d")
    w["bob"].session.order = lambda entries: [entries[i] for i in order]
    w["bob"].pull()
    v = w["bob"].use_dossier("d")
    assert (v.version, v.fields) == (3, {"a": b"3"})


def test_pull_empty_and_forged():
    w = World("alice", "bob", "mallory")
    before = w["bob"].state.foreign.copy()
    assert w["bob"].pull().applied == []
    assert w["bob"].state.foreign == before
    # an entry claiming alice as owner but signed by mallory; an honest
    # synchronizer would refuse it, so plant it the way a rogue one could
    forged = w["mallory"]._signed(Send("d", "alice", "bob", 1, bytes(12), b"x" * 32))
    w.sync.state.owners["d"] = "alice"
    apply_send(w.sync.state, forged)
    res = w["bob"].pull()
    assert res.quarantined and "d" not in w["bob"].state.foreign
    assert len(w.sync.state.pending["bob"]) == 1


def test_crash_between_fetch_and_ack(tmp_path):
    def run(crash):
        sync = Synchronizer()
        a = Agent(gen_identity("alice", seeded_entropy(1)), LocalSession(sync), entropy=seeded_entropy(5))
        sess = Recorder(sync)
        b = Agent.open(gen_identity("bob", seeded_entropy(2)), tmp_path / str(crash), sess, durable=False)
        a.register(); b.register()
        a.create_dossier("d", {"a": b"1"})
        a.grant("d", "bob", ["a"])
        a.edit_field("d", "a", b"2")
        a.push("d")
        if crash:
            sess.fail_on = Ack
            with pytest.raises(SyncUnreachable):
                b.pull()
            b.journal.abandon()
            b = Agent.open(b.identity, tmp_path / str(crash), Recorder(sync), durable=False)
        b.pull()
        out = (b.state.foreign, b.use_dossier("d"))
        b.close()
        return out
    assert run(True) == run(False)


@pytest.mark.parametrize("policy", [RETAIN, PURGE])
def test_revoke_policies(policy):
    w = World("alice", "bob", revoke_policy=policy)
    w["alice"].create_dossier("d", {"a": b"1"})
    w["alice"].grant("d", "bob", ["a"])
    w["bob"].pull()
    w["alice"].revoke("d", "bob")
    with pytest.raises(AccessRevoked):
        w["bob"].use_dossier("d")
    assert ("d" in w["bob"].state.foreign) == (policy == RETAIN)


def test_retain_regrant_restores_without_new_push():
    w = World("alice", "bob", revoke_policy=RETAIN)
    a = w["alice"]
    a.create_dossier("d", {"a": b"1"})
    a.grant("d", "bob", ["a"])
    w["bob"].pull()
    key = a.state.keys[("d", "bob")]
    a.revoke("d", "bob")
    with pytest.raises(AccessRevoked):
        w["bob"].use_dossier("d")
    a.grant("d", "bob", ["a"])
    assert a.state.keys[("d", "bob")] == key
    assert w["bob"].use_dossier("d").fields == {"a": b"1"}


def test_revoke_excludes_from_fan_out_and_regrant_restores():
    w = World("alice", "r1", "r2")
    a = w["alice"]
    a.create_dossier("d", {"a": b"1"})
    a.grant("d", "r1", ["a"])
    a.grant("d", "r2", ["a"])
    a.revoke("d", "r1")
    a.edit_field("d", "a", b"2")
    assert [p.receiver for p in a.push("d").sent] == ["r2"]
    a.grant("d", "r1", ["a"])
    a.edit_field("d", "a", b"3")
    a.push("d")
    w["r1"].pull()
    assert w["r1"].use_dossier("d").fields == {"a": b"3"}
    assert audit(w.sync.state) == []


def test_key_cache_boundaries():
    w = World("alice", "bob", key_cache_ttl_seconds=30)
    w["alice"].create_dossier("d", {"a": b"1"})
    w["alice"].grant("d", "bob", ["a"])
    b = w["bob"]
    b.pull()
    t = w.now
    b.use_dossier("d")
    assert b.key_cache_lookup("d", t + 29) is not None
    assert b.key_cache_lookup("d", t + 30) is None


def test_key_cache_disabled_by_default():
    w = World("alice", "bob")
    w["alice"].create_dossier("d", {"a": b"1"})
    w["alice"].grant("d", "bob", ["a"])
    w["bob"].pull()
    w["bob"].use_dossier("d")
    assert w["bob"].key_cache_lookup("d", w.now) is None


def test_key_cache_offline_window():
    w = World("alice", "bob", key_cache_ttl_seconds=30)
    w["alice"].create_dossier("d", {"a": b"1"})
    w["alice"].grant("d", "bob", ["a"])
    b = w["bob"]
    b.pull()
    b.use_dossier("d")
    b.session.down = True
    w.now += 29
    assert b.use_dossier("d").fields == {"a": b"1"}
    w.now += 1
    with pytest.raises(SyncUnreachable):
        b.use_dossier("d")


def test_store_round_trip_and_no_private_keys(tmp_path):
    sync = Synchronizer()
    ident = gen_identity("alice", seeded_entropy(1))
    a = Agent.open(ident, tmp_path, LocalSession(sync), durable=False)
    a.register()
    a.create_dossier("d", {"a": b"1"})
    a.close()
    b = Agent.open(ident, tmp_path, LocalSession(sync), durable=False)
    assert b.state.owned["d"] == Dossier("d", "alice", 1, {"a": b"1"})
    store_bytes = b.journal.durable_bytes()
    assert naive_leaks(store_bytes, [ident.enc_private, ident.sig_private]) == set()
    b.close()


def test_synchronizer_state_has_no_plaintext():
    w = World("alice", "bob")
    secret = seeded_entropy(42)(32)
    w["alice"].create_dossier("d", {"a": secret})
    w["alice"].grant("d", "bob", ["a"])
    w["bob"].pull()
    assert naive_leaks(serialize_state(w.sync.state), [secret, w["alice"].state.keys[("d", "bob")]]) == set()


def test_purge_scrubs_store_bytes(tmp_path):
    sync = Synchronizer()
    a = Agent(gen_identity("alice", seeded_entropy(1)), LocalSession(sync), entropy=seeded_entropy(2))
    b = Agent.open(gen_identity("bob", seeded_entropy(3)), tmp_path, LocalSession(sync), durable=False,
                   config=AgentConfig(revoke_policy=PURGE))
    a.register(); b.register()
    a.create_dossier("d", {"a": b"1"})
    a.grant("d", "bob", ["a"])
    b.pull()
    ct = b.state.foreign["d"].ciphertext
    assert wire.b64(ct).encode() in b.journal.durable_bytes()
    a.revoke("d", "bob")
    with pytest.raises(AccessRevoked):
        b.use_dossier("d")
    assert wire.b64(ct).encode() not in b.journal.durable_bytes()
    b.close()
