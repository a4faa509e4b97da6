import random

import pytest
from hypothesis import given, strategies as st

from dossync.errors import (EmptyGrant, IdentityMismatch, InvalidName, OversizeField,
                            OwnerAsReceiver, UnknownField)
from dossync.model import (MAX_FIELD_VALUE_BYTES, Acl, Dossier, RedactedView, acl_grant,
                           acl_revoke, apply_incoming, redact)

from oracles import acl_replay, all_orders, filter_fields, max_version

names = st.text(alphabet="abcdefghij", min_size=1, max_size=6)
values = st.binary(max_size=40)


def test_redact_projects_allowed_subset():
    d = Dossier("d1", "alice", 1, {"n": b"v1", "s": b"v2"})
    assert redact(d, {"n"}).fields == {"n": b"v1"}
    assert redact(d, {"n", "s"}).fields == d.fields


def test_redact_unknown_field():
    with pytest.raises(UnknownField):
        redact(Dossier("d1", "alice", 1, {"n": b""}), {"zz"})


@given(st.dictionaries(names, values, min_size=5, max_size=5), st.data())
def test_redact_matches_filter_oracle(fields, data):
    allowed = data.draw(st.sets(st.sampled_from(sorted(fields)), min_size=2, max_size=2))
    d = Dossier("d", "o", 3, fields)
    view = redact(d, allowed)
    assert view.fields == filter_fields(fields, allowed)
    assert (view.id, view.owner, view.version) == ("d", "o", 3)


def test_dossier_edits_bump_version():
    d = Dossier("d", "o", 1, {})
    d = d.with_field("a", b"1").with_field("a", b"2").with_field("a", None)
    assert d.version == 4 and d.fields == {}
    with pytest.raises(UnknownField):
        d.with_field("a", None)


@pytest.mark.parametrize("bad", ["", "\ud800", 7])
def test_invalid_user_names(bad):
    with pytest.raises(InvalidName):
        Dossier("d", bad, 1, {})


def test_name_caps_count_utf8_bytes():
    Dossier("d", "é" * 32, 1, {})
    with pytest.raises(OversizeField):
        Dossier("d", "é" * 33, 1, {})


def test_value_cap():
    Dossier("d", "o", 1, {"a": bytes(MAX_FIELD_VALUE_BYTES)})
    with pytest.raises(OversizeField):
        Dossier("d", "o", 1, {"a": bytes(MAX_FIELD_VALUE_BYTES + 1)})


def test_apply_incoming_first_delivery_and_idempotence():
    v3 = RedactedView("d", "o", 3, {"a": b"x"})
    assert apply_incoming(None, v3) == v3
    assert apply_incoming(apply_incoming(v3, v3), v3) == v3


def test_apply_incoming_identity_mismatch():
    with pytest.raises(IdentityMismatch):
        apply_incoming(RedactedView("d", "o", 1, {}), RedactedView("d", "p", 2, {}))


def test_all_120_delivery_orders_reach_version_5():
    views = [RedactedView("d", "o", v, {"f": bytes([v])}) for v in range(1, 6)]
    want = max_version((v.version, v.fields) for v in views)
    orders = all_orders(5)
    assert len(orders) == 120
    for order in orders:
        local = None
        for i in order:
            local = apply_incoming(local, views[i])
        assert (local.version, local.fields) == want


def test_acl_replacement_and_inverse():
    acl = acl_grant(Acl(), "d", "r", ["a"], owner="o")
    acl = acl_grant(acl, "d", "r", ["a", "b"], owner="o")
    assert acl.fields_for("d", "r") == frozenset({"a", "b"})
    assert acl_revoke(acl, "d", "r").fields_for("d", "r") is None
    assert acl_revoke(Acl(), "d", "r") == Acl()


def test_acl_rejects_empty_and_owner():
    with pytest.raises(EmptyGrant):
        acl_grant(Acl(), "d", "r", [], owner="o")
    with pytest.raises(OwnerAsReceiver):
        acl_grant(Acl(), "d", "o", ["a"], owner="o")


@pytest.mark.parametrize("seed", range(10))
def test_acl_matches_replay_oracle(seed):
    rng = random.Random(seed)
    ops, acl = [], Acl()
    for _ in range(50):
        d, r = rng.choice("xy"), rng.choice(["r1", "r2", "r3"])
        if rng.random() < 0.6:
            op = ("grant", d, r, rng.sample("abcd", rng.randint(1, 3)))
            acl = acl_grant(acl, d, r, op[3], owner="o")
        else:
            op = ("revoke", d, r)
            acl = acl_revoke(acl, d, r)
        ops.append(op)
        assert dict(acl.entries) == acl_replay(ops)
    assert acl.receivers("x") == sorted(r for (d, r) in acl_replay(ops) if d == "x")
