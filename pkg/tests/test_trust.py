import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trustfed.domain import TrustParams, TrustRecord
from trustfed.errors import ContextSchemaMismatch, InconsistentCounters
from trustfed.trust import (RoundObservation, aggregate_trust, ema_closed_form, tr1_success_ratio, tr2_two_step,
                            tr3_group_deviation, tr4_contradictions, update_trust_record)

P = TrustParams()
HIST = [0.50, 0.52, 0.48, 0.51]
CTX = {"area": 1, "finish_time_bucket": 2, "last_round_participated": 3}


def test_tr1():
    assert tr1_success_ratio(8, 10) == 0.8
    assert tr1_success_ratio(0, 0) == 0
    assert tr1_success_ratio(5, 5) == 1.0
    with pytest.raises(InconsistentCounters):
        tr1_success_ratio(3, 2)


def test_tr2():
    assert tr2_two_step(HIST, [0.30], 3.5) == (1, pytest.approx(0.30))
    assert tr2_two_step(HIST, [0.51], 3.5)[0] == 0
    assert tr2_two_step(HIST, [], 3.5) == (0, 0.0)
    # flagged in both directions
    assert tr2_two_step(HIST, [0.30, 0.90, 0.50], 3.5) == (2, pytest.approx(0.60))


def test_tr3():
    assert tr3_group_deviation({"a", "b", "c"}, {"a", "b", "d"}) == (2, 3)
    assert tr3_group_deviation(set(), {"a", "b"}) == (0, 2)
    assert tr3_group_deviation({"a", "b"}, {"a", "b"}) == (2, 2)
    assert tr3_group_deviation({"a"}, set()) == (0, 0)


def test_tr4():
    assert tr4_contradictions({"m1": 5, "m2": 7}, {"m1": 5, "m2": 9}) == 1
    assert tr4_contradictions(CTX, dict(CTX)) == 0
    assert tr4_contradictions({"a": 1, "b": "x", "c": 2.0}, {"a": 2, "b": "y", "c": 3.0}) == 3
    assert tr4_contradictions({"a": 1.0}, {"a": 1.0 + 1e-12}) == 0
    with pytest.raises(ContextSchemaMismatch):
        tr4_contradictions({"a": 1}, {"b": 1})


def test_aggregate_examples():
    assert aggregate_trust(1, 0, 1, 0) == 1.0
    assert aggregate_trust(0, 0, 0, 0) == 0.0
    assert aggregate_trust(1, 1, 0, 1) == 0.0


def test_aggregate_monotone_grid():
    g = np.linspace(0, 1, 6)
    for t1, t2, t3, t4 in itertools.product(g, repeat=4):
        a = aggregate_trust(t1, t2, t3, t4)
        assert 0.0 <= a <= 1.0
        if t2 < 1:
            assert aggregate_trust(t1, t2 + 0.2, t3, t4) <= a + 1e-15
        if t4 < 1:
            assert aggregate_trust(t1, t2, t3, t4 + 0.2) <= a + 1e-15
        if t1 < 1:
            assert aggregate_trust(t1 + 0.2, t2, t3, t4) >= a - 1e-15
        if t3 < 1:
            assert aggregate_trust(t1, t2, t3 + 0.2, t4) >= a - 1e-15


unit = st.floats(0, 1)


@settings(max_examples=300, deadline=None)
@given(unit, unit, unit, unit, st.tuples(*[st.floats(0, 10)] * 4))
def test_aggregate_bounded(a, b, c, d, alphas):
    assert 0.0 <= aggregate_trust(a, b, c, d, alphas) <= 1.0


def clean_obs(cid="c0", acc=0.5):
    return RoundObservation(cid, deployed=True, completed_ok=True, reported_accuracy=acc,
                            reported_context=CTX, observed_context=dict(CTX))


def test_honest_five_rounds_from_half():
    rec = TrustRecord("c0", trust=0.5)
    for _ in range(5):
        rec, b = update_trust_record(rec, clean_obs(), P)
        assert b.aggregate == 1.0
    assert rec.trust >= 0.98
    assert rec.trust == pytest.approx(ema_closed_form(0.5, 1.0, 0.5, 5))
    assert (rec.success_count, rec.deployed_count) == (5, 5)


def test_falsified_context_and_outlier_halve_trust():
    rec = TrustRecord("c0", trust=1.0)
    bad = {k: v + 1 for k, v in CTX.items()}
    obs = RoundObservation("c0", True, True, 0.30, reported_context=bad, observed_context=dict(CTX),
                           reference_accuracies=tuple(HIST))
    new, b = update_trust_record(rec, obs, replace(P, mad_floor=0.0))
    assert (b.tr2_norm, b.tr4_norm, b.tr1) == (1.0, 1.0, 0.0)
    assert b.aggregate == 0.0
    assert new.trust == 0.5
    assert new.success_count == 0 and new.deployed_count == 1


def test_mad_floor_tolerates_small_deviation():
    # raw MAD 0.01 would flag 0.30; the default floor of 0.05 does not, but a collapse to 0.10 is flagged
    obs = RoundObservation("c0", True, True, 0.30, reference_accuracies=tuple(HIST))
    assert not update_trust_record(TrustRecord("c0"), obs, P)[1].flagged
    obs = replace(obs, reported_accuracy=0.10)
    assert update_trust_record(TrustRecord("c0"), obs, P)[1].flagged


def test_non_deployed_round_is_noop():
    rec = TrustRecord("c0", trust=0.7, success_count=2, deployed_count=3)
    new, b = update_trust_record(rec, RoundObservation("c0", deployed=False), P)
    assert new is rec and b is None


def test_failed_round_lowers_tr1():
    rec = TrustRecord("c0", trust=0.8, success_count=3, deployed_count=3)
    new, b = update_trust_record(rec, RoundObservation("c0", True, completed_ok=False), P)
    assert b.tr1 == 0.75 and new.deployed_count == 4 and new.success_count == 3


def test_tr3_after_warmup():
    rec = TrustRecord("c0", trust=1.0, success_count=3, deployed_count=3)
    obs = RoundObservation("c0", True, True, previous_neighbors=frozenset("abcd"),
                           current_neighbors=frozenset("abxy"))
    _, b = update_trust_record(rec, obs, P)
    assert b.tr3_norm == 0.5 and b.tr3_raw == 2 and b.group_size == 4
    # warm-up keeps it neutral
    _, b = update_trust_record(TrustRecord("c0"), obs, P)
    assert b.tr3_norm == 1.0


def test_update_deterministic():
    rec = TrustRecord("c0", trust=0.6, success_count=4, deployed_count=5)
    obs = RoundObservation("c0", True, True, 0.7, reference_accuracies=(0.5, 0.6, 0.55, 0.52),
                           previous_neighbors=frozenset("ab"), current_neighbors=frozenset("bc"))
    assert update_trust_record(rec, obs, P) == update_trust_record(rec, obs, P)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 1), st.floats(0, 1), st.integers(2, 10))
def test_lower_aggregate_ends_lower(beta, start, rounds):
    # a client that never completes aggregates 0.5 (neutral Tr3 only), a clean one aggregates 1
    params = replace(P, beta=beta)
    bad, good = TrustRecord("a", trust=start), TrustRecord("b", trust=start)
    for _ in range(rounds):
        bad, ba = update_trust_record(bad, RoundObservation("a", True, completed_ok=False), params)
        good, bg = update_trust_record(good, clean_obs("b"), params)
        assert ba.aggregate < bg.aggregate
    assert bad.trust < good.trust
    assert bad.trust == pytest.approx(ema_closed_form(start, 0.5, beta, rounds), abs=1e-12)


def test_mismatched_context_keys_rejected():
    with pytest.raises(ContextSchemaMismatch):
        RoundObservation("c0", True, reported_context={"a": 1}, observed_context={"b": 1})
