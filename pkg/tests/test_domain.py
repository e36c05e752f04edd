import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from trustfed.domain import (DeviceProfile, LearningUtility, ObjectiveWeights, Registry, ScenarioConfig,
                             SelectionVector, Thresholds, TrustRecord, parse_population_csv, profile_from_json,
                             profile_to_json, validate_profile, write_population_csv)
from trustfed.errors import ConfigError, TrustFedError


def dev(**kw):
    base = dict(id="c000", device_type="phone", cpu=2.0, memory=4e9, diskspace=8000.0, battery=50.0,
                availability=900.0, area=1, avg_movements=0.5, avg_finish_time=60.0)
    base.update(kw)
    return DeviceProfile(**base)


UTIL = LearningUtility(1.0, 1e9, 10.0, 400.0)


def test_validate_profile_examples():
    assert validate_profile(dev(battery=101), UTIL).kinds == {"battery-range"}
    assert validate_profile(dev(), UTIL).ok
    assert "negative-resource" in validate_profile(dev(cpu=-1), UTIL).kinds
    assert "duplicate-id" in validate_profile(dev(), UTIL, seen_ids={"c000"}).kinds
    assert "area-range" in validate_profile(dev(area=6), UTIL, areas=6).kinds
    assert "negative-resource" in validate_profile(dev(), LearningUtility(-1, 0, 0, 0)).kinds


def test_registry_bars_evicted_ids():
    r = Registry()
    r.join("a")
    with pytest.raises(TrustFedError):
        r.join("a")
    r.evict("a")
    with pytest.raises(TrustFedError) as ei:
        r.join("a")
    assert ei.value.code == "evicted-id"


def test_weights_must_sum_to_one():
    ObjectiveWeights(0.1, 0.2, 0.3, 0.2, 0.2)
    with pytest.raises(ConfigError):
        ObjectiveWeights(0.2, 0.2, 0.2, 0.2, 0.2 + 2e-9)
    with pytest.raises(ConfigError):
        ObjectiveWeights.from_sequence([0.5, 0.5])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=5, max_size=5), st.floats(-1e-6, 1e-6))
def test_weights_sum_tolerance(ws, delta):
    total = sum(ws)
    if total < 1e-3:
        return
    ws = [w / total for w in ws]
    ws[0] += delta
    if not 0 <= ws[0] <= 1:
        return
    if abs(sum(ws) - 1) > 1e-9:
        with pytest.raises(ConfigError):
            ObjectiveWeights(*ws)
    else:
        ObjectiveWeights(*ws)


def test_selection_vector():
    s = SelectionVector.from_indices(5, [1, 3])
    assert s.bits == (0, 1, 0, 1, 0) and s.count == 2 and s.indices == [1, 3] and str(s) == "01010"
    with pytest.raises(TrustFedError):
        SelectionVector((0, 2))


def test_trust_record_invariants():
    with pytest.raises(TrustFedError):
        TrustRecord("a", success_count=3, deployed_count=2)
    with pytest.raises(TrustFedError):
        TrustRecord("a", trust=1.2)
    r = TrustRecord("a", window=3)
    for x in (0.1, 0.2, 0.3, 0.4):
        r = r.with_accuracy(x)
    assert r.accuracy_history == (0.2, 0.3, 0.4)


pos = st.floats(0, 1e6, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.text("abcdefgh0123456789", min_size=1, max_size=8), st.sampled_from(["phone", "tablet", "laptop"]),
       pos, pos, pos, st.floats(0, 100), pos, st.integers(0, 5), pos, pos, st.integers(0, 50))
def test_profile_roundtrip(i, t, cpu, mem, disk, bat, avail, area, mv, ft, jr):
    p = DeviceProfile(i, t, cpu, mem, disk, bat, avail, area, mv, ft, jr)
    assert profile_from_json(profile_to_json(p)) == p
    q = parse_population_csv(write_population_csv([p]))[0]
    assert dataclasses.replace(q, joined_round=jr) == p


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.floats(0, 1), st.lists(st.floats(0, 1), max_size=25))
def test_trust_record_roundtrip(a, b, t, hist):
    r = TrustRecord("c001", trust=t, success_count=min(a, b), deployed_count=max(a, b),
                    accuracy_history=tuple(hist))
    assert TrustRecord.from_dict(r.to_dict()) == r


def test_observe_smoothing():
    d = dev(avg_movements=1.0, avg_finish_time=100.0).observe(movements=2.0, finish_time=0.0)
    assert d.avg_movements == pytest.approx(1.3)
    assert d.avg_finish_time == pytest.approx(70.0)


def test_config_range_checks():
    with pytest.raises(ConfigError) as ei:
        ScenarioConfig(seed=1, dismissal_fraction=1.5, thresholds=Thresholds(max_trust=2.0))
    msg = str(ei.value)
    assert "dismissal_fraction" in msg and "thresholds.max_trust" in msg
    with pytest.raises(ConfigError):
        ScenarioConfig(seed=1, selection="greedy")
