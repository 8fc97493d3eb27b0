import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jamsim.env import (BackgroundSourceState, ChannelModel, Geometry, InvalidGeometryError,
                        World, path_gain, rssi_sample, sense, sinr, step_background,
                        substream, transmission_success)


def test_path_gain_examples():
    assert path_gain(10) == pytest.approx(0.01)
    assert path_gain(10, shadow_draw=2.0) == pytest.approx(0.02)
    with pytest.raises(InvalidGeometryError):
        path_gain(0)
    with pytest.raises(InvalidGeometryError):
        path_gain(-3)


@given(st.floats(0.1, 100), st.floats(0.1, 100), st.floats(0.1, 10))
def test_path_gain_decreasing_in_distance(d1, d2, shadow):
    if d1 < d2:
        assert path_gain(d1, shadow) > path_gain(d2, shadow)


def test_sinr_examples():
    # idle channel, no jam: 1000 * 0.01 / 1
    assert sinr(1000, 0.01, 0, 0.01, False, 5.0) == pytest.approx(10.0)
    # busy: B's contribution at R counts
    assert sinr(1000, 0.01, 0, 0.01, True, 10.0) == pytest.approx(10 / 11)
    # jammer at distance 10 with full power
    assert sinr(1000, 0.01, 1000, 0.01, False, 0.0) == pytest.approx(10 / 11)


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 100))
def test_sinr_decreasing_in_jam_and_interference(p1, p2, interf):
    lo, hi = sorted((p1, p2))
    if hi - lo > 1e-6:
        assert sinr(1000, 0.01, hi, 0.01, True, interf) < sinr(1000, 0.01, lo, 0.01, True, interf)
        assert (sinr(1000, 0.01, lo, 0.01, True, interf + 1)
                < sinr(1000, 0.01, lo, 0.01, True, interf))


def test_success_is_strict():
    assert transmission_success(10, 3) is True
    assert transmission_success(0.909, 3) is False
    assert transmission_success(3, 3) is False
    with pytest.raises(ValueError):
        transmission_success(5, 0)


class _FixedRng:
    def __init__(self, draws):
        self.draws = list(draws)

    def random(self):
        return self.draws.pop(0)


def test_background_examples():
    s, tx = step_background(BackgroundSourceState(0, False), _FixedRng([0.9]))
    assert (s.queue_len, s.active, tx) == (0, False, False)
    s, tx = step_background(BackgroundSourceState(2, True), _FixedRng([0.9]))
    assert (s.queue_len, s.active, tx) == (1, True, True)
    # last packet leaves: source goes quiet
    s, tx = step_background(BackgroundSourceState(1, True), _FixedRng([0.9]))
    assert (s.queue_len, s.active, tx) == (0, False, True)


def test_background_utilization_oracle():
    # every arrival occupies exactly one busy slot, so the busy share tends to lambda
    rng = np.random.default_rng(7)
    state = BackgroundSourceState(arrival_rate=0.2, activation_prob=0.2)
    n, busy = 100_000, 0
    for _ in range(n):
        state, tx = step_background(state, rng)
        busy += tx
    se = math.sqrt(0.2 * 0.8 / n)
    assert abs(busy / n - 0.2) <= max(0.01, 3 * se)


def test_busy_runs_are_contiguous_per_activation():
    rng = np.random.default_rng(3)
    state = BackgroundSourceState()
    for _ in range(5000):
        before = state
        state, tx = step_background(state, rng)
        if before.active and before.queue_len > 0:
            assert tx


def test_sense_examples():
    rng = np.random.default_rng(0)
    idle = [sense("T", {"busy": False}, rng) for _ in range(2000)]
    assert min(idle) >= 1.0
    assert np.mean(idle) == pytest.approx(1 + 0.1 * math.sqrt(2 / math.pi), abs=0.01)
    ch = ChannelModel(sensing_jitter=0.0)
    assert sense("T", {"busy": True}, rng, ch) == pytest.approx(1.0 + 10.0)
    with pytest.raises(ValueError):
        sense("R", {"busy": False}, rng)


def test_observers_get_different_samples():
    tr = World(seed=5).advance(200)
    assert not np.array_equal(tr.rssi_T, tr.rssi_J)


def test_rssi_sample_formula():
    assert rssi_sample(1.0, 0.1, -2.0, 5.0) == pytest.approx(1.2 + 5.0)


def test_world_determinism():
    a = World(seed=11).advance(300)
    b = World(seed=11).advance(300)
    for f in a.__dataclass_fields__:
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_world_chunking_does_not_change_trace():
    whole = World(seed=2).advance(400)
    w = World(seed=2)
    parts = [w.advance(150), w.advance(250)]
    from jamsim.env import Trace
    joined = Trace.concat(parts)
    for f in whole.__dataclass_fields__:
        assert np.array_equal(getattr(whole, f), getattr(joined, f))


def test_geometry_only_moves_jammer_quantities():
    a = World(seed=4).advance(300)
    b = World(seed=4, geometry=Geometry().with_jammer((20.0, 5.0))).advance(300)
    assert np.array_equal(a.busy, b.busy)
    assert np.array_equal(a.rssi_T, b.rssi_T)
    assert np.array_equal(a.gain_TR, b.gain_TR)
    assert not np.array_equal(a.gain_JR, b.gain_JR)


def test_geometry_validation():
    with pytest.raises(InvalidGeometryError):
        World(geometry=Geometry(pos_J=(0.0, 0.0)))
    assert Geometry().distance("T", "R") == 10.0


def test_substreams_are_independent_of_order():
    a = substream(1, "traffic").random(3)
    substream(1, "noise.T").random(10)
    assert np.array_equal(a, substream(1, "traffic").random(3))
    assert not np.array_equal(a, substream(2, "traffic").random(3))


def test_default_idle_failure_rate_near_calibration():
    # 3 dB shadowing on a 10 m link at 1000 N0: P(10 * shadow <= 3) ~ 4%
    z = np.random.default_rng(0).standard_normal(200_000)
    g = path_gain(10, ChannelModel().shadow(z))
    rate = np.mean(~transmission_success(1000 * g, 3))
    assert 0.03 < rate < 0.05


@settings(max_examples=25)
@given(st.integers(0, 2**32))
def test_rssi_positive(seed):
    tr = World(seed=seed).advance(50)
    assert np.all(tr.rssi_T >= 1.0) and np.all(tr.rssi_J >= 1.0)
