import json
import math

import pytest
from hypothesis import given, strategies as st

from pupilkit.estimator import (APPEARANCE_FEATURES, EstimatorParams,
                                Measurement, certainty_delta, certainty_update,
                                effective_certainty, initial_state,
                                update_on_detection, update_on_miss)

PARAMS = EstimatorParams()


def make_measurement(x=200.0, y=100.0, circ=150.0, ar=0.9, intensity=60.0,
                     gradient=20.0, curvature=3.0, angle=0.2):
    return Measurement(x=x, y=y, circ=circ, ar=ar, width=circ / math.pi,
                       height=circ / math.pi, angle=angle, intensity=intensity,
                       gradient=gradient, curvature=curvature)


def test_delta_zero_at_threshold():
    assert certainty_delta(3.0, 3.0) == pytest.approx(0.0, abs=1e-12)
    assert certainty_delta(0.03, 0.03) == pytest.approx(0.0, abs=1e-12)


def test_delta_sign_around_threshold():
    # The slope constant comes out negative for small thresholds as well,
    # so the sign convention must hold on both parameter regimes.
    for threshold in (3.0, 0.03):
        assert certainty_delta(threshold * 0.5, threshold) > 0
        assert certainty_delta(threshold * 2.0, threshold) < 0


def test_delta_none_is_exact_miss():
    assert certainty_delta(None, 3.0) == -1.0


def test_delta_bounded():
    for shift in (0.0, 0.1, 1.0, 5.0, 50.0, 500.0):
        d = certainty_delta(shift, 3.0)
        assert -1.0 <= d <= 1.0


def test_delta_rejects_bad_inputs():
    with pytest.raises(ValueError):
        certainty_delta(-1.0, 3.0)
    with pytest.raises(ValueError):
        certainty_delta(1.0, 0.0)


def test_effective_certainty_midpoint():
    assert effective_certainty(0.5, 10.0) == pytest.approx(0.5)


def test_effective_certainty_latency_shape():
    # Low raw certainty maps to nearly zero, high to nearly one.
    assert effective_certainty(0.0, 10.0) < 0.01
    assert effective_certainty(1.0, 10.0) > 0.99


def test_certainty_update_clamps():
    raw, _ = certainty_update(0.95, 1.0, 1.0, 1.0)
    assert raw == 1.0
    raw, _ = certainty_update(0.05, -1.0, 1.0, 1.0)
    assert raw == 0.0


def test_convergence_within_20_frames():
    state = initial_state(200.0, 100.0, PARAMS)
    m = make_measurement(x=220.0, y=90.0, circ=180.0, ar=0.7,
                         intensity=45.0, gradient=30.0)
    for _ in range(20):
        state = update_on_detection(state, m, PARAMS)
    assert abs(state.x - m.x) <= 0.01 * abs(m.x)
    assert abs(state.y - m.y) <= 0.01 * abs(m.y)
    for name in APPEARANCE_FEATURES:
        target = getattr(m, name)
        got = getattr(state, name).pred
        tol = 0.01 * max(abs(target), 1.0)
        assert abs(got - target) <= tol, (name, got, target)


def test_miss_momentum_decay_exact():
    state = initial_state(200.0, 100.0, PARAMS)
    m = make_measurement(circ=190.0)
    for _ in range(5):
        state = update_on_detection(state, m, PARAMS)
    before = state.circ.momentum
    after = update_on_miss(state, PARAMS).circ.momentum
    assert after == pytest.approx((1.0 - PARAMS.appearance_gain) * before,
                                  rel=1e-12)


def test_miss_relaxes_toward_mean():
    state = initial_state(200.0, 100.0, PARAMS)
    m = make_measurement(circ=250.0)
    for _ in range(30):
        state = update_on_detection(state, m, PARAMS)
    mean = state.circ.mean
    pred = state.circ.pred
    for _ in range(60):
        state = update_on_miss(state, PARAMS)
    assert abs(state.circ.pred - mean) < abs(pred - mean)


def test_miss_certainty_hits_full_penalty():
    state = initial_state(200.0, 100.0, PARAMS)
    m = make_measurement()
    for _ in range(50):
        state = update_on_detection(state, m, PARAMS)
    raw_pos = state.raw_cert_pos
    raw_app = state.raw_cert_app
    state = update_on_miss(state, PARAMS)
    # Full -1 delta scaled by the respective gains.
    assert state.raw_cert_pos == pytest.approx(
        max(raw_pos - PARAMS.position_gain, 0.0))
    assert state.raw_cert_app == pytest.approx(
        max(raw_app - PARAMS.appearance_gain, 0.0))


def test_miss_leaves_position_prediction():
    state = initial_state(200.0, 100.0, PARAMS)
    out = update_on_miss(state, PARAMS)
    assert (out.x, out.y) == (state.x, state.y)


def test_position_momentum_follows_steady_motion():
    state = initial_state(0.0, 0.0, PARAMS)
    for n in range(1, 200):
        m = make_measurement(x=2.0 * n, y=0.0)
        state = update_on_detection(state, m, PARAMS)
    # At the steady-motion fixed point the prediction advances by exactly
    # the per-frame velocity, with a constant lag and positive momentum.
    prev_x = state.x
    state = update_on_detection(state, make_measurement(x=2.0 * 200, y=0.0),
                                PARAMS)
    assert state.x - prev_x == pytest.approx(2.0, abs=1e-6)
    assert state.px > 0.0
    assert state.x > 2.0 * 200  # anticipates, leading the last measurement


def test_clamps_keep_physical_bounds():
    state = initial_state(200.0, 100.0, PARAMS)
    m = make_measurement(circ=289.0, ar=1.0)
    for _ in range(200):
        state = update_on_detection(state, m, PARAMS)
        assert PARAMS.circ_min <= state.circ.pred <= PARAMS.circ_max
        assert 0.05 <= state.ar.pred <= 1.0


def test_snapshot_is_json_serialisable():
    state = initial_state(200.0, 100.0, PARAMS)
    rec = state.snapshot()
    json.dumps(rec)
    assert rec["x"] == 200.0
    assert "circ" in rec


def test_params_validation():
    with pytest.raises(ValueError):
        EstimatorParams(position_gain=0.0)
    with pytest.raises(ValueError):
        EstimatorParams(shift_lo_pos=6.0, shift_hi_pos=3.0)
    with pytest.raises(ValueError):
        EstimatorParams(logistic_a=1.5)


@given(st.floats(0.0, 100.0), st.integers(0, 40))
def test_certainty_stays_bounded(shift, steps):
    state = initial_state(200.0, 100.0, PARAMS)
    for _ in range(steps):
        m = make_measurement(x=200.0 + shift, y=100.0)
        state = update_on_detection(state, m, PARAMS)
    assert 0.0 <= state.raw_cert_pos <= 1.0
    assert 0.0 <= state.cert_pos <= 1.0
    assert 0.0 <= state.raw_cert_app <= 1.0


@given(st.floats(0.001, 50.0), st.floats(0.001, 50.0))
def test_delta_monotone_decreasing_in_shift(a_shift, b_shift):
    lo, hi = sorted((a_shift, b_shift))
    assert certainty_delta(lo, 3.0) >= certainty_delta(hi, 3.0)
