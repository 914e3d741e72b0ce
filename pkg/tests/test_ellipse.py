import math

import numpy as np
import pytest
from scipy import integrate

from pupilkit.classify import ScoredEdge
from pupilkit.edgemap import Edge
from pupilkit.ellipse import (EllipseParams, FitCandidate, FitCurves,
                              FitError, FitFilters, FitWeights, apply_filters,
                              enumerate_candidates, fit_conic, fit_errors,
                              ramanujan_circumference, restored_points,
                              score_and_select)
from pupilkit.estimator import EstimatorParams, initial_state
from pupilkit.locate import ShiftAllowances
from pupilkit.segment import chain_length

PARAMS = EstimatorParams()
FILTERS = FitFilters()
WEIGHTS = FitWeights()
CURVES = FitCurves()


def ellipse_points(cx, cy, a, b, angle=0.0, n=200, t0=0.0, t1=2 * math.pi):
    t = np.linspace(t0, t1, n, endpoint=False)
    ca, sa = math.cos(angle), math.sin(angle)
    x = cx + a * np.cos(t) * ca - b * np.sin(t) * sa
    y = cy + a * np.cos(t) * sa + b * np.sin(t) * ca
    return np.column_stack([x, y])


def axes_for_circ(circ, ar):
    lo, hi = 0.1, circ
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if ramanujan_circumference(mid, ar * mid) < circ:
            lo = mid
        else:
            hi = mid
    a = 0.5 * (lo + hi)
    return a, ar * a


def confident_state(**feature_overrides):
    state = initial_state(100.0, 100.0, PARAMS)
    fields = dict(state.__dict__)
    fields["raw_cert_pos"] = 1.0
    fields["raw_cert_app"] = 1.0
    for name, value in feature_overrides.items():
        fields[name] = state.__dict__[name].__class__(
            **{**state.__dict__[name].__dict__, "pred": value})
    return state.__class__(**fields)


# ---------------------------------------------------------------- fit accuracy

def test_fit_recovers_parameters_over_operating_range():
    k = 0
    for ar in (0.4, 0.6, 0.8, 1.0):
        for circ in (60.0, 120.0, 200.0, 290.0):
            a, b = axes_for_circ(circ, ar)
            angle = (0.37 * k) % math.pi
            k += 1
            pts = ellipse_points(57.3, 91.1, a, b, angle)
            fit = fit_conic(pts)
            p = fit.params
            assert p.cx == pytest.approx(57.3, rel=1e-3, abs=1e-3)
            assert p.cy == pytest.approx(91.1, rel=1e-3, abs=1e-3)
            assert p.a == pytest.approx(a, rel=1e-3)
            assert p.b == pytest.approx(b, rel=1e-3)
            if ar < 0.999:
                diff = abs(p.angle - angle) % math.pi
                assert min(diff, math.pi - diff) < 1e-3


def test_fit_partial_arc():
    a, b = 40.0, 30.0
    pts = ellipse_points(50, 50, a, b, 0.5, n=120, t0=0.3, t1=0.3 + math.pi)
    p = fit_conic(pts).params
    assert p.a == pytest.approx(a, rel=1e-6)
    assert p.b == pytest.approx(b, rel=1e-6)


def test_fit_translation_equivariance():
    pts = ellipse_points(0, 0, 35, 25, 0.8, n=60)
    base = fit_conic(pts).params
    shifted = fit_conic(pts + np.array([1234.5, -987.25])).params
    assert shifted.cx - base.cx == pytest.approx(1234.5, abs=1e-6)
    assert shifted.cy - base.cy == pytest.approx(-987.25, abs=1e-6)
    assert shifted.a == pytest.approx(base.a, abs=1e-6)
    assert shifted.b == pytest.approx(base.b, abs=1e-6)


def test_fit_survives_noise():
    rng = np.random.default_rng(4)
    pts = ellipse_points(80, 60, 30, 24, 1.1, n=300) + rng.normal(0, 0.5, (300, 2))
    p = fit_conic(pts).params
    assert p.a == pytest.approx(30, rel=0.02)
    assert p.b == pytest.approx(24, rel=0.02)


def test_fit_rejects_degenerate_inputs():
    with pytest.raises(FitError):
        fit_conic(np.array([[0, 0], [1, 1], [2, 2], [3, 3]]))
    with pytest.raises(FitError):
        fit_conic(np.array([[x, 2.0 * x + 1.0] for x in range(50)], dtype=float))


def test_fit_always_returns_ellipse_on_scatter():
    # The constrained method cannot return a hyperbola even on noise.
    rng = np.random.default_rng(8)
    for _ in range(20):
        pts = rng.uniform(0, 100, (30, 2))
        try:
            p = fit_conic(pts).params
        except FitError:
            continue
        assert p.a >= p.b > 0


# ------------------------------------------------------------------- perimeter

def quad_circumference(a, b):
    val, _ = integrate.quad(
        lambda t: math.sqrt((a * math.sin(t)) ** 2 + (b * math.cos(t)) ** 2),
        0.0, 2.0 * math.pi, limit=200)
    return val


def test_ramanujan_against_quadrature():
    for ar in (0.4, 0.5, 0.7, 0.9, 1.0):
        for a in (10.0, 30.0, 50.0):
            b = ar * a
            exact = quad_circumference(a, b)
            approx = ramanujan_circumference(a, b)
            assert abs(approx - exact) / exact <= 5e-4


def test_circle_circumference_exact():
    assert ramanujan_circumference(10.0, 10.0) == pytest.approx(20 * math.pi)


def test_params_extent_oracle():
    p = EllipseParams(cx=0, cy=0, a=20, b=10, angle=0.0)
    assert p.width == pytest.approx(40.0)
    assert p.height == pytest.approx(20.0)
    q = EllipseParams(cx=0, cy=0, a=20, b=10, angle=math.pi / 2)
    assert q.width == pytest.approx(20.0)
    assert q.height == pytest.approx(40.0)
    assert p.aspect_ratio == pytest.approx(0.5)


def test_fit_errors_approximate_geometric_distance():
    pts = ellipse_points(0, 0, 30, 20, 0.0, n=50)
    fit = fit_conic(pts)
    probe = np.array([[31.0, 0.0], [0.0, 21.5], [30.5, 0.0]])
    err = fit_errors(fit, probe)
    assert err[0] == pytest.approx(1.0, abs=0.1)
    assert err[1] == pytest.approx(1.5, abs=0.1)
    assert err[2] == pytest.approx(0.5, abs=0.05)


# ------------------------------------------------------------------ candidates

def scored_edge(points, score=1.0, removed=None):
    removed = removed if removed is not None else np.empty((0, 2), dtype=np.int64)
    pts = np.asarray(np.rint(points), dtype=np.int64)
    edge = Edge(points=pts, removed=removed, ordered=True)
    return ScoredEdge(edge=edge, features=None, values={}, score=score)


def quarter_edges(cx, cy, a, b):
    return [scored_edge(ellipse_points(cx, cy, a, b, 0.0, n=60,
                                       t0=q * math.pi / 2,
                                       t1=(q + 1) * math.pi / 2))
            for q in range(4)]


def open_allowances():
    return ShiftAllowances(pos=300.0, circ=0.9, ar=0.95)


def test_four_edges_give_fifteen_subsets():
    circ = 2 * math.pi * 25
    edges = quarter_edges(100, 100, 25, 25)
    state = confident_state(circ=circ, width=50.0, height=50.0)
    cands = enumerate_candidates(edges, state, open_allowances(),
                                 FitFilters(max_fits=100))
    assert len(cands) == 15
    assert {c.edge_ids for c in cands} == \
        {tuple(i for i in range(4) if m & (1 << i)) for m in range(1, 16)}


def test_candidate_cap_prefers_lengths_near_prediction():
    circ = 2 * math.pi * 25
    edges = quarter_edges(100, 100, 25, 25)
    state = confident_state(circ=circ, width=50.0, height=50.0)
    cands = enumerate_candidates(edges, state, open_allowances(), FILTERS)
    assert len(cands) == FILTERS.max_fits == 6
    lengths = {tuple(sorted(se.edge_ids)): None for se in []}
    all_cands = enumerate_candidates(edges, state, open_allowances(),
                                     FitFilters(max_fits=100))
    pred = state.circ.pred
    kept_dist = sorted(abs(c.length - pred) for c in cands)
    all_dist = sorted(abs(c.length - pred) for c in all_cands)
    assert kept_dist == all_dist[:6]


def test_candidate_extent_window_filters():
    edges = quarter_edges(100, 100, 25, 25)
    # Predictions for a much smaller pupil: combined extents overflow.
    state = confident_state(circ=40.0, width=12.0, height=12.0)
    allow = ShiftAllowances(pos=6.0, circ=0.12, ar=0.09)
    cands = enumerate_candidates(edges, state, allow, FitFilters(max_fits=100))
    assert cands == []


def test_restored_points_requires_adjacency():
    edge = Edge(points=np.array([(5, 5), (6, 5)]),
                removed=np.array([(7, 6), (20, 20)]))
    pts = restored_points(edge)
    as_set = set(map(tuple, pts))
    assert (7, 6) in as_set
    assert (20, 20) not in as_set


# --------------------------------------------------------------------- filters

def candidate_from(points, length=None):
    pts = np.asarray(points, dtype=np.float64)
    cand = FitCandidate(edge_ids=(0,), points=pts,
                        length=length if length is not None else
                        chain_length(pts))
    try:
        cand.fit = fit_conic(pts)
    except FitError:
        cand.fit = None
    return cand


def filter_reject(circ, ar, state, allow, length=None, noise=None):
    a, b = axes_for_circ(circ, ar)
    pts = ellipse_points(100, 100, a, b, 0.0, n=150)
    if noise is not None:
        pts = pts + noise
    cand = candidate_from(pts, length=length)
    ok = apply_filters(cand, state, allow, FILTERS)
    return ok, cand.reject


def test_filter_circ_bounds():
    state = confident_state()
    allow = open_allowances()
    ok, reason = filter_reject(45.0, 0.9, state, allow)
    assert not ok and reason == "circ_bounds"
    ok, reason = filter_reject(310.0, 0.9, state, allow)
    assert not ok and reason == "circ_bounds"


def test_filter_aspect_ratio():
    ok, reason = filter_reject(150.0, 0.3, confident_state(), open_allowances())
    assert not ok and reason == "aspect_ratio"


def test_filter_circ_vs_ar_ceiling():
    # AR 0.5 pulls the circumference ceiling down to 154*(0.5-1)+290 = 213.
    ok, reason = filter_reject(250.0, 0.5, confident_state(ar=0.5),
                               open_allowances())
    assert not ok and reason == "circ_vs_ar"
    ok, reason = filter_reject(200.0, 0.5, confident_state(ar=0.5),
                               open_allowances())
    assert reason != "circ_vs_ar"


def test_filter_circ_shift():
    state = confident_state(circ=150.0)
    allow = ShiftAllowances(pos=6.0, circ=0.12, ar=0.95)
    ok, reason = filter_reject(200.0, 0.9, state, allow)
    assert not ok and reason == "circ_shift"


def test_filter_ar_shift():
    state = confident_state(circ=150.0, ar=0.95)
    allow = ShiftAllowances(pos=6.0, circ=0.9, ar=0.09)
    ok, reason = filter_reject(150.0, 0.6, state, allow)
    assert not ok and reason == "ar_shift"


def test_filter_edge_length_floor():
    state = confident_state(circ=150.0)
    # Floor is 0.3 * 150 * (1 - 0.12) = 39.6 with a tight circ allowance.
    allow = ShiftAllowances(pos=300.0, circ=0.12, ar=0.95)
    ok, reason = filter_reject(150.0, 0.9, state, allow, length=10.0)
    assert not ok and reason == "edge_length"
    ok, reason = filter_reject(150.0, 0.9, state, allow, length=50.0)
    assert reason != "edge_length"


def test_filter_fit_error_outliers():
    # The gate looks at the worst ceil(5% of C) point errors against the fit,
    # so junk points far from an otherwise clean fit trip it.
    state = confident_state(circ=150.0)
    a, b = axes_for_circ(150.0, 0.9)
    clean = ellipse_points(100, 100, a, b, 0.0, n=150)
    junk = np.tile([400.0, 400.0], (10, 1))
    cand = FitCandidate(edge_ids=(0,), points=np.vstack([clean, junk]),
                        length=150.0)
    cand.fit = fit_conic(clean)
    ok = apply_filters(cand, state, open_allowances(), FILTERS)
    assert not ok and cand.reject == "fit_error"


def test_filter_accepts_good_fit():
    state = confident_state(circ=150.0)
    ok, reason = filter_reject(150.0, 0.9, state, open_allowances())
    assert ok and reason is None


# ------------------------------------------------------------------- selection

def fitted_candidate(cx, cy, a, b, angle, edge_ids=(0,), length=None):
    pts = ellipse_points(cx, cy, a, b, angle, n=120)
    cand = FitCandidate(edge_ids=edge_ids, points=pts,
                        length=length if length is not None else
                        ramanujan_circumference(a, b))
    cand.fit = fit_conic(pts)
    cand.errors = fit_errors(cand.fit, pts)
    return cand


def test_select_averages_within_band_only():
    a, b = axes_for_circ(150.0, 0.9)
    state = confident_state(circ=150.0, ar=0.9)
    good1 = fitted_candidate(100, 100, a, b, 0.0, edge_ids=(0,))
    good2 = fitted_candidate(100.8, 100.8, a, b, 0.0, edge_ids=(1,))
    # Way off the predictions: scores far below the leaders.
    a2, b2 = axes_for_circ(285.0, 0.45)
    off = fitted_candidate(130, 130, a2, b2, 1.2, edge_ids=(2,), length=60.0)
    sel = score_and_select([good1, good2, off], state, WEIGHTS, CURVES, FILTERS)
    assert sel is not None
    assert sel.averaged == 2
    assert sel.edge_ids == (0, 1)
    assert sel.params.cx == pytest.approx(100.4, abs=0.05)


def test_select_ignores_rejected_candidates():
    a, b = axes_for_circ(150.0, 0.9)
    state = confident_state(circ=150.0, ar=0.9)
    good = fitted_candidate(100, 100, a, b, 0.0)
    bad = fitted_candidate(100, 100, a, b, 0.0)
    bad.reject = "fit_error"
    sel = score_and_select([bad, good], state, WEIGHTS, CURVES, FILTERS)
    assert sel.averaged == 1
    assert score_and_select([bad], state, WEIGHTS, CURVES, FILTERS) is None


def test_select_angle_circular_mean():
    # Angles 0.1 and pi - 0.1 average to 0 (mod pi), never pi / 2.
    a, b = axes_for_circ(150.0, 0.7)
    state = initial_state(100.0, 100.0, PARAMS)  # exploratory: flat scoring
    c1 = fitted_candidate(100, 100, a, b, 0.1)
    c2 = fitted_candidate(100, 100, a, b, math.pi - 0.1)
    sel = score_and_select([c1, c2], state, WEIGHTS, CURVES, FILTERS)
    assert sel.averaged == 2
    wrapped = min(sel.params.angle, math.pi - sel.params.angle)
    assert wrapped == pytest.approx(0.0, abs=1e-6)


def test_select_empty_input():
    state = confident_state()
    assert score_and_select([], state, WEIGHTS, CURVES, FILTERS) is None
