"""Direct least-squares ellipse fitting, filtering and fit selection.

Candidate point sets are assembled from scored edges, fitted with the
numerically stable direct conic method, pushed through a cascade of size,
shape and error filters, and the survivors are scored; fits close to the
best score are averaged into the final pupil measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .classify import ScoredEdge, gauss
from .edgemap import Edge
from .estimator import PupilState
from .locate import ShiftAllowances


def ramanujan_circumference(a: float, b: float) -> float:
    """Ellipse perimeter by Ramanujan's second approximation."""
    if a <= 0 or b <= 0:
        raise ValueError("semi-axes must be positive")
    h = ((a - b) / (a + b)) ** 2
    return math.pi * (a + b) * (1.0 + 3.0 * h / (10.0 + math.sqrt(4.0 - 3.0 * h)))


@dataclass(frozen=True)
class EllipseParams:
    cx: float
    cy: float
    a: float  # semi-major
    b: float  # semi-minor
    angle: float  # major-axis rotation, radians in [0, pi)

    def __post_init__(self):
        if not self.a >= self.b > 0:
            raise ValueError("requires a >= b > 0")

    @property
    def aspect_ratio(self) -> float:
        return self.b / self.a

    @property
    def circumference(self) -> float:
        return ramanujan_circumference(self.a, self.b)

    @property
    def width(self) -> float:
        """Horizontal extent of the bounding box."""
        c, s = math.cos(self.angle), math.sin(self.angle)
        return 2.0 * math.sqrt((self.a * c) ** 2 + (self.b * s) ** 2)

    @property
    def height(self) -> float:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return 2.0 * math.sqrt((self.a * s) ** 2 + (self.b * c) ** 2)


@dataclass
class ConicFit:
    coeffs: np.ndarray  # (A, B, C, D, E, F) of Ax^2+Bxy+Cy^2+Dx+Ey+F = 0
    params: EllipseParams


class FitError(Exception):
    """Degenerate or non-elliptical point configuration."""


def fit_conic(points: np.ndarray) -> ConicFit:
    """Ellipse-specific direct least-squares conic fit.

    Minimizes algebraic error subject to the ellipse constraint
    4AC - B^2 = 1 using the numerically stable split-design formulation,
    so the result is always an ellipse when one exists.  Points are centred
    before solving for conditioning.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 5:
        raise FitError("need at least 5 points")
    mx, my = pts.mean(axis=0)
    x = pts[:, 0] - mx
    y = pts[:, 1] - my

    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as exc:
        raise FitError("degenerate point configuration") from exc
    m = s1 + s2 @ t
    # Premultiply by the inverse of the constraint matrix.
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    try:
        eigval, eigvec = np.linalg.eig(m)
    except np.linalg.LinAlgError as exc:
        raise FitError("eigen decomposition failed") from exc
    cond = 4.0 * eigvec[0] * eigvec[2] - eigvec[1] ** 2
    ok = np.where(np.isreal(eigval) & (cond > 0))[0]
    if not len(ok):
        raise FitError("no elliptical solution")
    a1 = np.real(eigvec[:, ok[0]])
    a2 = t @ a1
    ca, cb, cc = a1
    cd, ce, cf = a2
    # Undo the centring translation.
    d0 = cd - 2.0 * ca * mx - cb * my
    e0 = ce - 2.0 * cc * my - cb * mx
    f0 = cf + ca * mx * mx + cb * mx * my + cc * my * my - cd * mx - ce * my
    coeffs = np.array([ca, cb, cc, d0, e0, f0])
    return ConicFit(coeffs=coeffs, params=_conic_to_params(coeffs))


def _conic_to_params(coeffs: np.ndarray) -> EllipseParams:
    """Geometric parameters from general conic coefficients."""
    a, b, c, d, e, f = coeffs
    den = b * b - 4.0 * a * c
    if den >= 0:
        raise FitError("conic is not an ellipse")
    cx = (2.0 * c * d - b * e) / den
    cy = (2.0 * a * e - b * d) / den
    # Constant term of the conic evaluated at the centre.
    g = a * cx * cx + b * cx * cy + c * cy * cy + d * cx + e * cy + f
    m = np.array([[a, b / 2.0], [b / 2.0, c]])
    eigval, eigvec = np.linalg.eigh(m)
    axes2 = -g / eigval
    if np.any(axes2 <= 0):
        raise FitError("conic is not a real ellipse")
    axes = np.sqrt(axes2)
    major = int(np.argmax(axes))
    angle = math.atan2(eigvec[1, major], eigvec[0, major]) % math.pi
    return EllipseParams(cx=float(cx), cy=float(cy),
                         a=float(axes[major]), b=float(axes[1 - major]),
                         angle=float(angle))


def fit_errors(fit: ConicFit, points: np.ndarray) -> np.ndarray:
    """Per-point gradient-normalized algebraic distance |Q| / |grad Q|."""
    a, b, c, d, e, f = fit.coeffs
    x = points[:, 0].astype(np.float64)
    y = points[:, 1].astype(np.float64)
    q = a * x * x + b * x * y + c * y * y + d * x + e * y + f
    gx = 2.0 * a * x + b * y + d
    gy = b * x + 2.0 * c * y + e
    grad = np.hypot(gx, gy)
    return np.abs(q) / np.maximum(grad, 1e-12)


@dataclass(frozen=True)
class FitFilters:
    circ_min: float = 60.0
    circ_max: float = 290.0
    ar_min: float = 0.4
    circ_ar_slope: float = 154.0  # circumference ceiling falls with eccentricity
    error_intercept: float = -0.56
    error_threshold: float = 0.6
    outlier_fraction: float = 0.05
    length_floor_factor: float = 0.3
    max_fits: int = 6
    max_edges: int = 4
    score_band: float = 0.10

    def __post_init__(self):
        if not self.circ_min < self.circ_max:
            raise ValueError("circ_min must be below circ_max")
        if not 0 < self.ar_min <= 1:
            raise ValueError("ar_min must lie in (0, 1]")


@dataclass(frozen=True)
class FitWeights:
    circ: float = 0.4
    ar: float = 0.6
    length: float = 1.6
    error: float = 0.9
    angle: float = 1.5
    rho: float = 0.7  # angle down-weighting toward circular pupils


@dataclass(frozen=True)
class FitCurves:
    """Gaussian score-curve sigmas for fit features (calibration defaults).

    The error sigma is matched to the gradient-normalized point error, whose
    relative values concentrate well below 0.1 for sound fits; recalibrate
    with the fit-error routine when changing the error metric.
    """

    circ: float = 0.12
    ar: float = 0.08
    length: float = 0.30
    error: float = 0.02
    angle: float = 0.35  # radians


@dataclass
class FitCandidate:
    edge_ids: tuple
    points: np.ndarray
    length: float  # combined chain length of the member edges
    fit: Optional[ConicFit] = None
    errors: Optional[np.ndarray] = None
    score: float = 0.0
    reject: Optional[str] = None


def restored_points(edge: Edge) -> np.ndarray:
    """Edge points with thinning-removed pixels restored.

    A removed pixel returns only if it is 8-adjacent to a surviving point of
    the same edge, which keeps restoration local to the chain.
    """
    if not len(edge.removed):
        return edge.points
    index = {(int(x), int(y)) for x, y in edge.points}
    extra = []
    for x, y in edge.removed:
        x, y = int(x), int(y)
        if any((x + dx, y + dy) in index for dx in (-1, 0, 1) for dy in (-1, 0, 1)
               if dx or dy):
            extra.append((x, y))
    if not extra:
        return edge.points
    return np.vstack([edge.points, np.asarray(extra, dtype=np.int64)])


def enumerate_candidates(scored: Sequence[ScoredEdge], state: PupilState,
                         allow: ShiftAllowances,
                         filters: FitFilters) -> list[FitCandidate]:
    """Bounded set of edge combinations worth fitting.

    Up to ``max_edges`` best-scoring edges combine into every non-empty
    subset; subsets whose point extents disagree with the size predictions
    are dropped, and at most ``max_fits`` survive, preferring combined
    lengths closest to the circumference prediction.
    """
    from .segment import chain_length

    edges = list(scored[:filters.max_edges])
    if not edges:
        return []
    pts = [restored_points(se.edge) for se in edges]
    lengths = [chain_length(se.edge.points) for se in edges]
    dl = state.circ.pred * allow.circ / math.pi
    w_lo, w_hi = filters.length_floor_factor * (state.width.pred - dl), \
        state.width.pred + dl
    h_lo, h_hi = filters.length_floor_factor * (state.height.pred - dl), \
        state.height.pred + dl

    out = []
    n = len(edges)
    for mask in range(1, 1 << n):
        ids = tuple(i for i in range(n) if mask & (1 << i))
        stack = np.vstack([pts[i] for i in ids])
        x_ext = float(stack[:, 0].max() - stack[:, 0].min())
        y_ext = float(stack[:, 1].max() - stack[:, 1].min())
        if not (w_lo <= x_ext <= w_hi and h_lo <= y_ext <= h_hi):
            continue
        out.append(FitCandidate(edge_ids=ids, points=stack,
                                length=sum(lengths[i] for i in ids)))
    if len(out) > filters.max_fits:
        out.sort(key=lambda c: abs(c.length - state.circ.pred))
        out = out[:filters.max_fits]
    return out


def apply_filters(cand: FitCandidate, state: PupilState,
                  allow: ShiftAllowances, filters: FitFilters) -> bool:
    """Size, shape, deviation and fit-error gates; sets ``reject`` on failure."""
    if cand.fit is None:
        cand.reject = "fit_failed"
        return False
    p = cand.fit.params
    circ = p.circumference
    ar = p.aspect_ratio
    if not filters.circ_min <= circ <= filters.circ_max:
        cand.reject = "circ_bounds"
        return False
    if ar < filters.ar_min:
        cand.reject = "aspect_ratio"
        return False
    if circ > filters.circ_ar_slope * (ar - 1.0) + filters.circ_max:
        cand.reject = "circ_vs_ar"
        return False
    circ_pred = state.circ.pred
    if abs(circ - circ_pred) / max(circ, circ_pred) > allow.circ:
        cand.reject = "circ_shift"
        return False
    if abs(ar - state.ar.pred) > allow.ar:
        cand.reject = "ar_shift"
        return False
    if cand.length < filters.length_floor_factor * circ_pred * (1.0 - allow.circ):
        cand.reject = "edge_length"
        return False
    errors = fit_errors(cand.fit, cand.points)
    cand.errors = errors
    worst = max(int(math.ceil(filters.outlier_fraction * circ)), 1)
    worst = min(worst, len(errors))
    tail = np.sort(errors)[-worst:]
    rel = (float(tail.mean()) - filters.error_intercept) / circ
    if rel > filters.error_threshold:
        cand.reject = "fit_error"
        return False
    return True


@dataclass
class FitSelection:
    params: EllipseParams
    edge_ids: tuple  # union over the averaged fits
    score: float
    averaged: int  # number of fits merged into the result
    mean_error: float


def _fit_score(cand: FitCandidate, state: PupilState, weights: FitWeights,
               curves: FitCurves, filters: FitFilters) -> float:
    p = cand.fit.params
    circ = p.circumference
    circ_pred = state.circ.pred
    c_app = state.cert_app
    values = {
        "circ": abs(circ - circ_pred) / max(circ, circ_pred),
        "ar": abs(p.aspect_ratio - state.ar.pred),
        "length": abs(cand.length - circ_pred) / max(cand.length, circ_pred),
        "error": (float(cand.errors.mean()) - filters.error_intercept) / circ,
        "angle": abs(p.angle - state.angle.pred) % math.pi,
    }
    # Angle distance wraps at pi.
    values["angle"] = min(values["angle"], math.pi - values["angle"])
    w = {
        "circ": c_app * weights.circ,
        "ar": c_app * weights.ar,
        "length": c_app * weights.length,
        "error": weights.error,
        "angle": c_app * (1.0 - weights.rho * p.aspect_ratio) * weights.angle,
    }
    total = sum(w[k] * gauss(values[k], getattr(curves, k)) for k in w)
    denom = sum(w.values())
    return total / denom if denom > 0 else 0.0


def score_and_select(candidates: Sequence[FitCandidate], state: PupilState,
                     weights: FitWeights, curves: FitCurves,
                     filters: FitFilters) -> Optional[FitSelection]:
    """Score surviving fits and merge the near-best into one result.

    The winner plus every fit scoring within the acceptance band is averaged
    component-wise (circular mean over the axis-angle, which has period pi).
    """
    alive = [c for c in candidates if c.reject is None and c.fit is not None]
    if not alive:
        return None
    for c in alive:
        c.score = _fit_score(c, state, weights, curves, filters)
    best = max(c.score for c in alive)
    members = [c for c in alive if best - c.score <= filters.score_band]

    cx = float(np.mean([c.fit.params.cx for c in members]))
    cy = float(np.mean([c.fit.params.cy for c in members]))
    a = float(np.mean([c.fit.params.a for c in members]))
    b = float(np.mean([c.fit.params.b for c in members]))
    s2 = sum(math.sin(2.0 * c.fit.params.angle) for c in members)
    c2 = sum(math.cos(2.0 * c.fit.params.angle) for c in members)
    angle = (0.5 * math.atan2(s2, c2)) % math.pi
    edge_ids = tuple(sorted({i for c in members for i in c.edge_ids}))
    mean_err = float(np.mean([float(c.errors.mean()) for c in members]))
    params = EllipseParams(cx=cx, cy=cy, a=max(a, b), b=min(a, b), angle=angle)
    return FitSelection(params=params, edge_ids=edge_ids, score=best,
                        averaged=len(members), mean_error=mean_err)
