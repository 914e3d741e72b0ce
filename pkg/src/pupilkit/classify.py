"""Edge feature extraction and scored classification.

Each selected edge yields six features: length, mean radius and its spread
around the position estimate, mean curvature, mean radial gradient, and mean
inner intensity.  Features become values relative to the current predictions,
pass through per-feature Gaussian score curves, and combine into a weighted
score that is thresholded dynamically with the certainty levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .contour import CurvatureProfile
from .edgemap import Edge
from .estimator import PupilState

_PROBE = 2.0  # probe distance in pixels for gradient and intensity sampling


@dataclass(frozen=True)
class EdgeFeatures:
    """Aggregate features of one edge chain.

    ``radius_spread`` is the standard deviation of the point-to-estimate
    distance (the table's variance entry divides by a length, so only the
    standard deviation gives a dimensionless value).  ``curvature`` is None
    for chains too short to carry a tangent window.
    """

    length: float
    radius: float
    radius_spread: float
    curvature: Optional[float]
    gradient: float
    intensity: float


@dataclass(frozen=True)
class EdgeWeights:
    length: float = 0.7
    radius: float = 0.9
    radius_spread: float = 1.2
    curvature: float = 1.4
    gradient: float = 0.7
    intensity: float = 1.4
    beta: float = 0.9
    threshold: float = 0.38


@dataclass(frozen=True)
class ScoreCurves:
    """Gaussian score curves, peak 1 at feature value 0, one sigma each.

    Sigmas default to values calibrated on synthetic data and widen for
    slower frame rates, where predictions age more between frames.
    """

    length: float = 0.25
    radius: float = 0.12
    radius_spread: float = 0.05
    curvature: float = 5.0
    gradient: float = 25.0
    intensity: float = 25.0

    def __post_init__(self):
        for name in _CURVE_FIELDS:
            if getattr(self, name) <= 0:
                raise ValueError("score curve sigma must be positive")

    def scaled(self, fps: float, reference_fps: float = 250.0) -> "ScoreCurves":
        factor = min(max(reference_fps / fps, 1.0), 4.0)
        return ScoreCurves(**{n: getattr(self, n) * factor for n in _CURVE_FIELDS})

    def save(self, path, threshold: float = 0.38) -> None:
        with open(path, "w") as fh:
            fh.write("# classifier score curves\n")
            for name in _CURVE_FIELDS:
                fh.write(f"sigma_{name} {getattr(self, name):.6g}\n")
            fh.write(f"threshold {threshold:.6g}\n")

    @classmethod
    def load(cls, path) -> tuple["ScoreCurves", float]:
        values = {}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, val = line.split()
                values[key] = float(val)
        threshold = values.pop("threshold", 0.38)
        kwargs = {}
        for name in _CURVE_FIELDS:
            key = f"sigma_{name}"
            if key not in values:
                raise ValueError(f"{path}: missing {key}")
            kwargs[name] = values[key]
        return cls(**kwargs), threshold


_CURVE_FIELDS = ("length", "radius", "radius_spread", "curvature",
                 "gradient", "intensity")


def gauss(value: float, sigma: float) -> float:
    return math.exp(-0.5 * (value / sigma) ** 2)


def _sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Nearest-pixel samples; NaN where the probe leaves the image."""
    h, w = img.shape
    xi = np.rint(xs).astype(int)
    yi = np.rint(ys).astype(int)
    ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.full(len(xs), np.nan)
    out[ok] = img[yi[ok], xi[ok]].astype(np.float64)
    return out


def _radial_dirs(points: np.ndarray, centre: tuple[float, float]) -> np.ndarray:
    """Unit vectors from the position estimate through each point."""
    d = points.astype(np.float64) - np.asarray(centre, dtype=np.float64)
    n = np.linalg.norm(d, axis=1)
    n = np.where(n > 1e-9, n, 1.0)
    return d / n[:, None]


def radial_gradient(points: np.ndarray, centre: tuple[float, float],
                    img: np.ndarray) -> float:
    """Mean intensity step across the edge in the outward direction.

    At each point the pixel nearer the estimate is subtracted from the one
    farther away, so dark-inside/light-outside transitions score positive.
    Points whose probes leave the image are skipped.
    """
    pts = points.astype(np.float64)
    dirs = _radial_dirs(points, centre)
    outer = _sample(img, pts[:, 0] + _PROBE * dirs[:, 0],
                    pts[:, 1] + _PROBE * dirs[:, 1])
    inner = _sample(img, pts[:, 0] - _PROBE * dirs[:, 0],
                    pts[:, 1] - _PROBE * dirs[:, 1])
    diff = outer - inner
    valid = ~np.isnan(diff)
    return float(diff[valid].mean()) if valid.any() else 0.0


def inner_intensity(points: np.ndarray, profile: Optional[CurvatureProfile],
                    offset: int, centre: tuple[float, float],
                    img: np.ndarray) -> float:
    """Mean brightness just inside the curve.

    Sampled a short step along the inward vector of the curvature profile;
    where that vector is undefined the direction toward the position
    estimate substitutes.
    """
    pts = points.astype(np.float64)
    dirs = -_radial_dirs(points, centre)
    if profile is not None:
        inw = profile.inward[offset:offset + len(points)]
        if len(inw) == len(points):
            ok = ~np.isnan(inw).any(axis=1)
            dirs = np.where(ok[:, None], np.where(np.isnan(inw), 0.0, inw), dirs)
    vals = _sample(img, pts[:, 0] + _PROBE * dirs[:, 0],
                   pts[:, 1] + _PROBE * dirs[:, 1])
    valid = ~np.isnan(vals)
    return float(vals[valid].mean()) if valid.any() else 0.0


def section_features(points: np.ndarray, profile: Optional[CurvatureProfile],
                     offset: int, centre: tuple[float, float],
                     img: np.ndarray) -> EdgeFeatures:
    """Features of a chain section, reusing the parent edge's profile.

    ``offset`` is the section's starting index within the parent chain.
    """
    from .segment import chain_length

    pts = np.asarray(points)
    dist = np.linalg.norm(pts.astype(np.float64)
                          - np.asarray(centre, dtype=np.float64), axis=1)
    curvature: Optional[float] = None
    if profile is not None:
        kap = profile.kappa[offset:offset + len(pts)]
        kap = kap[~np.isnan(kap)]
        if len(kap):
            curvature = float(kap.mean())
    return EdgeFeatures(
        length=chain_length(pts),
        radius=float(dist.mean()),
        radius_spread=float(dist.std()),
        curvature=curvature,
        gradient=radial_gradient(pts, centre, img),
        intensity=inner_intensity(pts, profile, offset, centre, img),
    )


def edge_features(edge: Edge, centre: tuple[float, float], img: np.ndarray,
                  profile: Optional[CurvatureProfile]) -> EdgeFeatures:
    return section_features(edge.points, profile, 0, centre, img)


def feature_values(f: EdgeFeatures, state: PupilState) -> dict[str, Optional[float]]:
    """Dimensionless feature values relative to the current predictions."""
    circ = state.circ.pred
    radius_pred = circ / (2.0 * math.pi)
    return {
        "length": abs(f.length - circ) / max(f.length, circ),
        "radius": abs(f.radius - radius_pred) / max(f.radius, radius_pred),
        "radius_spread": f.radius_spread / circ,
        "curvature": (abs(f.curvature - state.curvature.pred)
                      if f.curvature is not None else None),
        "gradient": abs(f.gradient - state.gradient.pred),
        "intensity": abs(f.intensity - state.intensity.pred),
    }


def edge_score(values: dict, curves: ScoreCurves, weights: EdgeWeights,
               cert_pos: float, cert_app: float) -> float:
    """Normalized classification score in [0, 1].

    Weights are certainty-modified per feature; the curvature and spread
    weights additionally shrink for short edges.  The score divides by the
    attainable weight sum, with the curvature term dropped entirely (from
    numerator and denominator) when the edge is too short to measure it.
    """
    f_len = values["length"]
    short = 1.0 - weights.beta * f_len
    w = {
        "length": cert_app * weights.length,
        "radius": cert_pos * weights.radius,
        "radius_spread": cert_pos * short * weights.radius_spread,
        "curvature": cert_app * short * weights.curvature,
        "gradient": cert_pos * cert_app * weights.gradient,
        "intensity": cert_app * weights.intensity,
    }
    total = 0.0
    denom = 0.0
    for name in _CURVE_FIELDS:
        if values[name] is None:
            continue
        total += w[name] * gauss(values[name], getattr(curves, name))
        denom += w[name]
    return total / denom if denom > 0 else 0.0


def similarity_score(section: EdgeFeatures, body: EdgeFeatures,
                     length_value: float, circ_pred: float,
                     weights: EdgeWeights, curves: ScoreCurves,
                     cert_pos: float) -> float:
    """Resemblance of a severed tail to the edge body.

    Same Gaussian curves as classification, but feature values compare the
    two sections directly, so no appearance certainty enters; the length
    term carries zero weight (equal for both tails by construction) and only
    modifies the spread and curvature weights.
    """
    short = 1.0 - weights.beta * length_value
    total = 0.0
    r_val = abs(section.radius - body.radius) / max(section.radius, body.radius, 1e-9)
    total += cert_pos * weights.radius * gauss(r_val, curves.radius)
    s_val = abs(section.radius_spread - body.radius_spread) / circ_pred
    total += cert_pos * short * weights.radius_spread * gauss(s_val, curves.radius_spread)
    if section.curvature is not None and body.curvature is not None:
        k_val = abs(section.curvature - body.curvature)
        total += short * weights.curvature * gauss(k_val, curves.curvature)
    g_val = abs(section.gradient - body.gradient)
    total += cert_pos * weights.gradient * gauss(g_val, curves.gradient)
    i_val = abs(section.intensity - body.intensity)
    total += weights.intensity * gauss(i_val, curves.intensity)
    return total


@dataclass
class ScoredEdge:
    edge: Edge
    features: EdgeFeatures
    values: dict
    score: float


def classify_edges(edges: Sequence[Edge], features: Sequence[EdgeFeatures],
                   state: PupilState, curves: ScoreCurves,
                   weights: EdgeWeights) -> list[ScoredEdge]:
    """Score and threshold edges; survivors sorted by descending score.

    The threshold scales with the certainty product, so an exploratory
    state accepts every selected edge.  Ties preserve input order.
    """
    c_pos, c_app = state.cert_pos, state.cert_app
    scored = []
    for edge, feats in zip(edges, features):
        values = feature_values(feats, state)
        s = edge_score(values, curves, weights, c_pos, c_app)
        scored.append(ScoredEdge(edge=edge, features=feats, values=values, score=s))
    cutoff = c_pos * c_app * weights.threshold
    kept = [se for se in scored if se.score >= cutoff]
    kept.sort(key=lambda se: -se.score)
    return kept
