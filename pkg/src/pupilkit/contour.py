"""Edge selection and curvature analysis.

Edges are selected by marching rays outward from the position estimate.
Along accepted chains, per-point signed curvature (degrees per edge point)
is computed from the angle between mean tangents of two windows, and the
difference of those tangents gives an inward-pointing vector used for
intensity sampling.  Dynamic curvature limits come from a calibration table
measured on rendered ellipses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .edgemap import Edge

RAY_DIRECTIONS = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)]


def select_edges(edges: Sequence[Edge], centre: tuple[float, float],
                 radius: float, min_points: int, shape: tuple[int, int]) -> list[Edge]:
    """Pick edges hit by 8 rays marched outward from ``centre``.

    Each ray accepts the first edge it meets at any distance, plus every
    further edge met within ``radius``.  Edges smaller than ``min_points``
    are invisible to the rays.  Output preserves input order, deduplicated.
    """
    h, w = shape
    label = np.full((h, w), -1, dtype=np.int32)
    for i, e in enumerate(edges):
        if len(e) >= min_points:
            label[e.points[:, 1], e.points[:, 0]] = i
    cx, cy = int(round(centre[0])), int(round(centre[1]))
    hit: set[int] = set()
    for dx, dy in RAY_DIRECTIONS:
        step = math.hypot(dx, dy)
        x, y = cx, cy
        dist = 0.0
        first_found = False
        last = -1
        while 0 <= x < w and 0 <= y < h:
            idx = int(label[y, x])
            if idx >= 0 and idx != last:
                if not first_found or dist <= radius:
                    hit.add(idx)
                first_found = True
            last = idx
            x += dx
            y += dy
            dist += step
    return [e for i, e in enumerate(edges) if i in hit]


def direction_code(points: np.ndarray, cyclic: bool = False) -> np.ndarray:
    """Unit step vectors along an ordered chain.

    Entry i is the vector from point i to point i+1 (cardinal steps are axis
    units, intercardinal steps (+-sqrt(.5), +-sqrt(.5))).  Open chains yield
    n-1 vectors; cyclic chains wrap and yield n.
    """
    pts = np.asarray(points, dtype=np.float64)
    if cyclic:
        diffs = np.roll(pts, -1, axis=0) - pts
    else:
        diffs = np.diff(pts, axis=0)
    norms = np.linalg.norm(diffs, axis=1)
    if np.any(norms == 0) or np.any(norms > math.sqrt(2) + 1e-9):
        raise ValueError("points do not form an 8-connected chain")
    return diffs / norms[:, None]


@dataclass
class CurvatureProfile:
    """Signed curvature and inward vectors along one chain.

    ``kappa`` is degrees per edge point; entries are NaN where a full tangent
    window does not fit.  ``inward`` unit vectors point toward the local
    centre of curvature (NaN rows where undefined).
    """

    kappa: np.ndarray
    inward: np.ndarray
    window: int

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.kappa)

    def mean_kappa(self) -> float:
        v = self.kappa[self.valid]
        return float(v.mean()) if len(v) else float("nan")


def curvature_profile(points: np.ndarray, window: int,
                      cyclic: bool = False) -> CurvatureProfile:
    """Per-point signed curvature over an ordered chain.

    At point i the tangents are the mean step vectors of the ``window``
    labels before and after i; the wrapped angle difference divided by the
    window size is the curvature.  If negative entries outnumber positive
    ones, every sign is flipped so that convex contours read positive.
    Chains shorter than 2*window + 1 yield an all-NaN profile.
    """
    pts = np.asarray(points)
    n = len(pts)
    kappa = np.full(n, np.nan)
    inward = np.full((n, 2), np.nan)
    if (not cyclic and n < 2 * window + 1) or (cyclic and n < 2 * window + 1):
        return CurvatureProfile(kappa=kappa, inward=inward, window=window)
    steps = direction_code(pts, cyclic=cyclic)

    if cyclic:
        ext = np.vstack([steps[-window:], steps, steps[:window]])
        csum = np.vstack([[0.0, 0.0], np.cumsum(ext, axis=0)])
        idx = np.arange(n)
        # step windows [i-window, i-1] and [i, i+window-1] in ext coords
        t1 = (csum[idx + window] - csum[idx]) / window
        t2 = (csum[idx + 2 * window] - csum[idx + window]) / window
        valid = np.ones(n, dtype=bool)
    else:
        csum = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
        idx = np.arange(window, n - window)
        t1 = (csum[idx] - csum[idx - window]) / window
        t2 = (csum[idx + window] - csum[idx]) / window
        valid = np.zeros(n, dtype=bool)
        valid[window:n - window] = True

    phi = np.arctan2(t2[:, 1], t2[:, 0]) - np.arctan2(t1[:, 1], t1[:, 0])
    phi = np.where(phi > np.pi, phi - 2 * np.pi, phi)
    phi = np.where(phi < -np.pi, phi + 2 * np.pi, phi)
    kap = np.degrees(phi) / window

    dt = t2 - t1
    norms = np.linalg.norm(dt, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        dt_unit = np.where(norms[:, None] > 1e-12, dt / np.maximum(norms, 1e-12)[:, None],
                           np.nan)

    kappa[valid] = kap
    inward[valid] = dt_unit
    if np.sum(kappa[valid] < 0) > np.sum(kappa[valid] > 0):
        kappa = -kappa
    return CurvatureProfile(kappa=kappa, inward=inward, window=window)


class CurvatureModel:
    """Curvature-limit lookup over a (circumference, aspect ratio) grid.

    Bilinear interpolation in circumference and aspect ratio, nearest
    neighbour in window length.  Queries outside the grid are clamped.
    """

    def __init__(self, circs: np.ndarray, ars: np.ndarray, windows: np.ndarray,
                 kmin: np.ndarray, kmax: np.ndarray):
        self.circs = np.asarray(circs, dtype=np.float64)
        self.ars = np.asarray(ars, dtype=np.float64)
        self.windows = np.asarray(windows, dtype=np.int64)
        self.kmin = np.asarray(kmin, dtype=np.float64)  # [circ, ar, window]
        self.kmax = np.asarray(kmax, dtype=np.float64)
        if self.kmin.shape != (len(self.circs), len(self.ars), len(self.windows)):
            raise ValueError("grid shape mismatch")
        if np.any(self.kmax < self.kmin):
            raise ValueError("kappa_max below kappa_min in calibration grid")

    def _interp(self, table: np.ndarray, circ: float, ar: float, window: int) -> float:
        wi = int(np.argmin(np.abs(self.windows - window)))
        plane = table[:, :, wi]
        circ = float(np.clip(circ, self.circs[0], self.circs[-1]))
        ar = float(np.clip(ar, self.ars[0], self.ars[-1]))
        ci = int(np.clip(np.searchsorted(self.circs, circ) - 1, 0, len(self.circs) - 2))
        ai = int(np.clip(np.searchsorted(self.ars, ar) - 1, 0, len(self.ars) - 2))
        c0, c1 = self.circs[ci], self.circs[ci + 1]
        a0, a1 = self.ars[ai], self.ars[ai + 1]
        tc = (circ - c0) / (c1 - c0) if c1 > c0 else 0.0
        ta = (ar - a0) / (a1 - a0) if a1 > a0 else 0.0
        return float(
            plane[ci, ai] * (1 - tc) * (1 - ta)
            + plane[ci + 1, ai] * tc * (1 - ta)
            + plane[ci, ai + 1] * (1 - tc) * ta
            + plane[ci + 1, ai + 1] * tc * ta
        )

    def limits(self, circ: float, ar: float, window: int,
               offset: float = 0.0) -> tuple[float, float]:
        lo = self._interp(self.kmin, circ, ar, window) - offset
        hi = self._interp(self.kmax, circ, ar, window) + offset
        return lo, hi

    def midpoint(self, circ: float, ar: float, window: int) -> float:
        lo, hi = self.limits(circ, ar, window)
        return 0.5 * (lo + hi)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"CURVGRID 1 {len(self.circs)} {len(self.ars)} {len(self.windows)}\n")
            for ci, c in enumerate(self.circs):
                for ai, a in enumerate(self.ars):
                    for wi, w in enumerate(self.windows):
                        fh.write(f"{c:.6g} {a:.6g} {int(w)} "
                                 f"{self.kmin[ci, ai, wi]:.6g} "
                                 f"{self.kmax[ci, ai, wi]:.6g}\n")

    @classmethod
    def load(cls, path) -> "CurvatureModel":
        with open(path) as fh:
            header = fh.readline().split()
            if header[:2] != ["CURVGRID", "1"]:
                raise ValueError(f"{path}: not a curvature calibration file")
            nc, na, nw = (int(v) for v in header[2:5])
            rows = [line.split() for line in fh if line.strip()]
        if len(rows) != nc * na * nw:
            raise ValueError(f"{path}: expected {nc * na * nw} rows, got {len(rows)}")
        circs = sorted({float(r[0]) for r in rows})
        ars = sorted({float(r[1]) for r in rows})
        windows = sorted({int(r[2]) for r in rows})
        kmin = np.zeros((nc, na, nw))
        kmax = np.zeros((nc, na, nw))
        ci = {v: i for i, v in enumerate(circs)}
        ai = {v: i for i, v in enumerate(ars)}
        wi = {v: i for i, v in enumerate(windows)}
        for r in rows:
            i, j, k = ci[float(r[0])], ai[float(r[1])], wi[int(r[2])]
            kmin[i, j, k] = float(r[3])
            kmax[i, j, k] = float(r[4])
        return cls(np.array(circs), np.array(ars), np.array(windows), kmin, kmax)


def curvature_limits(model: CurvatureModel, circ_pred: float, ar_pred: float,
                     allow_circ: float, allow_ar: float, window: int,
                     offset: float = 4.0) -> tuple[float, float]:
    """Dynamic segmentation thresholds for the predicted pupil.

    The query point is shifted toward the smaller/more eccentric corner of
    the allowance box so the band stays permissive under prediction error.
    """
    circ = circ_pred * (1.0 - allow_circ)
    ar = ar_pred - allow_ar
    return model.limits(circ, ar, window, offset=offset)


def render_solid_ellipse(a: float, b: float, angle: float,
                         supersample: int = 4, pad: int = 8) -> np.ndarray:
    """Anti-aliased solid dark ellipse on a white field, for calibration."""
    extent = int(math.ceil(max(a, b))) + pad
    size = 2 * extent
    s = supersample
    ys, xs = np.mgrid[0:size * s, 0:size * s]
    cxy = extent * s - 0.5
    dx = (xs - cxy) / s
    dy = (ys - cxy) / s
    ca, sa = math.cos(angle), math.sin(angle)
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    coverage = inside.reshape(size, s, size, s).mean(axis=(1, 3))
    return np.clip(np.rint(255.0 * (1.0 - coverage)), 0, 255).astype(np.uint8)


def _axes_for(circ: float, ar: float) -> tuple[float, float]:
    # Invert Ramanujan's perimeter approximation for b = ar * a by bisection.
    from .ellipse import ramanujan_circumference

    lo, hi = 1.0, circ  # perimeter is monotone in the scale factor
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ramanujan_circumference(mid, ar * mid) < circ:
            lo = mid
        else:
            hi = mid
    a = 0.5 * (lo + hi)
    return a, ar * a


def measured_kappa_range(circ: float, ar: float, windows: Sequence[int],
                         angles: Sequence[float]) -> Optional[dict[int, tuple[float, float]]]:
    """Extreme curvature values of a rendered ellipse contour.

    The ellipse is rasterized at several rotation angles; the contour is
    recovered with the same edge detection and thinning used at runtime, and
    the extreme per-point curvature is taken over all placements.
    """
    from .edgemap import canny, extract_edges, order_chain, thin

    a, b = _axes_for(circ, ar)
    if b < 2.0:
        return None
    out: dict[int, list[float]] = {w: [math.inf, -math.inf] for w in windows}
    found = False
    for angle in angles:
        img = render_solid_ellipse(a, b, angle)
        edges = extract_edges(thin(canny(img)))
        if not edges:
            continue
        edge = max(edges, key=len)
        try:
            pts, cyclic = order_chain(edge.points)
        except ValueError:
            continue
        for w in windows:
            prof = curvature_profile(pts, w, cyclic=cyclic)
            vals = prof.kappa[prof.valid]
            if not len(vals):
                continue
            found = True
            lo, hi = out[w]
            out[w] = [min(lo, float(vals.min())), max(hi, float(vals.max()))]
    if not found:
        return None
    return {w: (lo, hi) for w, (lo, hi) in out.items() if math.isfinite(lo)}


def calibrate_curvature(circs: Sequence[float], ars: Sequence[float],
                        windows: Sequence[int], angles_per_bin: int = 8,
                        progress=None) -> CurvatureModel:
    """Measure curvature limits over the calibration grid.

    Bins where rendering or contour recovery fails are filled from their
    nearest measured neighbour.  Afterwards a monotone envelope is applied:
    the band shrinks as the window grows (running intersection over window
    sizes) and widens as the aspect ratio falls (running envelope from
    circular toward eccentric), which the interpolated model then inherits
    at every query point.
    """
    circs = np.asarray(sorted(circs), dtype=np.float64)
    ars = np.asarray(sorted(ars), dtype=np.float64)
    windows = np.asarray(sorted(windows), dtype=np.int64)
    angles = [i * math.pi / angles_per_bin for i in range(angles_per_bin)]
    kmin = np.full((len(circs), len(ars), len(windows)), np.nan)
    kmax = np.full_like(kmin, np.nan)
    for ci, c in enumerate(circs):
        for ai, ar in enumerate(ars):
            ranges = measured_kappa_range(float(c), float(ar), list(windows), angles)
            if ranges:
                for wi, w in enumerate(windows):
                    if int(w) in ranges:
                        kmin[ci, ai, wi], kmax[ci, ai, wi] = ranges[int(w)]
            if progress:
                progress(ci * len(ars) + ai + 1, len(circs) * len(ars))
    _fill_missing(kmin, kmax)
    # Narrowing in window size: intersect each band with the previous one.
    for wi in range(1, len(windows)):
        kmax[:, :, wi] = np.minimum(kmax[:, :, wi], kmax[:, :, wi - 1])
        kmin[:, :, wi] = np.maximum(kmin[:, :, wi], kmin[:, :, wi - 1])
        crossed = kmin[:, :, wi] > kmax[:, :, wi]
        mid = 0.5 * (kmin[:, :, wi] + kmax[:, :, wi])
        kmin[:, :, wi] = np.where(crossed, mid, kmin[:, :, wi])
        kmax[:, :, wi] = np.where(crossed, mid, kmax[:, :, wi])
    # Widening as aspect ratio falls: running envelope from AR = max down.
    for ai in range(len(ars) - 2, -1, -1):
        kmax[:, ai, :] = np.maximum(kmax[:, ai, :], kmax[:, ai + 1, :])
        kmin[:, ai, :] = np.minimum(kmin[:, ai, :], kmin[:, ai + 1, :])
    return CurvatureModel(circs, ars, windows, kmin, kmax)


def _fill_missing(kmin: np.ndarray, kmax: np.ndarray) -> None:
    missing = np.argwhere(np.isnan(kmin))
    if not len(missing):
        return
    filled = np.argwhere(~np.isnan(kmin))
    if not len(filled):
        raise RuntimeError("curvature calibration failed at every grid point")
    for idx in missing:
        d = np.abs(filled - idx).sum(axis=1)
        src = tuple(filled[int(np.argmin(d))])
        kmin[tuple(idx)] = kmin[src]
        kmax[tuple(idx)] = kmax[src]


def default_model_path():
    from importlib.resources import files

    return files("pupilkit.data") / "curvature_model.txt"


_default_model: Optional[CurvatureModel] = None


def default_model() -> CurvatureModel:
    """The calibration table shipped with the package (cached)."""
    global _default_model
    if _default_model is None:
        _default_model = CurvatureModel.load(str(default_model_path()))
    return _default_model
