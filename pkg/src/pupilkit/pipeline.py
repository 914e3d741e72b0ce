"""Frame-by-frame pupil detection orchestration.

One call to ``process_frame`` runs the whole chain on a grayscale frame:
search-area crop, glint removal, approximate location, edge detection and
thinning, ray selection, the three segmentation passes, classification,
ellipse fitting and the recursive estimator update.  A frame where any stage
empties the candidate set takes the miss path; the pipeline never raises for
image content.
"""

from __future__ import annotations

import dataclasses
import json
import math
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import classify, contour, ellipse, locate, segment
from .edgemap import Edge, canny, extract_edges, thin
from .estimator import (EstimatorParams, Measurement, PupilState, initial_state,
                        update_on_detection, update_on_miss)
from .raster import Rect, as_gray

REFERENCE_WIDTH = 400
REFERENCE_HEIGHT = 200
REFERENCE_FPS = 250.0


@dataclass(frozen=True)
class DetectParams:
    """Front-end and segmentation settings outside the estimator."""

    window: int = 7                 # edge window length, points
    canny_low: float = 75.0
    canny_high: float = 150.0
    canny_sigma: float = 1.4
    glint_kernel: int = 11
    glint_floor: int = 200
    haar_skip_certainty: float = 0.75
    haar_downsample_area: int = 120 * 120
    curvature_offset: float = 4.0   # degrees added around the calibrated band
    path_cap: int = 10_000
    fps: float = 250.0

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("edge window length must be at least 2")
        if not 0 <= self.canny_low <= self.canny_high:
            raise ValueError("invalid hysteresis thresholds")
        if self.glint_kernel < 3 or self.glint_kernel % 2 == 0:
            raise ValueError("glint kernel width must be odd and >= 3")
        if self.fps <= 0:
            raise ValueError("fps must be positive")


@dataclass(frozen=True)
class Typicals:
    """Start-up values for the appearance tracks."""

    circ: float = 150.0
    ar: float = 0.9
    intensity: float = 60.0
    gradient: float = 20.0


@dataclass(frozen=True)
class Config:
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    detect: DetectParams = field(default_factory=DetectParams)
    typicals: Typicals = field(default_factory=Typicals)
    edge_weights: classify.EdgeWeights = field(default_factory=classify.EdgeWeights)
    score_curves: classify.ScoreCurves = field(default_factory=classify.ScoreCurves)
    fit_filters: ellipse.FitFilters = field(default_factory=ellipse.FitFilters)
    fit_weights: ellipse.FitWeights = field(default_factory=ellipse.FitWeights)
    fit_curves: ellipse.FitCurves = field(default_factory=ellipse.FitCurves)
    curvature_model_path: Optional[str] = None
    classifier_path: Optional[str] = None


_SECTION_TYPES = {
    "estimator": ("estimator", EstimatorParams),
    "detect": ("detect", DetectParams),
    "typicals": ("typicals", Typicals),
    "edge_weights": ("edge_weights", classify.EdgeWeights),
    "score_curves": ("score_curves", classify.ScoreCurves),
    "fit_filters": ("fit_filters", ellipse.FitFilters),
    "fit_weights": ("fit_weights", ellipse.FitWeights),
    "fit_curves": ("fit_curves", ellipse.FitCurves),
}


def load_config(path: Optional[str] = None,
                overrides: Optional[dict] = None) -> Config:
    """Configuration from a TOML file plus dotted-key overrides.

    Overrides use ``section.field`` keys (e.g. ``detect.fps``) and win over
    file values.  Unknown sections or fields raise immediately.
    """
    data: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    for key, value in (overrides or {}).items():
        section, _, fname = key.partition(".")
        if not fname:
            raise ValueError(f"override key must be section.field: {key!r}")
        data.setdefault(section, {})[fname] = value

    kwargs: dict = {}
    for section, payload in data.items():
        if section == "paths":
            for k in payload:
                if k not in ("curvature_model", "classifier"):
                    raise ValueError(f"unknown path entry {k!r}")
            if "curvature_model" in payload:
                kwargs["curvature_model_path"] = str(payload["curvature_model"])
            if "classifier" in payload:
                kwargs["classifier_path"] = str(payload["classifier"])
            continue
        if section not in _SECTION_TYPES:
            raise ValueError(f"unknown config section {section!r}")
        attr, cls = _SECTION_TYPES[section]
        valid = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - valid
        if unknown:
            raise ValueError(f"unknown fields in [{section}]: {sorted(unknown)}")
        kwargs[attr] = cls(**payload)
    return Config(**kwargs)


def scale_parameters(cfg: Config, width: int, fps: float) -> Config:
    """Adapt reference-tuned parameters to the actual image size and rate.

    Pixel-valued settings scale with the width ratio against the reference
    400 px frame; per-frame change thresholds scale with the frame-interval
    ratio against 250 Hz (clamped), matching the score-curve widening rule.
    """
    size = width / REFERENCE_WIDTH
    rate = min(max(REFERENCE_FPS / fps, 1.0), 4.0)
    est = cfg.estimator
    est = replace(
        est,
        shift_lo_pos=est.shift_lo_pos * size * rate,
        shift_hi_pos=est.shift_hi_pos * size * rate,
        shift_lo_circ=min(est.shift_lo_circ * rate, 0.5),
        shift_hi_circ=min(est.shift_hi_circ * rate, 0.9),
        shift_lo_ar=min(est.shift_lo_ar * rate, 0.5),
        shift_hi_ar=min(est.shift_hi_ar * rate, 0.9),
        circ_min=est.circ_min * size,
        circ_max=est.circ_max * size,
    )
    kernel = max(3, int(round(cfg.detect.glint_kernel * size)) | 1)
    det = replace(cfg.detect, glint_kernel=kernel, fps=fps)
    typ = replace(cfg.typicals, circ=cfg.typicals.circ * size)
    ff = replace(cfg.fit_filters,
                 circ_min=cfg.fit_filters.circ_min * size,
                 circ_max=cfg.fit_filters.circ_max * size,
                 circ_ar_slope=cfg.fit_filters.circ_ar_slope * size,
                 error_intercept=cfg.fit_filters.error_intercept * size)
    return replace(cfg, estimator=est, detect=det, typicals=typ, fit_filters=ff)


@dataclass
class FrameResult:
    frame: int
    detected: bool
    measurement: Optional[Measurement]
    shat: tuple[float, float]
    cert_pos: float
    cert_app: float
    timings_us: dict
    diagnostics: dict

    def record(self) -> dict:
        """Flat JSON-serialisable result row."""
        m = self.measurement
        return {
            "frame": self.frame,
            "detected": self.detected,
            "cx": m.x if m else None,
            "cy": m.y if m else None,
            "circumference": m.circ if m else None,
            "aspect_ratio": m.ar if m else None,
            "angle_deg": math.degrees(m.angle) if m else None,
            "sx": self.shat[0],
            "sy": self.shat[1],
            "c_pos": self.cert_pos,
            "c_app": self.cert_app,
            "time_us": sum(self.timings_us.values()),
        }


@dataclass
class DebugBundle:
    """Intermediate products for overlays and dump sinks."""

    aoi: Optional[locate.AoiParams] = None
    canny_rect: Optional[Rect] = None
    glint: Optional[locate.Glint] = None
    edges_raw: list = field(default_factory=list)
    edges_selected: list = field(default_factory=list)
    edges_segmented: list = field(default_factory=list)
    edges_classified: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    selection: Optional[ellipse.FitSelection] = None


class Detector:
    """Stateful frame processor; owns the estimator state and calibrations."""

    def __init__(self, cfg: Config, width: int, height: int,
                 fps: Optional[float] = None):
        self.cfg = scale_parameters(cfg, width, fps or cfg.detect.fps)
        self.width = width
        self.height = height
        if self.cfg.curvature_model_path:
            self.model = contour.CurvatureModel.load(self.cfg.curvature_model_path)
        else:
            self.model = contour.default_model()
        if self.cfg.classifier_path:
            curves, threshold = classify.ScoreCurves.load(self.cfg.classifier_path)
            self.cfg = replace(self.cfg, score_curves=curves,
                               edge_weights=replace(self.cfg.edge_weights,
                                                    threshold=threshold))
        self.curves = self.cfg.score_curves.scaled(self.cfg.detect.fps)
        typ = self.cfg.typicals
        self.state = initial_state(
            width / 2.0, height / 2.0, self.cfg.estimator,
            typical_circ=typ.circ, typical_ar=typ.ar,
            typical_intensity=typ.intensity, typical_gradient=typ.gradient,
            typical_curvature=self.model.midpoint(typ.circ, typ.ar,
                                                  self.cfg.detect.window),
        )
        self.frame_index = 0

    def process(self, img: np.ndarray,
                debug: Optional[DebugBundle] = None) -> FrameResult:
        result, self.state = process_frame(img, self.state, self.cfg,
                                           self.model, self.curves,
                                           frame=self.frame_index, debug=debug)
        self.frame_index += 1
        return result


def process_frame(img: np.ndarray, state: PupilState, cfg: Config,
                  model: contour.CurvatureModel,
                  curves: Optional[classify.ScoreCurves] = None,
                  frame: int = 0,
                  debug: Optional[DebugBundle] = None) -> tuple[FrameResult, PupilState]:
    img = as_gray(img)
    h, w = img.shape
    det = cfg.detect
    est = cfg.estimator
    if curves is None:
        curves = cfg.score_curves.scaled(det.fps)
    timings: dict[str, float] = {}
    diagnostics: dict = {}
    t0 = time.perf_counter()

    def mark(stage: str):
        nonlocal t0
        t1 = time.perf_counter()
        timings[stage] = (t1 - t0) * 1e6
        t0 = t1

    # Search area and glint.
    aoi = locate.compute_aoi(state, w, h, est)
    r1 = aoi.rect
    crop1 = img[r1.y:r1.y + r1.h, r1.x:r1.x + r1.w]
    glint = locate.detect_glint(crop1, det.glint_kernel, det.glint_floor)
    mark("glint")

    # Approximate position (skipped internally at high certainty).
    shat = locate.approximate_position(crop1, state, aoi, glint,
                                       det.haar_skip_certainty,
                                       det.haar_downsample_area)
    shat = (min(max(shat[0], 0.0), w - 1.0), min(max(shat[1], 0.0), h - 1.0))
    mark("haar")

    # Edge detection inside a fresh crop centred on the updated position.
    cx = int(round(shat[0] - aoi.rect.w / 2.0))
    cy = int(round(shat[1] - aoi.rect.h / 2.0))
    rect2 = Rect(min(max(cx, 0), w - aoi.rect.w),
                 min(max(cy, 0), h - aoi.rect.h), aoi.rect.w, aoi.rect.h)
    crop2 = img[rect2.y:rect2.y + rect2.h, rect2.x:rect2.x + rect2.w]
    edge_map = thin(canny(crop2, det.canny_low, det.canny_high, det.canny_sigma))
    edges = extract_edges(edge_map)
    mark("edges")
    if debug is not None:
        debug.aoi = aoi
        debug.canny_rect = rect2
        debug.glint = glint
        debug.edges_raw = edges

    local = (shat[0] - rect2.x, shat[1] - rect2.y)
    selected = contour.select_edges(edges, local, aoi.margin / 2.0,
                                    det.window, crop2.shape)
    mark("select")
    if debug is not None:
        debug.edges_selected = selected

    # Segmentation: graph paths, then curvature, then length.
    allow = aoi.allow
    kmin, kmax = contour.curvature_limits(model, state.circ.pred, state.ar.pred,
                                          allow.circ, allow.ar, det.window,
                                          det.curvature_offset)
    diagnostics["kappa_limits"] = (kmin, kmax)
    chains: list[Edge] = []
    for e in selected:
        chains.extend(segment.path_segment(e, state.circ.pred, allow.circ,
                                           est.circ_min, est.circ_max,
                                           det.window, det.path_cap))
    final_edges: list[Edge] = []
    profiles: list[Optional[contour.CurvatureProfile]] = []
    for chain in chains:
        if not chain.ordered:
            final_edges.append(chain)
            profiles.append(None)
            continue
        prof = contour.curvature_profile(chain.points, det.window,
                                         cyclic=chain.cyclic)
        for child in segment.curvature_segment(chain, prof, kmin, kmax,
                                               det.window):
            if segment.chain_length(child.points) > state.circ.pred:
                child = segment.length_segment(
                    child, state.circ.pred, local, crop2, det.window,
                    cfg.edge_weights, curves, state.cert_pos)
            cprof = contour.curvature_profile(child.points, det.window,
                                              cyclic=child.cyclic)
            final_edges.append(child)
            profiles.append(cprof)
    mark("segment")
    if debug is not None:
        debug.edges_segmented = final_edges

    # Classification.
    features = [classify.edge_features(e, local, crop2, p)
                for e, p in zip(final_edges, profiles)]
    scored = classify.classify_edges(final_edges, features, state,
                                     curves, cfg.edge_weights)
    mark("classify")
    if debug is not None:
        debug.edges_classified = scored

    # Ellipse fitting and selection.
    selection = None
    candidates: list[ellipse.FitCandidate] = []
    if scored:
        candidates = ellipse.enumerate_candidates(scored, state, allow,
                                                  cfg.fit_filters)
        for cand in candidates:
            try:
                cand.fit = ellipse.fit_conic(cand.points)
            except ellipse.FitError:
                cand.reject = "fit_failed"
                continue
            ellipse.apply_filters(cand, state, allow, cfg.fit_filters)
        selection = ellipse.score_and_select(candidates, state, cfg.fit_weights,
                                             cfg.fit_curves, cfg.fit_filters)
    mark("fit")
    diagnostics["n_edges"] = len(final_edges)
    diagnostics["n_classified"] = len(scored)
    diagnostics["rejects"] = [c.reject for c in candidates if c.reject]
    if debug is not None:
        debug.candidates = candidates
        debug.selection = selection

    if selection is None:
        new_state = update_on_miss(state, est)
        new_state = replace(new_state, x=shat[0], y=shat[1])
        mark("update")
        result = FrameResult(frame=frame, detected=False, measurement=None,
                             shat=shat, cert_pos=new_state.cert_pos,
                             cert_app=new_state.cert_app, timings_us=timings,
                             diagnostics=diagnostics)
        return result, new_state

    p = selection.params
    intensity, gradient, curvature = _member_aggregates(
        selection.edge_ids, scored)
    m = Measurement(
        x=p.cx + rect2.x, y=p.cy + rect2.y,
        circ=p.circumference, ar=p.aspect_ratio,
        width=p.width, height=p.height, angle=p.angle,
        intensity=intensity, gradient=gradient, curvature=curvature,
    )
    new_state = update_on_detection(state, m, est)
    mark("update")
    result = FrameResult(frame=frame, detected=True, measurement=m, shat=shat,
                         cert_pos=new_state.cert_pos,
                         cert_app=new_state.cert_app,
                         timings_us=timings, diagnostics=diagnostics)
    return result, new_state


def _member_aggregates(edge_ids: tuple, scored: list) -> tuple[float, float, float]:
    """Length-weighted intensity, gradient and curvature of the fitted edges."""
    total = 0.0
    sums = [0.0, 0.0, 0.0]
    kappa_total = 0.0
    kappa_sum = 0.0
    for i in edge_ids:
        se = scored[i]
        length = max(se.features.length, 1.0)
        total += length
        sums[0] += length * se.features.intensity
        sums[1] += length * se.features.gradient
        if se.features.curvature is not None:
            kappa_total += length
            kappa_sum += length * se.features.curvature
    if total == 0:
        return 0.0, 0.0, 0.0
    kappa = kappa_sum / kappa_total if kappa_total > 0 else 0.0
    return sums[0] / total, sums[1] / total, kappa


def write_results(results, path) -> None:
    """Append-style JSONL writer for frame records."""
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.record()) + "\n")
