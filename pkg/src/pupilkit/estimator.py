"""Recursive per-frame prediction of pupil characteristics.

Each tracked feature carries a prediction, a momentum term that chases the
prediction error, and (for appearance features) a slowly-moving running
average used as a fall-back when the pupil is lost.  Two certainty channels
gate how much the rest of the pipeline trusts the predictions: one for
position, one for appearance (size/shape).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional

APPEARANCE_FEATURES = (
    "circ", "ar", "width", "height", "angle", "intensity", "gradient", "curvature",
)


@dataclass(frozen=True)
class EstimatorParams:
    position_gain: float = 0.75
    appearance_gain: float = 0.40
    mean_gain: float = 0.005
    certainty_gain: float = 1.0
    # Latency constant of the raw-to-effective certainty logistic.
    certainty_slope: float = 10.0
    # Shape constants of the certainty-change logistic.
    logistic_a: float = 0.99
    logistic_b: float = 0.50
    # Typical per-frame change bounds (99th percentile analogues).
    shift_lo_pos: float = 3.0
    shift_lo_circ: float = 0.03
    shift_lo_ar: float = 0.03
    # Extreme per-frame change bounds (99.9th percentile analogues).
    shift_hi_pos: float = 6.0
    shift_hi_circ: float = 0.12
    shift_hi_ar: float = 0.09
    # Physical pupil size bounds in pixels of circumference.
    circ_min: float = 60.0
    circ_max: float = 290.0

    def __post_init__(self):
        if not (0 < self.position_gain <= 1 and 0 < self.appearance_gain <= 1):
            raise ValueError("gains must lie in (0, 1]")
        for lo, hi in ((self.shift_lo_pos, self.shift_hi_pos),
                       (self.shift_lo_circ, self.shift_hi_circ),
                       (self.shift_lo_ar, self.shift_hi_ar)):
            if not lo < hi:
                raise ValueError("typical shift bound must be below extreme bound")
        if not 0 < self.logistic_a < 1:
            raise ValueError("logistic_a must lie in (0, 1)")
        if self.logistic_b <= 0:
            raise ValueError("logistic_b must be positive")


@dataclass(frozen=True)
class FeatureTrack:
    """Prediction, momentum, running average and start-up typical value."""

    pred: float
    momentum: float = 0.0
    mean: float = 0.0
    typical: float = 0.0


@dataclass(frozen=True)
class Measurement:
    """Measured pupil characteristics for a detected frame."""

    x: float
    y: float
    circ: float
    ar: float
    width: float
    height: float
    angle: float
    intensity: float
    gradient: float
    curvature: float


@dataclass(frozen=True)
class PupilState:
    x: float
    y: float
    px: float = 0.0
    py: float = 0.0
    circ: FeatureTrack = field(default_factory=lambda: FeatureTrack(150.0))
    ar: FeatureTrack = field(default_factory=lambda: FeatureTrack(0.9))
    width: FeatureTrack = field(default_factory=lambda: FeatureTrack(150.0 / math.pi))
    height: FeatureTrack = field(default_factory=lambda: FeatureTrack(150.0 / math.pi))
    angle: FeatureTrack = field(default_factory=lambda: FeatureTrack(0.0))
    intensity: FeatureTrack = field(default_factory=lambda: FeatureTrack(60.0))
    gradient: FeatureTrack = field(default_factory=lambda: FeatureTrack(20.0))
    curvature: FeatureTrack = field(default_factory=lambda: FeatureTrack(0.0))
    raw_cert_pos: float = 0.0
    raw_cert_app: float = 0.0
    certainty_slope: float = 10.0

    @property
    def cert_pos(self) -> float:
        return effective_certainty(self.raw_cert_pos, self.certainty_slope)

    @property
    def cert_app(self) -> float:
        return effective_certainty(self.raw_cert_app, self.certainty_slope)

    def snapshot(self) -> dict:
        """JSON-serialisable diagnostic record of the full state."""
        rec = {
            "x": self.x, "y": self.y, "px": self.px, "py": self.py,
            "cert_pos": self.cert_pos, "cert_app": self.cert_app,
            "raw_cert_pos": self.raw_cert_pos, "raw_cert_app": self.raw_cert_app,
        }
        for name in APPEARANCE_FEATURES:
            track: FeatureTrack = getattr(self, name)
            rec[name] = {"pred": track.pred, "momentum": track.momentum,
                         "mean": track.mean}
        json.dumps(rec)  # guarantee serialisability
        return rec


def initial_state(x: float, y: float, params: EstimatorParams,
                  typical_circ: float = 150.0, typical_ar: float = 0.9,
                  typical_intensity: float = 60.0, typical_gradient: float = 20.0,
                  typical_curvature: float = 0.0) -> PupilState:
    """Fresh exploratory state with predictions at their typical values."""
    diameter = typical_circ / math.pi

    def track(value: float) -> FeatureTrack:
        return FeatureTrack(pred=value, momentum=0.0, mean=value, typical=value)

    return PupilState(
        x=x, y=y,
        circ=track(typical_circ),
        ar=track(typical_ar),
        width=track(diameter),
        height=track(diameter),
        angle=track(0.0),
        intensity=track(typical_intensity),
        gradient=track(typical_gradient),
        curvature=track(typical_curvature),
        raw_cert_pos=0.0,
        raw_cert_app=0.0,
        certainty_slope=params.certainty_slope,
    )


def certainty_delta(shift: Optional[float], threshold: float,
                    a: float = 0.99, b: float = 0.50) -> float:
    """Certainty change in (-1, 1) for a per-frame feature shift.

    Positive below the typical-change threshold, negative above it.  A shift
    of ``None`` is the non-detection sentinel and returns exactly -1.
    """
    if shift is None:
        return -1.0
    if shift < 0 or threshold <= 0:
        raise ValueError("shift must be >= 0 and threshold > 0")
    k = math.log((1.0 / a - 1.0) / (b * threshold))
    return 1.0 - 2.0 / (1.0 + math.exp(k * (shift - threshold)))


def effective_certainty(raw: float, slope: float = 10.0) -> float:
    """Map raw certainty in [0, 1] through the latency logistic to (0, 1)."""
    return 1.0 / (1.0 + math.exp(-slope * (raw - 0.5)))


def certainty_update(raw: float, delta_c: float, class_gain: float,
                     certainty_gain: float, slope: float = 10.0) -> tuple[float, float]:
    """Apply a certainty change; returns (clamped raw, effective certainty)."""
    raw = min(max(raw + class_gain * certainty_gain * delta_c, 0.0), 1.0)
    return raw, effective_certainty(raw, slope)


def compute_deltas(m: Measurement, state: PupilState) -> tuple[float, float, float]:
    """Per-frame shifts: displacement, relative circumference, absolute AR."""
    d_pos = math.hypot(m.x - state.x, m.y - state.y)
    d_circ = abs(m.circ - state.circ.pred) / max(m.circ, state.circ.pred)
    d_ar = abs(m.ar - state.ar.pred)
    return d_pos, d_circ, d_ar


def _clamp_track(name: str, track: FeatureTrack, params: EstimatorParams) -> FeatureTrack:
    if name == "circ":
        return replace(track,
                       pred=min(max(track.pred, params.circ_min), params.circ_max),
                       mean=min(max(track.mean, params.circ_min), params.circ_max))
    if name == "ar":
        return replace(track,
                       pred=min(max(track.pred, 0.05), 1.0),
                       mean=min(max(track.mean, 0.05), 1.0))
    return track


def update_on_detection(state: PupilState, m: Measurement,
                        params: EstimatorParams) -> PupilState:
    """Advance all tracks with a fresh measurement and raise certainties."""
    d_pos, d_circ, d_ar = compute_deltas(m, state)
    a, b = params.logistic_a, params.logistic_b
    dc_pos = certainty_delta(d_pos, params.shift_lo_pos, a, b)
    dc_app = 0.5 * (certainty_delta(d_circ, params.shift_lo_circ, a, b)
                    + certainty_delta(d_ar, params.shift_lo_ar, a, b))
    c_pos = state.cert_pos
    c_app = state.cert_app

    gain = params.position_gain
    dx, dy = m.x - state.x, m.y - state.y
    updates = {
        "x": state.x + gain * dx + c_pos * state.px,
        "y": state.y + gain * dy + c_pos * state.py,
        "px": state.px + gain * (dx - state.px),
        "py": state.py + gain * (dy - state.py),
    }

    gain = params.appearance_gain
    for name in APPEARANCE_FEATURES:
        track: FeatureTrack = getattr(state, name)
        err = getattr(m, name) - track.pred
        new = FeatureTrack(
            pred=track.pred + gain * err + c_app * track.momentum,
            momentum=track.momentum + gain * (err - track.momentum),
            mean=track.mean + params.mean_gain * (track.pred - track.mean),
            typical=track.typical,
        )
        updates[name] = _clamp_track(name, new, params)

    raw_pos, _ = certainty_update(state.raw_cert_pos, dc_pos,
                                  params.position_gain, params.certainty_gain,
                                  params.certainty_slope)
    raw_app, _ = certainty_update(state.raw_cert_app, dc_app,
                                  params.appearance_gain, params.certainty_gain,
                                  params.certainty_slope)
    return replace(state, raw_cert_pos=raw_pos, raw_cert_app=raw_app, **updates)


def update_on_miss(state: PupilState, params: EstimatorParams) -> PupilState:
    """Relax appearance tracks toward their running averages after a lost frame.

    Position prediction is left untouched here; the approximate-detection
    stage re-estimates it.  Both certainty channels take the full -1 hit.
    """
    c_app = state.cert_app
    gain = params.appearance_gain
    updates = {}
    for name in APPEARANCE_FEATURES:
        track: FeatureTrack = getattr(state, name)
        new = FeatureTrack(
            pred=track.pred + gain * (track.mean - track.pred) + c_app * track.momentum,
            momentum=(1.0 - gain) * track.momentum,
            # The running average tracks the typical value while no
            # measurement is available.
            mean=track.mean + params.mean_gain * (track.typical - track.mean),
            typical=track.typical,
        )
        updates[name] = _clamp_track(name, new, params)

    raw_pos, _ = certainty_update(state.raw_cert_pos, -1.0,
                                  params.position_gain, params.certainty_gain,
                                  params.certainty_slope)
    raw_app, _ = certainty_update(state.raw_cert_app, -1.0,
                                  params.appearance_gain, params.certainty_gain,
                                  params.certainty_slope)
    return replace(state, raw_cert_pos=raw_pos, raw_cert_app=raw_app, **updates)
