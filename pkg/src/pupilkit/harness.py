"""Synthetic data generation, dataset plumbing, evaluation and calibration.

The generator renders anti-aliased dark-pupil frames with optional glint and
eyelid occlusion, moving the pupil along minimum-jerk saccade trajectories.
Ground truth is exact by construction, which makes the generator the oracle
for end-to-end benchmarks.  Evaluation produces detection-rate/error curves
over error thresholds plus timing histograms.
"""

from __future__ import annotations

import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import classify, pipeline
from .raster import load_gray, save_gray


# ---------------------------------------------------------------------------
# Synthetic sequences

@dataclass(frozen=True)
class SynthSpec:
    width: int = 400
    height: int = 200
    frames: int = 300
    fps: float = 250.0
    background: float = 150.0
    pupil_intensity: float = 40.0
    noise_sigma: float = 3.0
    circumference: float = 150.0   # nominal pupil circumference
    circ_wander: float = 20.0      # slow drift amplitude around the nominal
    aspect_ratio: float = 0.9
    angle_deg: float = 10.0
    glint: bool = True
    glint_radius: float = 4.0
    glint_intensity: float = 230.0
    eyelid_cover: float = 0.0      # max fraction of pupil height occluded
    eyelid_intensity: float = 200.0
    eyelid_rim_intensity: float = 90.0
    saccade_amplitude: float = 80.0
    saccade_frames: int = 20
    fixation_frames: int = 60
    supersample: int = 4

    def __post_init__(self):
        if not 60.0 - 1e-9 <= self.circumference <= 290.0 + 1e-9:
            raise ValueError("circumference outside the physical range")
        if not 0.4 <= self.aspect_ratio <= 1.0:
            raise ValueError("aspect ratio outside the physical range")
        if not 0.0 <= self.eyelid_cover <= 0.6:
            raise ValueError("eyelid cover fraction must lie in [0, 0.6]")
        if self.frames < 1 or self.width < 50 or self.height < 50:
            raise ValueError("degenerate frame geometry")


@dataclass(frozen=True)
class LabelRecord:
    frame: int
    cx: float
    cy: float
    a: float
    b: float
    angle_deg: float

    def __post_init__(self):
        if not self.a >= self.b > 0:
            raise ValueError("requires a >= b > 0")


def _axes_from_circ(circ: float, ar: float) -> tuple[float, float]:
    from .contour import _axes_for

    return _axes_for(circ, ar)


def min_jerk(x0: float, x1: float, tau: float) -> float:
    """Minimum-jerk position profile, tau in [0, 1]."""
    tau = min(max(tau, 0.0), 1.0)
    return x0 + (x1 - x0) * (10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5)


def _render_frame(spec: SynthSpec, cx: float, cy: float, a: float, b: float,
                  angle: float, glint_pos: Optional[tuple[float, float]],
                  lid_y: Optional[float], rng: np.random.Generator) -> np.ndarray:
    img = np.full((spec.height, spec.width), spec.background, dtype=np.float64)
    s = spec.supersample

    # Pupil: supersampled coverage inside its bounding box only.
    ext = max(a, b) + 2.0
    x0 = max(int(math.floor(cx - ext)), 0)
    x1 = min(int(math.ceil(cx + ext)) + 1, spec.width)
    y0 = max(int(math.floor(cy - ext)), 0)
    y1 = min(int(math.ceil(cy + ext)) + 1, spec.height)
    if x1 > x0 and y1 > y0:
        ys, xs = np.mgrid[0:(y1 - y0) * s, 0:(x1 - x0) * s]
        px = x0 + (xs + 0.5) / s - 0.5 - cx
        py = y0 + (ys + 0.5) / s - 0.5 - cy
        ca, sa = math.cos(angle), math.sin(angle)
        u = px * ca + py * sa
        v = -px * sa + py * ca
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        cov = inside.reshape(y1 - y0, s, x1 - x0, s).mean(axis=(1, 3))
        patch = img[y0:y1, x0:x1]
        img[y0:y1, x0:x1] = patch + cov * (spec.pupil_intensity - patch)

    if glint_pos is not None:
        gx, gy = glint_pos
        r = spec.glint_radius
        x0 = max(int(math.floor(gx - r - 1)), 0)
        x1 = min(int(math.ceil(gx + r + 1)) + 1, spec.width)
        y0 = max(int(math.floor(gy - r - 1)), 0)
        y1 = min(int(math.ceil(gy + r + 1)) + 1, spec.height)
        if x1 > x0 and y1 > y0:
            ys, xs = np.mgrid[0:(y1 - y0) * s, 0:(x1 - x0) * s]
            px = x0 + (xs + 0.5) / s - 0.5 - gx
            py = y0 + (ys + 0.5) / s - 0.5 - gy
            inside = px * px + py * py <= r * r
            cov = inside.reshape(y1 - y0, s, x1 - x0, s).mean(axis=(1, 3))
            patch = img[y0:y1, x0:x1]
            img[y0:y1, x0:x1] = patch + cov * (spec.glint_intensity - patch)

    if lid_y is not None and lid_y > 0:
        yl = int(round(lid_y))
        yl = min(max(yl, 0), spec.height)
        img[:max(yl - 2, 0), :] = spec.eyelid_intensity
        # A thin dark rim marks the lower lid margin, like lashes in shadow.
        img[max(yl - 2, 0):yl, :] = spec.eyelid_rim_intensity

    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synthesize_sequence(spec: SynthSpec, seed: int) -> tuple[list[np.ndarray],
                                                             list[LabelRecord]]:
    """Deterministic frame sequence plus exact ground-truth labels."""
    rng = np.random.default_rng(seed)
    a_nom, b_nom = _axes_from_circ(spec.circumference, spec.aspect_ratio)
    margin = max(a_nom, b_nom) + 12.0
    lo_x, hi_x = margin, spec.width - margin
    lo_y, hi_y = margin, spec.height - margin
    cx = float(rng.uniform(lo_x, hi_x))
    cy = float(rng.uniform(lo_y, hi_y))

    frames: list[np.ndarray] = []
    labels: list[LabelRecord] = []
    angle = math.radians(spec.angle_deg)
    n = 0
    segment_start = (cx, cy)
    segment_target = (cx, cy)
    segment_frame = 0
    segment_len = int(rng.integers(spec.fixation_frames // 2,
                                   spec.fixation_frames + 1))
    moving = False
    drift_phase = float(rng.uniform(0.0, 2 * math.pi))

    while n < spec.frames:
        if n - segment_frame >= segment_len:
            segment_frame = n
            moving = not moving
            segment_start = segment_target
            if moving:
                segment_len = spec.saccade_frames
                amp = spec.saccade_amplitude * float(rng.uniform(0.5, 1.0))
                for _ in range(20):
                    theta = float(rng.uniform(0.0, 2 * math.pi))
                    tx = segment_start[0] + amp * math.cos(theta)
                    ty = segment_start[1] + amp * math.sin(theta) * 0.4
                    if lo_x <= tx <= hi_x and lo_y <= ty <= hi_y:
                        break
                else:
                    tx = float(rng.uniform(lo_x, hi_x))
                    ty = float(rng.uniform(lo_y, hi_y))
                segment_target = (tx, ty)
            else:
                segment_len = int(rng.integers(spec.fixation_frames // 2,
                                               spec.fixation_frames + 1))
                segment_target = segment_start
        tau = (n - segment_frame + 1) / segment_len if moving else 1.0
        cx = min_jerk(segment_start[0], segment_target[0], tau)
        cy = min_jerk(segment_start[1], segment_target[1], tau)

        circ = spec.circumference + spec.circ_wander * math.sin(
            drift_phase + 2 * math.pi * n / max(spec.frames, 1))
        circ = min(max(circ, 62.0), 288.0)
        a, b = _axes_from_circ(circ, spec.aspect_ratio)

        glint_pos = None
        if spec.glint:
            glint_pos = (cx + 0.55 * a, cy - 0.35 * b)
        lid_y = None
        if spec.eyelid_cover > 0:
            # The lid oscillates slowly between fully open and max cover.
            cover = spec.eyelid_cover * 0.5 * (
                1 + math.sin(2 * math.pi * n / max(spec.frames, 1) * 2 - math.pi / 2))
            lid_y = (cy - b) + cover * 2 * b

        frames.append(_render_frame(spec, cx, cy, a, b, angle, glint_pos,
                                    lid_y, rng))
        labels.append(LabelRecord(frame=n, cx=cx, cy=cy, a=a, b=b,
                                  angle_deg=math.degrees(angle) % 180.0))
        n += 1
    return frames, labels


def load_synth_spec(path) -> SynthSpec:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    valid = {f.name for f in SynthSpec.__dataclass_fields__.values()}
    unknown = set(data) - valid - {"trials"}
    if unknown:
        raise ValueError(f"unknown synth spec fields: {sorted(unknown)}")
    data.pop("trials", None)
    return SynthSpec(**data)


# ---------------------------------------------------------------------------
# Dataset manifests

@dataclass
class TrialRef:
    id: str
    frames_dir: str   # relative to the manifest location
    labels: Optional[str] = None

@dataclass
class DatasetManifest:
    fps: float
    width: int
    height: int
    trials: list
    root: str = "."

    def trial(self, trial_id: str) -> TrialRef:
        for t in self.trials:
            if t.id == trial_id:
                return t
        raise KeyError(f"no trial {trial_id!r} in manifest")

    def frame_paths(self, t: TrialRef) -> list[str]:
        d = os.path.join(self.root, t.frames_dir)
        names = sorted(f for f in os.listdir(d)
                       if f.endswith((".png", ".pgm")))
        if not names:
            raise ValueError(f"trial {t.id}: no frames in {d}")
        return [os.path.join(d, f) for f in names]


def write_manifest(manifest: DatasetManifest, path) -> None:
    data = {
        "fps": manifest.fps, "width": manifest.width, "height": manifest.height,
        "trials": [{"id": t.id, "frames_dir": t.frames_dir, "labels": t.labels}
                   for t in manifest.trials],
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)


def load_manifest(path) -> DatasetManifest:
    with open(path) as fh:
        data = json.load(fh)
    trials = [TrialRef(id=t["id"], frames_dir=t["frames_dir"],
                       labels=t.get("labels")) for t in data["trials"]]
    m = DatasetManifest(fps=float(data["fps"]), width=int(data["width"]),
                        height=int(data["height"]), trials=trials,
                        root=os.path.dirname(os.path.abspath(str(path))))
    for t in trials:
        d = os.path.join(m.root, t.frames_dir)
        if not os.path.isdir(d):
            raise FileNotFoundError(f"trial {t.id}: missing frames dir {d}")
    return m


def write_labels(labels: Sequence[LabelRecord], path) -> None:
    with open(path, "w") as fh:
        json.dump([asdict(l) for l in labels], fh, indent=1)


def load_labels(path) -> list[LabelRecord]:
    with open(path) as fh:
        data = json.load(fh)
    return [LabelRecord(frame=int(r["frame"]), cx=float(r["cx"]),
                        cy=float(r["cy"]), a=float(r["a"]), b=float(r["b"]),
                        angle_deg=float(r["angle_deg"])) for r in data]


def generate_dataset(spec: SynthSpec, seed: int, out_dir,
                     trials: int = 1) -> DatasetManifest:
    """Render one or more trials to disk with labels and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    refs = []
    for k in range(trials):
        trial_seed = seed + k
        tid = f"trial_{trial_seed:04d}"
        tdir = out / tid
        tdir.mkdir(exist_ok=True)
        frames, labels = synthesize_sequence(spec, trial_seed)
        for i, img in enumerate(frames):
            save_gray(img, tdir / f"frame_{i:04d}.png")
        write_labels(labels, tdir / "labels.json")
        refs.append(TrialRef(id=tid, frames_dir=tid, labels=f"{tid}/labels.json"))
    manifest = DatasetManifest(fps=spec.fps, width=spec.width,
                               height=spec.height, trials=refs, root=str(out))
    write_manifest(manifest, out / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# Detection runner

def run_trial(manifest: DatasetManifest, trial: TrialRef, cfg: pipeline.Config,
              collect_debug: bool = False):
    """Run the detector over one trial; returns (results, debug bundles)."""
    det = pipeline.Detector(cfg, manifest.width, manifest.height, manifest.fps)
    results = []
    bundles = []
    for path in manifest.frame_paths(trial):
        bundle = pipeline.DebugBundle() if collect_debug else None
        results.append(det.process(load_gray(path), debug=bundle))
        if collect_debug:
            bundles.append(bundle)
    return results, bundles


# ---------------------------------------------------------------------------
# Evaluation

@dataclass
class EvalCurve:
    thresholds: np.ndarray
    detection_rate: np.ndarray
    mean_error: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.detection_rate) < -1e-12):
            raise AssertionError("detection rate must be monotone in threshold")

    def rows(self):
        for t, r, e in zip(self.thresholds, self.detection_rate, self.mean_error):
            yield float(t), float(r), float(e)


def evaluate(results: Sequence[dict], labels: Sequence[LabelRecord],
             thresholds: Optional[Sequence[float]] = None) -> EvalCurve:
    """Detection-rate and mean-error curve over centre-error thresholds.

    ``results`` are flat frame records (dicts with frame/detected/cx/cy).
    A miss counts as an error at every threshold.  Indices must align
    exactly with the labels.
    """
    if thresholds is None:
        thresholds = np.arange(0.0, 10.0 + 1e-9, 0.25)
    thresholds = np.asarray(list(thresholds), dtype=np.float64)
    by_frame = {r["frame"]: r for r in results}
    errors = []
    for lab in labels:
        if lab.frame not in by_frame:
            raise ValueError(f"no result for labelled frame {lab.frame}")
        r = by_frame[lab.frame]
        if r.get("detected") and r.get("cx") is not None:
            errors.append(math.hypot(r["cx"] - lab.cx, r["cy"] - lab.cy))
        else:
            errors.append(math.inf)
    errors = np.asarray(errors)
    n = len(errors)
    rate = np.empty(len(thresholds))
    mean_err = np.empty(len(thresholds))
    for i, t in enumerate(thresholds):
        hit = errors <= t
        rate[i] = hit.sum() / n
        mean_err[i] = float(errors[hit].mean()) if hit.any() else math.nan
    return EvalCurve(thresholds=thresholds, detection_rate=rate,
                     mean_error=mean_err)


@dataclass
class TimingSummary:
    bin_edges_ms: np.ndarray
    counts: np.ndarray
    mean_ms: float
    p95_ms: float


def timing_histogram(times_us: Sequence[float],
                     bin_ms: float = 0.5) -> TimingSummary:
    times = np.asarray(list(times_us), dtype=np.float64) / 1000.0
    if not len(times):
        raise ValueError("no timing data")
    top = max(float(times.max()), bin_ms)
    edges = np.arange(0.0, top + bin_ms, bin_ms)
    counts, edges = np.histogram(times, bins=edges)
    return TimingSummary(bin_edges_ms=edges, counts=counts,
                         mean_ms=float(times.mean()),
                         p95_ms=float(np.percentile(times, 95)))


# ---------------------------------------------------------------------------
# Calibration

def collect_edge_values(manifest: DatasetManifest, cfg: pipeline.Config,
                        trials: Optional[Sequence[str]] = None) -> dict[str, list]:
    """Feature values of edges that ended up in accepted fits.

    Runs the detector with debug capture; an edge is a positive sample when
    its index appears in the frame's accepted fit selection.
    """
    values: dict[str, list] = {name: [] for name in classify._CURVE_FIELDS}
    for trial in manifest.trials:
        if trials is not None and trial.id not in trials:
            continue
        _, bundles = run_trial(manifest, trial, cfg, collect_debug=True)
        for bundle in bundles:
            if bundle.selection is None:
                continue
            for i in bundle.selection.edge_ids:
                se = bundle.edges_classified[i]
                for name in classify._CURVE_FIELDS:
                    v = se.values[name]
                    if v is not None:
                        values[name].append(float(v))
    return values


def fit_sigma(samples: Sequence[float]) -> float:
    """Max-likelihood sigma of a zero-centred peak-1 Gaussian."""
    arr = np.asarray(list(samples), dtype=np.float64)
    if not len(arr):
        raise ValueError("no samples")
    return float(math.sqrt(float(np.mean(arr ** 2))))


def calibrate_classifier(values: dict[str, list],
                         min_samples: int = 1000) -> classify.ScoreCurves:
    """Score curves fitted on fit-membership labelled edges.

    Refuses to calibrate from fewer than ``min_samples`` positive edge
    samples; sigmas keep their defaults for features with no data.
    """
    n = len(values.get("length", []))
    if n < min_samples:
        raise ValueError(f"need at least {min_samples} labelled edges, got {n}")
    defaults = classify.ScoreCurves()
    kwargs = {}
    for name in classify._CURVE_FIELDS:
        samples = values.get(name, [])
        kwargs[name] = fit_sigma(samples) if samples else getattr(defaults, name)
        if kwargs[name] <= 0:
            kwargs[name] = getattr(defaults, name)
    return classify.ScoreCurves(**kwargs)


def calibrate_fit_error(manifest: DatasetManifest, cfg: pipeline.Config,
                        trials: Optional[Sequence[str]] = None) -> dict:
    """Re-derive the fit-error gate constants for the point-error metric.

    Samples the worst-outlier error (mean of the ceil(0.05 C) largest point
    errors, the quantity the filter thresholds) of every fit the selector
    accepted, regresses it against circumference for the normalisation
    intercept, and suggests a relative threshold at median + 5 IQR.  The
    robust rule keeps the threshold tight against the bulk of clean fits
    even when a few contaminated fits slip into the sample.
    """
    circs = []
    errs = []
    for trial in manifest.trials:
        if trials is not None and trial.id not in trials:
            continue
        _, bundles = run_trial(manifest, trial, cfg, collect_debug=True)
        for bundle in bundles:
            if bundle.selection is None:
                continue
            alive = [c for c in bundle.candidates
                     if c.reject is None and c.fit is not None]
            best = max(c.score for c in alive)
            for cand in alive:
                if best - cand.score > cfg.fit_filters.score_band:
                    continue
                circ = cand.fit.params.circumference
                k = max(1, math.ceil(cfg.fit_filters.outlier_fraction * circ))
                circs.append(circ)
                errs.append(float(np.sort(cand.errors)[-k:].mean()))
    if len(circs) < 30:
        raise ValueError(f"need at least 30 accepted fits, got {len(circs)}")
    circs = np.asarray(circs)
    errs = np.asarray(errs)
    slope, intercept = np.polyfit(circs, errs, 1)
    rel = (errs - intercept) / circs
    q1, med, q3 = np.percentile(rel, [25, 50, 75])
    return {
        "intercept": float(intercept),
        "slope": float(slope),
        "suggested_threshold": float(med + 5.0 * (q3 - q1)),
        "samples": len(circs),
    }
