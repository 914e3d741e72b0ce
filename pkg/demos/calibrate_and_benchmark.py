"""Full calibrate-then-benchmark workflow on synthetic data.

1. Renders a small calibration dataset to a temp directory.
2. Re-derives the fit-error gate constants on it.
3. Runs several benchmark trials with the calibrated config.
4. Prints the detection-rate / mean-error curve over error thresholds.

Run:  python3 demos/calibrate_and_benchmark.py [--trials N]
"""

import argparse
import tempfile
from dataclasses import replace
from pathlib import Path

from pupilkit.harness import (SynthSpec, calibrate_fit_error, evaluate,
                              generate_dataset, synthesize_sequence)
from pupilkit.pipeline import Config, Detector


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=4)
    args = ap.parse_args()

    spec = SynthSpec(eyelid_cover=0.4)
    with tempfile.TemporaryDirectory() as tmp:
        print("rendering calibration set ...")
        manifest = generate_dataset(spec, seed=100, out_dir=Path(tmp), trials=2)
        cfg = Config()
        stats = calibrate_fit_error(manifest, cfg)
    print(f"fit-error gate: intercept {stats['intercept']:.3f} px, "
          f"threshold {stats['suggested_threshold']:.2e} "
          f"({stats['samples']} samples)")
    cfg = replace(cfg, fit_filters=replace(
        cfg.fit_filters,
        error_intercept=stats["intercept"],
        error_threshold=stats["suggested_threshold"]))

    records = []
    labels = []
    offset = 0
    for seed in range(args.trials):
        print(f"benchmark trial seed {seed} ...")
        frames, labs = synthesize_sequence(spec, seed=seed)
        det = Detector(cfg, spec.width, spec.height, spec.fps)
        for img, lab in zip(frames, labs):
            row = det.process(img).record()
            row["frame"] = offset + lab.frame
            records.append(row)
            labels.append(lab.__class__(**{**lab.__dict__,
                                           "frame": offset + lab.frame}))
        offset += len(labs)

    curve = evaluate(records, labels, thresholds=[0.5, 1.0, 2.0, 4.0])
    print()
    print(f"{'threshold px':>12} {'rate':>6} {'mean err px':>12}")
    for t, rate, err in zip(curve.thresholds, curve.detection_rate,
                            curve.mean_error):
        print(f"{t:>12.1f} {rate:>6.3f} {err:>12.3f}")


if __name__ == "__main__":
    main()
