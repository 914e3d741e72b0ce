"""Track one synthetic saccade sequence and narrate what the detector does.

Renders 120 frames with glint and moderate eyelid occlusion, runs the
detector frame by frame, prints a compact per-frame trace, and finishes
with timing and accuracy summaries against the known ground truth.

Run:  python3 demos/track_saccade.py [--frames N] [--seed S]
"""

import argparse
import math

import numpy as np

from pupilkit.harness import SynthSpec, synthesize_sequence
from pupilkit.pipeline import Config, Detector


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--frames", type=int, default=120)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    spec = SynthSpec(frames=args.frames, eyelid_cover=0.3)
    frames, labels = synthesize_sequence(spec, seed=args.seed)
    det = Detector(Config(), spec.width, spec.height, spec.fps)

    print(f"{spec.width}x{spec.height} @ {spec.fps:.0f} Hz, "
          f"{len(frames)} frames, eyelid cover up to {spec.eyelid_cover:.0%}")
    print(f"{'frame':>5} {'det':>3} {'cx':>7} {'cy':>7} {'err px':>7} "
          f"{'circ':>6} {'c_pos':>5} {'c_app':>5} {'ms':>6}")

    errors = []
    times = []
    for img, lab in zip(frames, labels):
        r = det.process(img)
        times.append(sum(r.timings_us.values()) / 1000.0)
        if r.detected and r.measurement:
            m = r.measurement
            err = math.hypot(m.x - lab.cx, m.y - lab.cy)
            errors.append(err)
            print(f"{r.frame:>5} {'yes':>3} {m.x:>7.2f} {m.y:>7.2f} "
                  f"{err:>7.3f} {m.circ:>6.1f} {r.cert_pos:>5.2f} "
                  f"{r.cert_app:>5.2f} {times[-1]:>6.2f}")
        else:
            print(f"{r.frame:>5} {'no':>3} {'-':>7} {'-':>7} {'-':>7} "
                  f"{'-':>6} {r.cert_pos:>5.2f} {r.cert_app:>5.2f} "
                  f"{times[-1]:>6.2f}")

    print()
    print(f"detected {len(errors)}/{len(frames)} frames")
    if errors:
        print(f"centre error: mean {np.mean(errors):.3f} px, "
              f"p95 {np.percentile(errors, 95):.3f} px")
    print(f"frame time:   mean {np.mean(times):.2f} ms, "
          f"p95 {np.percentile(times, 95):.2f} ms")


if __name__ == "__main__":
    main()
