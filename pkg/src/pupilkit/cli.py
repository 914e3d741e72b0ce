"""Command-line entry points for detection, evaluation and calibration."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import classify, contour, harness, pipeline


def _parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        key, _, value = pair.partition("=")
        if not value:
            raise SystemExit(f"--set expects section.field=value, got {pair!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _load_config(args) -> pipeline.Config:
    return pipeline.load_config(getattr(args, "config", None),
                                _parse_overrides(getattr(args, "set", None)))


def cmd_detect(args) -> int:
    manifest = harness.load_manifest(args.manifest)
    cfg = _load_config(args)
    overlay_dir = Path(args.overlay_dir) if args.overlay_dir else None
    if overlay_dir:
        overlay_dir.mkdir(parents=True, exist_ok=True)
    for trial in manifest.trials:
        debug = bool(args.dump_fits or overlay_dir)
        results, bundles = harness.run_trial(manifest, trial, cfg,
                                             collect_debug=debug)
        out_path = os.path.join(manifest.root, trial.frames_dir, "results.jsonl")
        rows = []
        for r in results:
            row = r.record()
            if args.dump_state:
                row["diagnostics"] = _jsonable(r.diagnostics)
            if args.dump_fits and bundles:
                b = bundles[r.frame]
                row["fits"] = [
                    {"edges": list(c.edge_ids), "score": c.score,
                     "reject": c.reject}
                    for c in b.candidates
                ]
            rows.append(row)
        with open(out_path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        if overlay_dir:
            _write_overlays(manifest, trial, results, bundles, overlay_dir)
        n_det = sum(1 for r in results if r.detected)
        print(f"{trial.id}: {n_det}/{len(results)} detected -> {out_path}")
    return 0


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: str(o)))


def _write_overlays(manifest, trial, results, bundles, overlay_dir: Path):
    from PIL import Image, ImageDraw

    paths = manifest.frame_paths(trial)
    tdir = overlay_dir / trial.id
    tdir.mkdir(exist_ok=True)
    for r, bundle, path in zip(results, bundles, paths):
        with Image.open(path) as im:
            rgb = im.convert("RGB")
        draw = ImageDraw.Draw(rgb)
        rect = bundle.canny_rect
        if rect is not None:
            for edge in bundle.edges_segmented:
                for x, y in edge.points:
                    draw.point((rect.x + int(x), rect.y + int(y)),
                               fill=(70, 130, 240))
            for se in bundle.edges_classified:
                for x, y in se.edge.points:
                    draw.point((rect.x + int(x), rect.y + int(y)),
                               fill=(60, 200, 60))
        if r.detected:
            m = r.measurement
            _draw_ellipse(draw, m.x, m.y, m.circ, m.ar, m.angle)
            draw.line([(m.x - 4, m.y), (m.x + 4, m.y)], fill=(255, 255, 255))
            draw.line([(m.x, m.y - 4), (m.x, m.y + 4)], fill=(255, 255, 255))
        sx, sy = r.shat
        draw.line([(sx - 4, sy - 4), (sx + 4, sy + 4)], fill=(0, 255, 255))
        draw.line([(sx - 4, sy + 4), (sx + 4, sy - 4)], fill=(0, 255, 255))
        rgb.save(tdir / f"overlay_{r.frame:04d}.png")


def _draw_ellipse(draw, cx, cy, circ, ar, angle):
    from .contour import _axes_for

    a, b = _axes_for(circ, ar)
    t = np.linspace(0, 2 * math.pi, 90)
    ca, sa = math.cos(angle), math.sin(angle)
    xs = cx + a * np.cos(t) * ca - b * np.sin(t) * sa
    ys = cy + a * np.cos(t) * sa + b * np.sin(t) * ca
    draw.line(list(zip(xs, ys)), fill=(255, 255, 255))


def cmd_eval(args) -> int:
    with open(args.results) as fh:
        results = [json.loads(line) for line in fh if line.strip()]
    labels = harness.load_labels(args.labels)
    start, stop, step = (float(v) for v in args.thresholds.split(":"))
    thresholds = np.arange(start, stop + 1e-9, step)
    curve = harness.evaluate(results, labels, thresholds)
    print("threshold_px,detection_rate,mean_error_px")
    for t, r, e in curve.rows():
        print(f"{t:.2f},{r:.4f},{'' if math.isnan(e) else f'{e:.4f}'}")
    return 0


def cmd_synth(args) -> int:
    spec = harness.load_synth_spec(args.spec)
    manifest = harness.generate_dataset(spec, args.seed, args.out,
                                        trials=args.trials)
    print(f"wrote {len(manifest.trials)} trial(s) under {args.out}")
    return 0


def cmd_calibrate_curvature(args) -> int:
    circs = [float(v) for v in args.circumferences.split(",")]
    ars = [float(v) for v in args.aspect_ratios.split(",")]
    windows = [int(v) for v in args.windows.split(",")]

    def progress(done, total):
        if done % 10 == 0 or done == total:
            print(f"  {done}/{total} grid nodes", file=sys.stderr)

    model = contour.calibrate_curvature(circs, ars, windows,
                                        angles_per_bin=args.angles,
                                        progress=progress)
    model.save(args.out)
    print(f"curvature model -> {args.out}")
    return 0


def cmd_calibrate_classifier(args) -> int:
    manifest = harness.load_manifest(args.manifest)
    cfg = _load_config(args)
    values = harness.collect_edge_values(manifest, cfg)
    curves = harness.calibrate_classifier(values, min_samples=args.min_samples)
    curves.save(args.out, threshold=cfg.edge_weights.threshold)
    print(f"classifier curves -> {args.out} "
          f"({len(values['length'])} edge samples)")
    return 0


def cmd_calibrate_fit_error(args) -> int:
    manifest = harness.load_manifest(args.manifest)
    cfg = _load_config(args)
    stats = harness.calibrate_fit_error(manifest, cfg)
    print(json.dumps(stats, indent=2))
    return 0


def cmd_label_server(args) -> int:
    from .labelserver import serve

    serve(args.manifest, args.port, static_dir=args.static)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pupilkit",
        description="High-speed pupil detection pipeline tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--set", action="append", metavar="SECTION.FIELD=VALUE",
                       help="override a config value (repeatable)")

    p = sub.add_parser("detect", help="run detection over a dataset manifest")
    p.add_argument("manifest")
    common(p)
    p.add_argument("--dump-state", action="store_true",
                   help="include per-frame diagnostics in the output rows")
    p.add_argument("--dump-fits", action="store_true",
                   help="include per-frame fit candidates and reject reasons")
    p.add_argument("--overlay-dir", help="write overlay PNGs here")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="detection-rate curve from results and labels")
    p.add_argument("results")
    p.add_argument("labels")
    p.add_argument("--thresholds", default="0:10:0.25",
                   help="start:stop:step in pixels")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("spec", help="TOML synthesis spec")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate-curvature",
                       help="measure curvature limits on rendered ellipses")
    p.add_argument("--circumferences",
                   default="30,60,90,120,150,180,210,240,270,300,340,380")
    p.add_argument("--aspect-ratios", default="0.15,0.3,0.45,0.6,0.75,0.9,1.0")
    p.add_argument("--windows", default="5,6,7,8,9,10,11")
    p.add_argument("--angles", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate_curvature)

    p = sub.add_parser("calibrate-classifier",
                       help="fit score curves from fit-membership labels")
    p.add_argument("manifest")
    common(p)
    p.add_argument("--min-samples", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate_classifier)

    p = sub.add_parser("calibrate-fit-error",
                       help="regress fit error against circumference")
    p.add_argument("manifest")
    common(p)
    p.set_defaults(func=cmd_calibrate_fit_error)

    p = sub.add_parser("label-server", help="serve frames and labels over HTTP")
    p.add_argument("manifest")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--static", default=None,
                   help="directory of UI assets (defaults to frontend/dist)")
    p.set_defaults(func=cmd_label_server)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
