// Detection/label overlay rendering, expressed against a minimal drawing
// interface so the logic is testable without a real canvas.  The view is
// strictly read-only with respect to labels and results.

import { DetectionRecord, LabelRecord } from "./types.js";

export interface Draw2D {
  ellipse(
    cx: number,
    cy: number,
    a: number,
    b: number,
    angleRad: number,
    color: string,
  ): void;
  cross(x: number, y: number, size: number, color: string): void;
  text(text: string, x: number, y: number, color: string): void;
}

export interface OverlayToggles {
  detection: boolean;
  prediction: boolean;
  label: boolean;
  readouts: boolean;
}

export const DEFAULT_TOGGLES: OverlayToggles = {
  detection: true,
  prediction: true,
  label: true,
  readouts: true,
};

export const COLORS = {
  detection: "#00e05a",
  prediction: "#ffb400",
  label: "#30a0ff",
  notice: "#ff5050",
};

// Recover the ellipse axes from the serialized circumference and aspect
// ratio (Ramanujan's second approximation, inverted numerically).
export function axesFromCircumference(
  circ: number,
  ar: number,
): { a: number; b: number } {
  const perimeter = (a: number, b: number) => {
    const h = ((a - b) / (a + b)) ** 2;
    return Math.PI * (a + b) * (1 + (3 * h) / (10 + Math.sqrt(4 - 3 * h)));
  };
  let lo = 1e-6;
  let hi = circ; // perimeter(a, ar*a) > a for any ar in (0, 1]
  for (let i = 0; i < 60; i++) {
    const mid = (lo + hi) / 2;
    if (perimeter(mid, ar * mid) < circ) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const a = (lo + hi) / 2;
  return { a, b: ar * a };
}

export function renderOverlay(
  draw: Draw2D,
  record: DetectionRecord | undefined,
  label: LabelRecord | undefined,
  toggles: OverlayToggles,
): void {
  if (toggles.label && label) {
    draw.ellipse(
      label.cx,
      label.cy,
      label.a,
      label.b,
      (label.angle_deg * Math.PI) / 180,
      COLORS.label,
    );
    draw.cross(label.cx, label.cy, 4, COLORS.label);
  }
  if (record === undefined) {
    draw.text("no detection record for this frame", 8, 16, COLORS.notice);
    return;
  }
  if (toggles.prediction) {
    draw.cross(record.sx, record.sy, 6, COLORS.prediction);
  }
  if (toggles.detection) {
    if (record.detected && record.cx !== null && record.cy !== null) {
      const { a, b } = axesFromCircumference(
        record.circumference ?? 0,
        record.aspect_ratio ?? 1,
      );
      draw.ellipse(
        record.cx,
        record.cy,
        a,
        b,
        ((record.angle_deg ?? 0) * Math.PI) / 180,
        COLORS.detection,
      );
      draw.cross(record.cx, record.cy, 5, COLORS.detection);
    } else {
      draw.text("miss", 8, 16, COLORS.notice);
    }
  }
  if (toggles.readouts) {
    draw.text(
      `c_pos ${record.c_pos.toFixed(2)}  c_app ${record.c_app.toFixed(2)}  ` +
        `${(record.time_us / 1000).toFixed(2)} ms`,
      8,
      32,
      COLORS.prediction,
    );
  }
}
