// Labelling session core: a pure reducer over keyboard input.
//
// Every state transition is a pure function of (state, key), so replaying
// a recorded key log reproduces the final labels exactly.  All step sizes
// are exact binary or decimal fractions; no transition depends on wall
// clock, randomness or the DOM.

import { LabelRecord } from "./types.js";

export interface EllipseState {
  cx: number;
  cy: number;
  a: number; // semi-major, pixels
  b: number; // semi-minor, pixels
  angle_deg: number; // [0, 180)
}

export interface SessionState {
  trial: string;
  frameCount: number;
  width: number;
  height: number;
  order: number[]; // frame visit order
  cursor: number; // index into order; frameCount when finished
  ellipse: EllipseState;
  labels: LabelRecord[]; // one per labelled frame, insertion order
}

export interface KeyInput {
  key: string;
  shift: boolean;
}

const MIN_AXIS = 0.5;

// Deterministic 32-bit PRNG (mulberry32); good enough for a shuffle and
// trivially portable.
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

// Frame visit order: sequential when seed is null, otherwise a seeded
// Fisher-Yates permutation (same seed, same order on every load).
export function frameOrder(frameCount: number, seed: number | null): number[] {
  const order = Array.from({ length: frameCount }, (_, i) => i);
  if (seed === null) {
    return order;
  }
  const rand = mulberry32(seed);
  for (let i = frameCount - 1; i > 0; i--) {
    const j = Math.floor(rand() * (i + 1));
    [order[i], order[j]] = [order[j], order[i]];
  }
  return order;
}

export function defaultEllipse(width: number, height: number): EllipseState {
  const a = Math.max(Math.min(width, height) / 8, 4);
  return { cx: width / 2, cy: height / 2, a, b: a * 0.9, angle_deg: 0 };
}

export function startSession(
  trial: string,
  frameCount: number,
  width: number,
  height: number,
  seed: number | null,
  existing: LabelRecord[] = [],
): SessionState {
  return {
    trial,
    frameCount,
    width,
    height,
    order: frameOrder(frameCount, seed),
    cursor: 0,
    ellipse: defaultEllipse(width, height),
    labels: existing.slice(),
  };
}

export function currentFrame(state: SessionState): number | null {
  return state.cursor < state.order.length ? state.order[state.cursor] : null;
}

export function finished(state: SessionState): boolean {
  return state.cursor >= state.order.length;
}

function clampAxes(a: number, b: number): { a: number; b: number } {
  const a2 = Math.max(a, MIN_AXIS);
  return { a: a2, b: Math.min(Math.max(b, MIN_AXIS), a2) };
}

function withEllipse(state: SessionState, e: EllipseState): SessionState {
  return { ...state, ellipse: e };
}

function commit(state: SessionState): SessionState {
  const frame = currentFrame(state);
  if (frame === null) {
    return state;
  }
  const e = state.ellipse;
  const record: LabelRecord = {
    frame,
    cx: e.cx,
    cy: e.cy,
    a: e.a,
    b: e.b,
    angle_deg: e.angle_deg,
  };
  // A repeated save on the same frame overwrites the earlier record.
  const labels = state.labels.filter((l) => l.frame !== frame);
  labels.push(record);
  return {
    ...state,
    labels,
    cursor: state.cursor + 1,
    // The ellipse resets whenever a new image is displayed.
    ellipse: defaultEllipse(state.width, state.height),
  };
}

export function applyKey(state: SessionState, input: KeyInput): SessionState {
  if (finished(state)) {
    return state;
  }
  const e = state.ellipse;
  const step = input.shift ? 0.25 : 1.0;
  const turn = input.shift ? 0.5 : 2.0;
  switch (input.key) {
    case "ArrowLeft":
      return withEllipse(state, { ...e, cx: e.cx - step });
    case "ArrowRight":
      return withEllipse(state, { ...e, cx: e.cx + step });
    case "ArrowUp":
      return withEllipse(state, { ...e, cy: e.cy - step });
    case "ArrowDown":
      return withEllipse(state, { ...e, cy: e.cy + step });
    case "[":
    case "{": // uniform scale down (both axes)
      return withEllipse(state, { ...e, ...clampAxes(e.a - step, e.b - step) });
    case "]":
    case "}": // uniform scale up
      return withEllipse(state, { ...e, ...clampAxes(e.a + step, e.b + step) });
    case ";": // flatten: shrink the minor axis only
      return withEllipse(state, { ...e, ...clampAxes(e.a, e.b - step) });
    case "'": // rounden: grow the minor axis only
      return withEllipse(state, { ...e, ...clampAxes(e.a, e.b + step) });
    case ",":
      return withEllipse(state, {
        ...e,
        angle_deg: ((e.angle_deg - turn) % 180 + 180) % 180,
      });
    case ".":
      return withEllipse(state, {
        ...e,
        angle_deg: ((e.angle_deg + turn) % 180 + 180) % 180,
      });
    case "r":
      return withEllipse(state, defaultEllipse(state.width, state.height));
    case "Enter":
      return commit(state);
    default:
      return state;
  }
}

export function replayKeyLog(
  start: SessionState,
  log: KeyInput[],
): SessionState {
  return log.reduce(applyKey, start);
}

// Serialization: records sorted by frame, numbers rounded to 1e-3 (the
// documented precision of the label schema).  The output is a plain JSON
// array the label server and the evaluation harness accept unmodified.
export function serializeLabels(labels: LabelRecord[]): string {
  const round3 = (v: number) => Math.round(v * 1000) / 1000;
  const sorted = labels
    .slice()
    .sort((x, y) => x.frame - y.frame)
    .map((l) => ({
      frame: l.frame,
      cx: round3(l.cx),
      cy: round3(l.cy),
      a: round3(l.a),
      b: round3(l.b),
      angle_deg: round3(l.angle_deg),
    }));
  return JSON.stringify(sorted);
}
