// Browser entry point: wires the pure session/overlay logic to the DOM.
// Everything stateful lives here; the imported modules stay replayable.

import {
  FetchLike,
  LabelStore,
  fetchLabels,
  fetchManifest,
  fetchResults,
} from "./api.js";
import { Draw2D, DEFAULT_TOGGLES, OverlayToggles, renderOverlay } from "./overlay.js";
import {
  KeyInput,
  SessionState,
  applyKey,
  currentFrame,
  finished,
  serializeLabels,
  startSession,
} from "./session.js";
import { DetectionRecord, LabelRecord, Manifest } from "./types.js";

type Mode = "label" | "review";

interface AppState {
  manifest: Manifest;
  trial: string;
  mode: Mode;
  session: SessionState | null;
  store: LabelStore | null;
  keyLog: KeyInput[];
  results: DetectionRecord[];
  labels: LabelRecord[];
  reviewFrame: number;
  toggles: OverlayToggles;
}

const fetchLike: FetchLike = (url, init) => fetch(url, init);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function canvasDraw(ctx: CanvasRenderingContext2D, scale: number): Draw2D {
  return {
    ellipse(cx, cy, a, b, angleRad, color) {
      ctx.strokeStyle = color;
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      ctx.ellipse(cx * scale, cy * scale, a * scale, b * scale, angleRad, 0,
        2 * Math.PI);
      ctx.stroke();
    },
    cross(x, y, size, color) {
      ctx.strokeStyle = color;
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      ctx.moveTo(x * scale - size, y * scale);
      ctx.lineTo(x * scale + size, y * scale);
      ctx.moveTo(x * scale, y * scale - size);
      ctx.lineTo(x * scale, y * scale + size);
      ctx.stroke();
    },
    text(text, x, y, color) {
      ctx.fillStyle = color;
      ctx.font = "13px monospace";
      ctx.fillText(text, x, y);
    },
  };
}

async function loadFrame(trial: string, index: number): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`frame ${index} failed to load`));
    img.src = `/frame/${trial}/${index}`;
  });
}

async function redraw(app: AppState): Promise<void> {
  const canvas = el<HTMLCanvasElement>("view");
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    return;
  }
  const { width, height } = app.manifest;
  // Nearest-neighbour upscale filling the available viewport.
  const scale = Math.max(
    1,
    Math.floor(Math.min((window.innerWidth - 40) / width,
      (window.innerHeight - 140) / height)),
  );
  canvas.width = width * scale;
  canvas.height = height * scale;
  ctx.imageSmoothingEnabled = false;

  const frame = app.mode === "label"
    ? (app.session ? currentFrame(app.session) : null)
    : app.reviewFrame;
  const status = el<HTMLElement>("status");
  if (frame === null) {
    ctx.fillStyle = "#202020";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    status.textContent = app.session && finished(app.session)
      ? "all frames labelled; labels uploaded"
      : "select a trial to begin";
    return;
  }
  const img = await loadFrame(app.trial, frame);
  ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
  const draw = canvasDraw(ctx, scale);

  if (app.mode === "label" && app.session) {
    const e = app.session.ellipse;
    draw.ellipse(e.cx, e.cy, e.a, e.b, (e.angle_deg * Math.PI) / 180,
      "#30a0ff");
    draw.cross(e.cx, e.cy, 4, "#30a0ff");
    const pos = app.session.cursor + 1;
    status.textContent =
      `labelling ${app.trial} frame ${frame} (${pos}/${app.session.order.length})`;
  } else {
    const record = app.results.find((r) => r.frame === frame);
    const label = app.labels.find((l) => l.frame === frame);
    renderOverlay(draw, record, label, app.toggles);
    status.textContent = `review ${app.trial} frame ${frame}/` +
      `${app.manifest.trials.find((t) => t.id === app.trial)?.frames ?? 0}`;
  }
}

async function uploadLabels(app: AppState): Promise<void> {
  if (!app.session || !app.store) {
    return;
  }
  const ok = await app.store.push(serializeLabels(app.session.labels));
  const retry = el<HTMLButtonElement>("retry");
  retry.hidden = ok;
  if (!ok) {
    el<HTMLElement>("status").textContent =
      `upload failed (${app.store.lastError}); labels kept locally`;
  }
}

async function selectTrial(app: AppState, trial: string): Promise<void> {
  app.trial = trial;
  app.keyLog = [];
  const info = app.manifest.trials.find((t) => t.id === trial);
  const frames = info ? info.frames : 0;
  const seedInput = el<HTMLInputElement>("seed");
  const seed = seedInput.value.trim() === "" ? null : Number(seedInput.value);
  app.labels = await fetchLabels(fetchLike, trial).catch(() => []);
  app.session = startSession(trial, frames, app.manifest.width,
    app.manifest.height, seed, app.labels);
  app.store = new LabelStore(trial, fetchLike);
  app.results = app.mode === "review"
    ? await fetchResults(fetchLike, trial).catch(() => [])
    : [];
  app.reviewFrame = 0;
  await redraw(app);
}

function bindKeys(app: AppState): void {
  window.addEventListener("keydown", async (ev) => {
    if ((ev.target as HTMLElement).tagName === "INPUT") {
      return;
    }
    if (app.mode === "review") {
      const frames =
        app.manifest.trials.find((t) => t.id === app.trial)?.frames ?? 0;
      if (ev.key === "ArrowRight") {
        app.reviewFrame = Math.min(app.reviewFrame + 1, frames - 1);
      } else if (ev.key === "ArrowLeft") {
        app.reviewFrame = Math.max(app.reviewFrame - 1, 0);
      } else if (ev.key === "d") {
        app.toggles = { ...app.toggles, detection: !app.toggles.detection };
      } else if (ev.key === "p") {
        app.toggles = { ...app.toggles, prediction: !app.toggles.prediction };
      } else if (ev.key === "l") {
        app.toggles = { ...app.toggles, label: !app.toggles.label };
      } else if (ev.key === "c") {
        app.toggles = { ...app.toggles, readouts: !app.toggles.readouts };
      } else {
        return;
      }
      ev.preventDefault();
      await redraw(app);
      return;
    }
    if (!app.session) {
      return;
    }
    const input: KeyInput = { key: ev.key, shift: ev.shiftKey };
    const next = applyKey(app.session, input);
    if (next === app.session) {
      return;
    }
    ev.preventDefault();
    app.keyLog.push(input);
    const saved = next.labels !== app.session.labels;
    app.session = next;
    if (saved) {
      await uploadLabels(app);
    }
    await redraw(app);
  });
}

async function init(): Promise<void> {
  const manifest = await fetchManifest(fetchLike);
  const app: AppState = {
    manifest,
    trial: "",
    mode: "label",
    session: null,
    store: null,
    keyLog: [],
    results: [],
    labels: [],
    reviewFrame: 0,
    toggles: { ...DEFAULT_TOGGLES },
  };

  const select = el<HTMLSelectElement>("trial");
  for (const t of manifest.trials) {
    const opt = document.createElement("option");
    opt.value = t.id;
    opt.textContent = `${t.id} (${t.frames} frames${t.has_labels ? ", labelled" : ""})`;
    select.appendChild(opt);
  }
  select.addEventListener("change", () => selectTrial(app, select.value));

  el<HTMLSelectElement>("mode").addEventListener("change", async (ev) => {
    app.mode = (ev.target as HTMLSelectElement).value as Mode;
    if (app.trial) {
      await selectTrial(app, app.trial);
    }
  });
  el<HTMLButtonElement>("retry").addEventListener("click", async () => {
    if (app.store && (await app.store.retry())) {
      el<HTMLButtonElement>("retry").hidden = true;
      el<HTMLElement>("status").textContent = "labels uploaded";
    }
  });
  el<HTMLButtonElement>("help").addEventListener("click", () => {
    const panel = el<HTMLElement>("help-panel");
    panel.hidden = !panel.hidden;
  });
  window.addEventListener("resize", () => redraw(app));

  if (manifest.trials.length) {
    select.value = manifest.trials[0].id;
    await selectTrial(app, select.value);
  }
  bindKeys(app);
}

init().catch((err) => {
  el<HTMLElement>("status").textContent = `failed to start: ${err}`;
});
