// Thin server client.  Label uploads go through LabelStore, which keeps
// the latest unsent snapshot when the server is unreachable and retries
// on demand, so a dropped connection never loses work.

import { DetectionRecord, LabelRecord, Manifest } from "./types.js";

export interface ResponseLike {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
  text(): Promise<string>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; body?: string; headers?: Record<string, string> },
) => Promise<ResponseLike>;

async function getJson(fetchFn: FetchLike, url: string): Promise<unknown> {
  const resp = await fetchFn(url);
  if (!resp.ok) {
    throw new Error(`GET ${url} -> ${resp.status}`);
  }
  return resp.json();
}

export async function fetchManifest(fetchFn: FetchLike): Promise<Manifest> {
  return (await getJson(fetchFn, "/manifest")) as Manifest;
}

export async function fetchLabels(
  fetchFn: FetchLike,
  trial: string,
): Promise<LabelRecord[]> {
  return (await getJson(fetchFn, `/labels/${trial}`)) as LabelRecord[];
}

export async function fetchResults(
  fetchFn: FetchLike,
  trial: string,
): Promise<DetectionRecord[]> {
  const resp = await fetchFn(`/results/${trial}`);
  if (!resp.ok) {
    throw new Error(`GET /results/${trial} -> ${resp.status}`);
  }
  const body = await resp.text();
  return body
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as DetectionRecord);
}

export class LabelStore {
  private readonly fetchFn: FetchLike;
  private readonly trial: string;
  pending: string | null = null; // serialized payload awaiting upload
  lastError: string | null = null;

  constructor(trial: string, fetchFn: FetchLike) {
    this.trial = trial;
    this.fetchFn = fetchFn;
  }

  // Uploads the full serialized label array (the server replaces the
  // file wholesale).  Returns true on success; on failure the payload is
  // buffered and a later push or retry supersedes it.
  async push(serialized: string): Promise<boolean> {
    this.pending = serialized;
    try {
      const resp = await this.fetchFn(`/labels/${this.trial}`, {
        method: "POST",
        body: serialized,
        headers: { "Content-Type": "application/json" },
      });
      if (!resp.ok) {
        this.lastError = `server replied ${resp.status}`;
        return false;
      }
    } catch (err) {
      this.lastError = err instanceof Error ? err.message : String(err);
      return false;
    }
    this.pending = null;
    this.lastError = null;
    return true;
  }

  async retry(): Promise<boolean> {
    if (this.pending === null) {
      return true;
    }
    return this.push(this.pending);
  }
}
