// Shared wire types.  LabelRecord mirrors the server's label schema
// exactly; DetectionRecord mirrors one row of results.jsonl.

export interface LabelRecord {
  frame: number;
  cx: number;
  cy: number;
  a: number;
  b: number;
  angle_deg: number;
}

export interface TrialInfo {
  id: string;
  frames: number;
  has_labels: boolean;
}

export interface Manifest {
  fps: number;
  width: number;
  height: number;
  trials: TrialInfo[];
}

export interface DetectionRecord {
  frame: number;
  detected: boolean;
  cx: number | null;
  cy: number | null;
  circumference: number | null;
  aspect_ratio: number | null;
  angle_deg: number | null;
  sx: number;
  sy: number;
  c_pos: number;
  c_app: number;
  time_us: number;
}
