/** Wire types mirroring the edit service's request/response schemas. */

export interface PointPair {
  handle: [number, number];
  target: [number, number];
}

export interface Intention {
  intent: string;
  source_prompt: string;
  target_prompt: string;
  confidence: number;
  flags: string[];
}

export interface IntentionsRequest {
  image: string;
  points: PointPair[];
  caption: string;
  n: number;
  backend: "oracle" | "remote";
}

export interface IntentionsResponse {
  intentions: Intention[];
  truncated: boolean;
}

export interface Toggles {
  use_edit: boolean;
  use_semantic: boolean;
  use_quality: boolean;
  use_kv_replacement: boolean;
}

export interface EditSubmission {
  image: string;
  mask: string;
  caption: string;
  points: PointPair[];
  intention?: Intention;
  auto?: { n: number; backend: "oracle" | "remote" };
  seed: number;
  toggles: Toggles;
  idempotency_key?: string;
}

export type JobState = "queued" | "running" | "done" | "failed";

export interface JobView {
  id: string;
  state: JobState;
  created_at: number;
  started_at?: number | null;
  finished_at?: number | null;
  error?: string | null;
  n_results: number;
}

export interface TraceRow {
  t: number;
  g_edit: number;
  g_quality: number;
  g_total: number;
  grad_norm: number;
  [key: string]: number | boolean;
}

export interface ResultView {
  index: number;
  image: string;
  intention: Intention;
  trace: TraceRow[];
  config: Record<string, unknown>;
  flags: string[];
}

export const UNIFORM_FALLBACK_FLAG = "confidence: uniform-fallback";
