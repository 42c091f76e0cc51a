/** Typed client for the edit service. Fetch is injected for testability. */

import {
  EditSubmission,
  IntentionsRequest,
  IntentionsResponse,
  JobView,
  ResultView,
} from "./wire.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly retryAfter: number | null = null,
  ) {
    super(message);
  }
}

export interface PollOptions {
  intervalMs?: number;
  backoffFactor?: number;
  maxIntervalMs?: number;
  timeoutMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class EditServiceClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    if (!resp.ok) {
      const retryAfter = resp.headers.get("retry-after");
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(detail, resp.status, retryAfter ? parseFloat(retryAfter) : null);
    }
    return (await resp.json()) as T;
  }

  postIntentions(req: IntentionsRequest): Promise<IntentionsResponse> {
    return this.request("/api/intentions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  async postEdit(submission: EditSubmission): Promise<string> {
    const body = await this.request<{ job_id: string }>("/api/edits", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(submission),
    });
    return body.job_id;
  }

  getJob(jobId: string): Promise<JobView> {
    return this.request(`/api/jobs/${jobId}`);
  }

  getResult(jobId: string, index: number): Promise<ResultView> {
    return this.request(`/api/jobs/${jobId}/results/${index}`);
  }

  /** Poll a job until done/failed; 1s interval with multiplicative backoff. */
  async awaitJob(jobId: string, opts: PollOptions = {}): Promise<JobView> {
    const sleep = opts.sleep ?? defaultSleep;
    let interval = opts.intervalMs ?? 1000;
    const factor = opts.backoffFactor ?? 1.5;
    const maxInterval = opts.maxIntervalMs ?? 8000;
    const deadline = Date.now() + (opts.timeoutMs ?? 10 * 60 * 1000);
    for (;;) {
      const job = await this.getJob(jobId);
      if (job.state === "done" || job.state === "failed") return job;
      if (Date.now() > deadline) throw new ApiError(`job ${jobId} timed out`, 408);
      await sleep(interval);
      interval = Math.min(interval * factor, maxInterval);
    }
  }
}
