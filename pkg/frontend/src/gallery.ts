/** Result gallery: polls jobs, orders panes by confidence, feeds iteration. */

import { EditServiceClient } from "./api.js";
import { CanvasSession } from "./session.js";
import { JobView, ResultView, TraceRow } from "./wire.js";

export interface GalleryPane {
  jobId: string;
  index: number;
  result: ResultView;
}

export interface FailedPane {
  jobId: string;
  error: string;
}

export class ResultGallery {
  panes: GalleryPane[] = [];
  failures: FailedPane[] = [];

  constructor(
    private client: EditServiceClient,
    private session: CanvasSession,
  ) {}

  /** Collect every result of every finished job; panes sort by confidence. */
  async refresh(): Promise<void> {
    const panes: GalleryPane[] = [];
    const failures: FailedPane[] = [];
    for (const ref of this.session.jobHistory) {
      let job: JobView;
      try {
        job = await this.client.getJob(ref.jobId);
      } catch (err) {
        failures.push({ jobId: ref.jobId, error: String(err) });
        continue;
      }
      if (job.state === "failed") {
        failures.push({ jobId: ref.jobId, error: job.error ?? "failed" });
      } else if (job.state === "done") {
        for (let k = 0; k < job.n_results; k++) {
          const result = await this.client.getResult(ref.jobId, k);
          panes.push({ jobId: ref.jobId, index: k, result });
        }
      }
    }
    panes.sort(
      (a, b) =>
        b.result.intention.confidence - a.result.intention.confidence ||
        a.jobId.localeCompare(b.jobId) ||
        a.index - b.index,
    );
    this.panes = panes;
    this.failures = failures;
  }

  /** Clicking a pane loads its image as the next session input. */
  iterate(pane: GalleryPane): void {
    this.session.iterateFrom(pane.result.image);
  }
}

/** Per-step energy sparkline: polyline points for an SVG of the given size. */
export function sparklinePoints(
  trace: TraceRow[],
  key: "g_total" | "g_edit" | "g_quality" | "grad_norm",
  width: number,
  height: number,
): string {
  if (trace.length === 0) return "";
  const values = trace.map((row) => Number(row[key] ?? 0));
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  return values
    .map((v, i) => {
      const x = trace.length === 1 ? width / 2 : (i / (trace.length - 1)) * width;
      const y = height - ((v - lo) / span) * height;
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}
