import { describe, expect, it } from "vitest";
import { EditServiceClient, FetchLike } from "../src/api.js";
import { ResultGallery, sparklinePoints } from "../src/gallery.js";
import { CanvasSession } from "../src/session.js";
import { JobView, ResultView, TraceRow } from "../src/wire.js";

/** In-memory stub of the edit service's job/result endpoints. */
function stubService(jobs: Record<string, JobView>, results: Record<string, ResultView[]>): FetchLike {
  return async (url: string) => {
    const jobMatch = /\/api\/jobs\/([^/]+)$/.exec(url);
    const resultMatch = /\/api\/jobs\/([^/]+)\/results\/(\d+)$/.exec(url);
    const respond = (status: number, body: unknown) =>
      new Response(JSON.stringify(body), {
        status,
        headers: { "content-type": "application/json" },
      });
    if (resultMatch) {
      const [, id, k] = resultMatch;
      const list = results[id] ?? [];
      const idx = parseInt(k, 10);
      return idx < list.length ? respond(200, list[idx]) : respond(404, { detail: "no such result" });
    }
    if (jobMatch) {
      const job = jobs[jobMatch[1]];
      return job ? respond(200, job) : respond(404, { detail: "unknown job id" });
    }
    return respond(404, { detail: "unknown route" });
  };
}

function doneJob(id: string, n: number): JobView {
  return { id, state: "done", created_at: 0, n_results: n };
}

function result(index: number, confidence: number, image: string): ResultView {
  return {
    index,
    image,
    intention: {
      intent: `edit-${confidence}`,
      source_prompt: "s",
      target_prompt: `t${confidence}`,
      confidence,
      flags: [],
    },
    trace: [
      { t: 2, g_edit: 0.1, g_quality: 0, g_total: 0.1, grad_norm: 0.5 },
      { t: 1, g_edit: 0.05, g_quality: 0, g_total: 0.05, grad_norm: 0.2 },
    ] as TraceRow[],
    config: {},
    flags: [],
  };
}

describe("result gallery", () => {
  it("shows one done job as a pane with its trace", async () => {
    const session = new CanvasSession(16);
    session.recordJob("j1");
    const client = new EditServiceClient("", stubService(
      { j1: doneJob("j1", 1) },
      { j1: [result(0, 0.8, "IMG1")] },
    ));
    const gallery = new ResultGallery(client, session);
    await gallery.refresh();
    expect(gallery.panes.length).toBe(1);
    expect(gallery.panes[0].result.image).toBe("IMG1");
    expect(gallery.failures.length).toBe(0);
  });

  it("orders diverse results by confidence", async () => {
    const session = new CanvasSession(16);
    session.recordJob("j1");
    const client = new EditServiceClient("", stubService(
      { j1: doneJob("j1", 3) },
      { j1: [result(0, 0.45, "LOW"), result(1, 0.85, "HIGH"), result(2, 0.6, "MID")] },
    ));
    const gallery = new ResultGallery(client, session);
    await gallery.refresh();
    expect(gallery.panes.map((p) => p.result.image)).toEqual(["HIGH", "MID", "LOW"]);
  });

  it("failed jobs render their error inline and never clear state", async () => {
    const session = new CanvasSession(16);
    session.loadImage("KEEP_ME", 16);
    session.recordJob("bad");
    const client = new EditServiceClient("", stubService(
      { bad: { id: "bad", state: "failed", created_at: 0, n_results: 0, error: "listener exploded" } },
      {},
    ));
    const gallery = new ResultGallery(client, session);
    await gallery.refresh();
    expect(gallery.failures).toEqual([{ jobId: "bad", error: "listener exploded" }]);
    expect(session.imageB64).toBe("KEEP_ME");
  });

  it("click-to-iterate loads the selected result as the next input", async () => {
    const session = new CanvasSession(16);
    session.loadImage("ORIGINAL", 16);
    session.recordJob("j1");
    const client = new EditServiceClient("", stubService(
      { j1: doneJob("j1", 1) },
      { j1: [result(0, 0.8, "EDITED_IMAGE_B64")] },
    ));
    const gallery = new ResultGallery(client, session);
    await gallery.refresh();
    gallery.iterate(gallery.panes[0]);
    expect(session.imageB64).toBe("EDITED_IMAGE_B64");
  });
});

describe("sparkline", () => {
  it("maps a trace to svg polyline points", () => {
    const trace = [
      { t: 3, g_edit: 0, g_quality: 0, g_total: 1, grad_norm: 0 },
      { t: 2, g_edit: 0, g_quality: 0, g_total: 3, grad_norm: 0 },
      { t: 1, g_edit: 0, g_quality: 0, g_total: 2, grad_norm: 0 },
    ] as TraceRow[];
    expect(sparklinePoints(trace, "g_total", 100, 10)).toBe("0.0,10.0 50.0,0.0 100.0,5.0");
  });

  it("handles empty and constant traces", () => {
    expect(sparklinePoints([], "g_total", 100, 10)).toBe("");
    const flat = [
      { t: 2, g_edit: 0, g_quality: 0, g_total: 5, grad_norm: 0 },
      { t: 1, g_edit: 0, g_quality: 0, g_total: 5, grad_norm: 0 },
    ] as TraceRow[];
    expect(sparklinePoints(flat, "g_total", 100, 10)).toBe("0.0,10.0 100.0,10.0");
  });
});
