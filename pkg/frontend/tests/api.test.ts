import { describe, expect, it } from "vitest";
import { ApiError, EditServiceClient, FetchLike } from "../src/api.js";
import { JobView } from "../src/wire.js";

function jsonResponse(status: number, body: unknown, headers: Record<string, string> = {}) {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json", ...headers },
  });
}

describe("client errors", () => {
  it("surfaces detail, status, and retry-after", async () => {
    const fetchImpl: FetchLike = async () =>
      jsonResponse(502, { detail: "remote reasoner down" }, { "retry-after": "5" });
    const client = new EditServiceClient("", fetchImpl);
    await expect(client.getJob("x")).rejects.toMatchObject({
      status: 502,
      retryAfter: 5,
      message: "remote reasoner down",
    });
  });

  it("submits the edit body unchanged and returns the job id", async () => {
    let seen: unknown = null;
    const fetchImpl: FetchLike = async (_url, init) => {
      seen = JSON.parse(init?.body as string);
      return jsonResponse(200, { job_id: "abc123" });
    };
    const client = new EditServiceClient("", fetchImpl);
    const submission = {
      image: "i", mask: "bits:1:1:gA==", caption: "c",
      points: [{ handle: [0, 0] as [number, number], target: [1, 1] as [number, number] }],
      seed: 0,
      toggles: { use_edit: true, use_semantic: true, use_quality: true, use_kv_replacement: true },
      auto: { n: 1, backend: "oracle" as const },
    };
    expect(await client.postEdit(submission)).toBe("abc123");
    expect(seen).toEqual(submission);
  });
});

describe("job polling", () => {
  it("polls at one second with multiplicative backoff until done", async () => {
    const states: JobView["state"][] = ["queued", "running", "running", "running", "done"];
    let call = 0;
    const fetchImpl: FetchLike = async () =>
      jsonResponse(200, {
        id: "j", state: states[Math.min(call++, states.length - 1)],
        created_at: 0, n_results: 1,
      });
    const sleeps: number[] = [];
    const client = new EditServiceClient("", fetchImpl);
    const job = await client.awaitJob("j", {
      sleep: async (ms) => {
        sleeps.push(ms);
      },
    });
    expect(job.state).toBe("done");
    expect(sleeps).toEqual([1000, 1500, 2250, 3375]);
  });

  it("caps the interval and honors the timeout", async () => {
    const fetchImpl: FetchLike = async () =>
      jsonResponse(200, { id: "j", state: "running", created_at: 0, n_results: 0 });
    const client = new EditServiceClient("", fetchImpl);
    await expect(
      client.awaitJob("j", { timeoutMs: -1, sleep: async () => {} }),
    ).rejects.toBeInstanceOf(ApiError);
  });
});
