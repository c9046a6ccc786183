import { describe, expect, it } from "vitest";

import { AnnotateApi, ApiError, type FetchLike } from "../src/api.js";
import type { AnnotationSubmission } from "../src/types.js";

interface Call {
  url: string;
  init?: RequestInit;
}

function recordingFetch(
  respond: (url: string, init?: RequestInit) => Response,
): { fetchFn: FetchLike; calls: Call[] } {
  const calls: Call[] = [];
  const fetchFn: FetchLike = (url, init) => {
    calls.push({ url, init });
    return Promise.resolve(respond(url, init));
  };
  return { fetchFn, calls };
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

const SUBMISSION: AnnotationSubmission = {
  task_id: "t-1",
  annotator_id: "pilot-1",
  paragraph_score: 3,
  sentences: [{ factual: false, error_spans: [[0, 2]] }],
};

describe("AnnotateApi", () => {
  it("requests the next task with the annotator id url-encoded", async () => {
    const { fetchFn, calls } = recordingFetch(() =>
      json({ done: false, task_id: "t-1", video_id: "vid01", position: 1, total: 3 }),
    );
    const task = await new AnnotateApi("", fetchFn).nextTask("pilot 1/a");
    expect(calls[0]!.url).toBe("/api/task?annotator=pilot%201%2Fa");
    expect(task.task_id).toBe("t-1");
  });

  it("prefixes every path with the base url", async () => {
    const { fetchFn, calls } = recordingFetch(() => json({ markdown: "# guide" }));
    const api = new AnnotateApi("http://127.0.0.1:9999", fetchFn);
    expect(await api.protocol()).toBe("# guide");
    expect(calls[0]!.url).toBe("http://127.0.0.1:9999/api/protocol");
  });

  it("fetches a caption by task id", async () => {
    const { fetchFn, calls } = recordingFetch(() =>
      json({ task_id: "t-1", video_id: "vid01", video_url: null, sentences: [] }),
    );
    await new AnnotateApi("", fetchFn).caption("t-1");
    expect(calls[0]!.url).toBe("/api/caption/t-1");
  });

  it("submits annotations as a JSON POST", async () => {
    const { fetchFn, calls } = recordingFetch(() =>
      json({ ok: true, task_id: "t-1", remaining: 2 }),
    );
    const ack = await new AnnotateApi("", fetchFn).submit(SUBMISSION);
    expect(ack.remaining).toBe(2);
    const call = calls[0]!;
    expect(call.url).toBe("/api/annotations");
    expect(call.init?.method).toBe("POST");
    expect((call.init?.headers as Record<string, string>)["content-type"]).toBe(
      "application/json",
    );
    expect(JSON.parse(call.init?.body as string)).toEqual(SUBMISSION);
  });

  it("maps a transport failure to a retryable error with no status", async () => {
    const api = new AnnotateApi("", () => Promise.reject(new TypeError("fetch failed")));
    const err = await api.nextTask("pilot-1").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBeNull();
    expect((err as ApiError).retryable).toBe(true);
    expect((err as ApiError).conflict).toBe(false);
    expect((err as ApiError).message).toContain("unreachable");
  });

  it("maps 5xx to retryable", async () => {
    const { fetchFn } = recordingFetch(() => json({ detail: "boom" }, 503));
    const err = await new AnnotateApi("", fetchFn).protocol().catch((e: unknown) => e);
    expect((err as ApiError).status).toBe(503);
    expect((err as ApiError).retryable).toBe(true);
  });

  it("maps 409 to a conflict, not a retry", async () => {
    const { fetchFn } = recordingFetch(() => json({ detail: "already submitted" }, 409));
    const err = await new AnnotateApi("", fetchFn).submit(SUBMISSION).catch((e: unknown) => e);
    expect((err as ApiError).conflict).toBe(true);
    expect((err as ApiError).retryable).toBe(false);
    expect((err as ApiError).detail).toBe("already submitted");
  });

  it("carries the 422 field complaint through detail", async () => {
    const { fetchFn } = recordingFetch(() =>
      json({ detail: "sentence 0: span [0, 9) exceeds 4 tokens" }, 422),
    );
    const err = await new AnnotateApi("", fetchFn).submit(SUBMISSION).catch((e: unknown) => e);
    const apiErr = err as ApiError;
    expect(apiErr.status).toBe(422);
    expect(apiErr.detail).toContain("sentence 0");
    expect(apiErr.message).toContain("exceeds 4 tokens");
    expect(apiErr.retryable).toBe(false);
  });

  it("tolerates non-JSON error bodies", async () => {
    const { fetchFn } = recordingFetch(() => new Response("<html>", { status: 500 }));
    const err = await new AnnotateApi("", fetchFn).protocol().catch((e: unknown) => e);
    expect((err as ApiError).status).toBe(500);
    expect((err as ApiError).detail).toBeNull();
  });
});
