/**
 * Typed client for the annotation service HTTP API.
 *
 * This is the application's only network surface. Transport failures and
 * 5xx responses map to retryable errors (the UI shows a blocking retry
 * banner); 409 means the task moved under us and the session should be
 * reloaded; 422 carries the service's field-level complaint.
 */

import type {
  AnnotationSubmission,
  CaptionPayload,
  ProgressPayload,
  SubmitAck,
  TaskPayload,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number | null,
    readonly detail: string | null = null,
  ) {
    super(message);
    this.name = "ApiError";
  }

  /** Worth retrying: the service was unreachable or failed internally. */
  get retryable(): boolean {
    return this.status === null || this.status >= 500;
  }

  /** The task was submitted or reassigned elsewhere; reload to recover. */
  get conflict(): boolean {
    return this.status === 409;
  }
}

export class AnnotateApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const url = `${this.baseUrl}${path}`;
    let response: Response;
    try {
      response = await this.fetchFn(url, init);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`, null);
    }
    if (!response.ok) {
      let detail: string | null = null;
      try {
        const body: unknown = await response.json();
        if (body && typeof body === "object" && "detail" in body) {
          detail = String((body as { detail: unknown }).detail);
        }
      } catch {
        // Non-JSON error body; the status code is all we have.
      }
      throw new ApiError(
        `${init?.method ?? "GET"} ${path} failed: HTTP ${response.status}` +
          (detail ? `: ${detail}` : ""),
        response.status,
        detail,
      );
    }
    return response;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.request(path);
    return (await response.json()) as T;
  }

  nextTask(annotatorId: string): Promise<TaskPayload> {
    return this.getJson<TaskPayload>(`/api/task?annotator=${encodeURIComponent(annotatorId)}`);
  }

  caption(taskId: string): Promise<CaptionPayload> {
    return this.getJson<CaptionPayload>(`/api/caption/${encodeURIComponent(taskId)}`);
  }

  async submit(submission: AnnotationSubmission): Promise<SubmitAck> {
    const response = await this.request("/api/annotations", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(submission),
    });
    return (await response.json()) as SubmitAck;
  }

  async protocol(): Promise<string> {
    const payload = await this.getJson<{ markdown: string }>("/api/protocol");
    return payload.markdown;
  }

  progress(): Promise<ProgressPayload> {
    return this.getJson<ProgressPayload>("/api/progress");
  }
}
