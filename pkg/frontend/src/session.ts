/**
 * Headless annotation session: one annotator working through their queue.
 *
 * Owns the fetch-task -> fetch-caption -> edit-draft -> submit loop and the
 * autosave hook; rendering is someone else's job (see ui.ts). Every edit
 * goes through {@link AnnotationSession.edit} so the draft is persisted
 * before the next paint. A single session maps to a single annotator in a
 * single browser tab.
 */

import { AnnotateApi, ApiError } from "./api.js";
import {
  canSubmit,
  newDraft,
  restoreDraft,
  toSubmission,
  type Draft,
} from "./draft.js";
import { DraftStore } from "./storage.js";
import type { CaptionPayload, TaskPayload } from "./types.js";

export type SessionPhase =
  | "idle"
  | "loading"
  | "annotating"
  | "submitting"
  | "done"
  | "error";

export interface SessionError {
  message: string;
  retryable: boolean;
  conflict: boolean;
  /** Field-level complaint from a rejected submission, if any. */
  detail: string | null;
}

export interface SessionState {
  phase: SessionPhase;
  task: TaskPayload | null;
  caption: CaptionPayload | null;
  draft: Draft | null;
  /** True when the current draft was restored from local autosave. */
  resumed: boolean;
  protocolMarkdown: string | null;
  error: SessionError | null;
}

function initialState(): SessionState {
  return {
    phase: "idle",
    task: null,
    caption: null,
    draft: null,
    resumed: false,
    protocolMarkdown: null,
    error: null,
  };
}

export class AnnotationSession {
  state: SessionState = initialState();
  onChange: ((state: SessionState) => void) | null = null;

  constructor(
    private readonly api: AnnotateApi,
    private readonly drafts: DraftStore,
    readonly annotatorId: string,
  ) {}

  private update(patch: Partial<SessionState>): void {
    this.state = { ...this.state, ...patch };
    this.onChange?.(this.state);
  }

  private fail(err: unknown): void {
    if (err instanceof ApiError) {
      this.update({
        phase: "error",
        error: {
          message: err.message,
          retryable: err.retryable,
          conflict: err.conflict,
          detail: err.detail,
        },
      });
      return;
    }
    throw err;
  }

  /** Fetch the next open task and its caption; resume any saved draft. */
  async start(): Promise<void> {
    this.update({ phase: "loading", error: null });
    try {
      if (this.state.protocolMarkdown === null) {
        this.update({ protocolMarkdown: await this.api.protocol() });
      }
      const task = await this.api.nextTask(this.annotatorId);
      if (task.done) {
        this.update({ phase: "done", task, caption: null, draft: null, resumed: false });
        return;
      }
      const caption = await this.api.caption(task.task_id!);
      const saved = this.drafts.load(this.annotatorId, caption.task_id);
      const restored = saved === null ? null : restoreDraft(saved, caption, this.annotatorId);
      const draft = restored ?? newDraft(caption, this.annotatorId);
      this.drafts.save(draft);
      this.update({
        phase: "annotating",
        task,
        caption,
        draft,
        resumed: restored !== null,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  /** Apply a pure draft transition and autosave the result. */
  edit(transition: (draft: Draft) => Draft): void {
    if (this.state.phase !== "annotating" || this.state.draft === null) {
      throw new Error(`cannot edit a draft while ${this.state.phase}`);
    }
    const draft = transition(this.state.draft);
    this.drafts.save(draft);
    this.update({ draft });
  }

  get submittable(): boolean {
    return (
      this.state.phase === "annotating" &&
      this.state.draft !== null &&
      canSubmit(this.state.draft)
    );
  }

  /**
   * Submit the current draft and advance to the next task. Incomplete
   * drafts are rejected here, before any network traffic.
   */
  async submit(): Promise<void> {
    const draft = this.state.draft;
    if (this.state.phase !== "annotating" || draft === null) {
      throw new Error(`nothing to submit while ${this.state.phase}`);
    }
    // Throws on incomplete drafts; the client-side block behind the
    // disabled submit button.
    const submission = toSubmission(draft);
    this.update({ phase: "submitting" });
    try {
      await this.api.submit(submission);
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        // Rejected fields; stay on the task so the controls can highlight.
        this.update({
          phase: "annotating",
          error: {
            message: err.message,
            retryable: false,
            conflict: false,
            detail: err.detail,
          },
        });
        return;
      }
      this.fail(err);
      return;
    }
    this.drafts.clear(this.annotatorId, draft.taskId);
    await this.start();
  }

  /** Re-run the last load after a retryable failure. */
  async retry(): Promise<void> {
    await this.start();
  }
}
