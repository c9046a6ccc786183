// @vitest-environment happy-dom
import { describe, expect, it } from "vitest";

import { AnnotateApi, type FetchLike } from "../src/api.js";
import { AnnotationSession } from "../src/session.js";
import { DraftStore, MemoryStore } from "../src/storage.js";
import { LIKERT_SCALE } from "../src/scale.js";
import type { CaptionPayload } from "../src/types.js";
import { mountAnnotationApp, rejectedSentences } from "../src/ui.js";

const CAPTION: CaptionPayload = {
  task_id: "t-abc123",
  video_id: "vid01",
  video_url: null,
  sentences: [
    { index: 0, raw: "A man runs.", tokens: ["A", "man", "runs", "."] },
    {
      index: 1,
      raw: "He wears a bright red hat.",
      tokens: ["He", "wears", "a", "bright", "red", "hat", "."],
    },
    { index: 2, raw: "Then he waves.", tokens: ["Then", "he", "waves", "."] },
  ],
};

interface Stub {
  fetchFn: FetchLike;
  submissions: unknown[];
  /** When set, the next POST /api/annotations fails 422 with this detail. */
  rejectNext: string | null;
  /** When set, the next POST /api/annotations fails 409. */
  conflictNext: boolean;
  /** When true, every request fails at the transport layer. */
  offline: boolean;
}

/** In-memory stand-in for the annotation service: one task, one annotator. */
function stubService(): Stub {
  let submitted = false;
  const stub: Stub = {
    submissions: [],
    rejectNext: null,
    conflictNext: false,
    offline: false,
    fetchFn: (url, init) => {
      if (stub.offline) return Promise.reject(new TypeError("fetch failed"));
      const json = (body: unknown, status = 200) =>
        new Response(JSON.stringify(body), { status });
      if (url.startsWith("/api/protocol")) {
        return Promise.resolve(json({ markdown: "Watch the clip, then judge each sentence." }));
      }
      if (url.startsWith("/api/task")) {
        return Promise.resolve(
          json(
            submitted
              ? { done: true, completed: 1, total: 1 }
              : { done: false, task_id: "t-abc123", video_id: "vid01", position: 1, total: 1 },
          ),
        );
      }
      if (url.startsWith("/api/caption/t-abc123")) {
        return Promise.resolve(json(CAPTION));
      }
      if (url.startsWith("/api/annotations") && init?.method === "POST") {
        if (stub.conflictNext) {
          stub.conflictNext = false;
          return Promise.resolve(
            json({ detail: "annotator 'pilot-1' holds no open assignment" }, 409),
          );
        }
        if (stub.rejectNext !== null) {
          const detail = stub.rejectNext;
          stub.rejectNext = null;
          return Promise.resolve(json({ detail }, 422));
        }
        stub.submissions.push(JSON.parse(init.body as string));
        submitted = true;
        return Promise.resolve(json({ ok: true, task_id: "t-abc123", remaining: 0 }));
      }
      return Promise.resolve(json({ detail: `unexpected ${url}` }, 404));
    },
  };
  return stub;
}

async function mount() {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById("app") as HTMLElement;
  const stub = stubService();
  const session = new AnnotationSession(
    new AnnotateApi("", stub.fetchFn),
    new DraftStore(new MemoryStore()),
    "pilot-1",
  );
  mountAnnotationApp(root, session);
  await session.start();
  return { root, session, stub };
}

function q<T extends HTMLElement>(root: HTMLElement, selector: string): T {
  const node = root.querySelector(selector);
  if (!node) throw new Error(`nothing matches ${selector}`);
  return node as T;
}

function token(root: HTMLElement, sentence: number, index: number): HTMLElement {
  return q(root, `.token[data-sentence="${sentence}"][data-token="${index}"]`);
}

function check(root: HTMLElement, selector: string): void {
  const radio = q<HTMLInputElement>(root, selector);
  radio.checked = true;
  radio.dispatchEvent(new Event("change"));
}

function mouse(target: HTMLElement, type: string): void {
  target.dispatchEvent(new MouseEvent(type, { bubbles: true }));
}

/** Drive the happy path up to a submittable draft: 4, [ok, spans 2..4, ok]. */
function complete(root: HTMLElement): void {
  check(root, '.sentence[data-sentence="0"] input[value="factual"]');
  mouse(token(root, 1, 2), "mousedown");
  mouse(token(root, 1, 3), "mouseover");
  mouse(token(root, 1, 4), "mouseover");
  mouse(token(root, 1, 4), "mouseup");
  check(root, '.sentence[data-sentence="2"] input[value="factual"]');
  check(root, '.likert input[value="4"]');
}

const tick = () => new Promise((resolve) => setTimeout(resolve, 0));

describe("task rendering", () => {
  it("shows every sentence with the service's own tokens, in order", async () => {
    const { root } = await mount();
    const rows = root.querySelectorAll(".sentence");
    expect(rows).toHaveLength(3);
    const tokens = Array.from(
      rows[1]!.querySelectorAll(".token"),
      (chip) => chip.textContent,
    );
    expect(tokens).toEqual(["He", "wears", "a", "bright", "red", "hat", "."]);
    expect(q(root, ".task-position").textContent).toBe("Task 1 of 1");
  });

  it("displays all five scale definitions next to the control", async () => {
    const { root } = await mount();
    const text = q(root, ".likert").textContent!;
    for (const step of LIKERT_SCALE) {
      expect(text).toContain(step.definition);
    }
  });

  it("shows the protocol text fetched from the service", async () => {
    const { root } = await mount();
    expect(q(root, ".protocol-text").textContent).toContain("judge each sentence");
  });

  it("never displays a model identity", async () => {
    const { root } = await mount();
    complete(root);
    expect(root.textContent).not.toMatch(/model/i);
  });
});

describe("submit gating", () => {
  it("disables submit until every control is answered", async () => {
    const { root } = await mount();
    expect(q<HTMLButtonElement>(root, "button.submit").disabled).toBe(true);
    expect(q(root, ".blockers").textContent).toContain("set the overall score");
    complete(root);
    expect(q<HTMLButtonElement>(root, "button.submit").disabled).toBe(false);
    expect(root.querySelector(".blockers")).toBeNull();
  });

  it("re-disables submit when spans are cleared but the judgment stays", async () => {
    const { root } = await mount();
    complete(root);
    q<HTMLButtonElement>(root, ".spans-clear").click();
    const radio = q<HTMLInputElement>(
      root,
      '.sentence[data-sentence="1"] input[value="not_factual"]',
    );
    expect(radio.checked).toBe(true);
    expect(q<HTMLButtonElement>(root, "button.submit").disabled).toBe(true);
    expect(q(root, ".blockers").textContent).toContain("mark the error words in sentence 2");
  });
});

describe("span drag", () => {
  it("dragging tokens 2..4 marks the half-open span [2, 5)", async () => {
    const { root, session } = await mount();
    mouse(token(root, 1, 2), "mousedown");
    mouse(token(root, 1, 3), "mouseover");
    // Mid-drag the covered chips carry the selecting class.
    expect(token(root, 1, 3).classList.contains("selecting")).toBe(true);
    mouse(token(root, 1, 4), "mouseover");
    mouse(token(root, 1, 4), "mouseup");
    expect(session.state.draft!.sentences[1]!.spans).toEqual([[2, 5]]);
    expect(q(root, ".span-chip").textContent).toContain("a bright red");
    for (const i of [2, 3, 4]) {
      expect(token(root, 1, i).classList.contains("in-span")).toBe(true);
    }
    expect(token(root, 1, 1).classList.contains("in-span")).toBe(false);
  });

  it("marking a span flips the judgment radio to not factual", async () => {
    const { root } = await mount();
    mouse(token(root, 1, 2), "mousedown");
    mouse(token(root, 1, 2), "mouseup");
    const radio = q<HTMLInputElement>(
      root,
      '.sentence[data-sentence="1"] input[value="not_factual"]',
    );
    expect(radio.checked).toBe(true);
  });

  it("escape cancels a drag in progress", async () => {
    const { root, session } = await mount();
    mouse(token(root, 1, 2), "mousedown");
    root.dispatchEvent(new KeyboardEvent("keydown", { key: "Escape", bubbles: true }));
    expect(session.state.draft!.selection).toBeNull();
    expect(session.state.draft!.sentences[1]!.spans).toEqual([]);
  });

  it("the remove button deletes one span", async () => {
    const { root, session } = await mount();
    mouse(token(root, 0, 1), "mousedown");
    mouse(token(root, 0, 1), "mouseup");
    q<HTMLButtonElement>(root, ".span-remove").click();
    expect(session.state.draft!.sentences[0]!.spans).toEqual([]);
  });
});

describe("score warning", () => {
  it("warns when a 5 coexists with a not-factual sentence", async () => {
    const { root } = await mount();
    complete(root);
    check(root, '.likert input[value="5"]');
    const warning = q(root, ".warning-top_score_with_errors");
    expect(warning.textContent).toContain("no factual errors");
    // A warning, not a blocker.
    expect(q<HTMLButtonElement>(root, "button.submit").disabled).toBe(false);
    check(root, '.likert input[value="4"]');
    expect(root.querySelector(".warning-top_score_with_errors")).toBeNull();
  });
});

describe("submission", () => {
  it("posts the draft and advances to the done panel", async () => {
    const { root, stub } = await mount();
    complete(root);
    q<HTMLButtonElement>(root, "button.submit").click();
    await tick();
    expect(stub.submissions).toEqual([
      {
        task_id: "t-abc123",
        annotator_id: "pilot-1",
        paragraph_score: 4,
        sentences: [
          { factual: true, error_spans: [] },
          { factual: false, error_spans: [[2, 5]] },
          { factual: true, error_spans: [] },
        ],
      },
    ]);
    expect(q(root, ".all-done").textContent).toContain("1 of 1");
  });

  it("a 422 keeps the task open and highlights the named sentence", async () => {
    const { root, session, stub } = await mount();
    complete(root);
    stub.rejectNext = "sentence 1: span [2, 5) rejected by a stricter validator";
    q<HTMLButtonElement>(root, "button.submit").click();
    await tick();
    expect(session.state.phase).toBe("annotating");
    expect(q(root, ".banner").textContent).toContain("rejected by a stricter validator");
    expect(q(root, '.sentence[data-sentence="1"]').classList.contains("field-error")).toBe(true);
    expect(q(root, '.sentence[data-sentence="0"]').classList.contains("field-error")).toBe(false);
  });
});

describe("failure banners", () => {
  it("a submission conflict prompts a session reload", async () => {
    const { root, session, stub } = await mount();
    complete(root);
    stub.conflictNext = true;
    q<HTMLButtonElement>(root, "button.submit").click();
    await tick();
    expect(session.state.phase).toBe("error");
    expect(session.state.error!.conflict).toBe(true);
    const banner = q(root, ".banner-conflict");
    expect(banner.textContent).toContain("updated elsewhere");
    // Reloading recovers: the stub still holds the open task.
    q<HTMLButtonElement>(root, ".reload-button").click();
    await tick();
    expect(session.state.phase).toBe("annotating");
  });

  it("an unreachable service shows a blocking retry banner, and retry recovers", async () => {
    const { root, session, stub } = await mount();
    stub.offline = true;
    await session.retry();
    expect(session.state.phase).toBe("error");
    expect(q(root, ".banner-retry").textContent).toContain("unreachable");
    expect(root.querySelector(".sentence")).toBeNull();
    stub.offline = false;
    q<HTMLButtonElement>(root, ".retry-button").click();
    await tick();
    expect(session.state.phase).toBe("annotating");
    expect(root.querySelectorAll(".sentence")).toHaveLength(3);
  });
});

describe("rejectedSentences", () => {
  it("collects every sentence index named in a detail string", () => {
    expect(rejectedSentences("sentence 0: bad; sentence 2: worse")).toEqual(new Set([0, 2]));
    expect(rejectedSentences(null)).toEqual(new Set());
    expect(rejectedSentences("paragraph_score 9 outside [1, 5]")).toEqual(new Set());
  });
});
