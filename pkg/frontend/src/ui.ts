/**
 * DOM layer: renders an {@link AnnotationSession} and forwards events.
 *
 * Rendering is a full repaint of the root on every state change; the DOM
 * for one task is small enough that diffing would buy nothing. Event
 * wiring uses delegation from the root so repaints never re-attach
 * listeners. Span selection is click-drag over token chips: mousedown
 * anchors, mouseover extends within the same sentence, mouseup commits.
 */

import {
  beginSelection,
  blockers,
  cancelSelection,
  clearSpans,
  commitSelection,
  extendSelection,
  judgeSentence,
  removeSpan,
  selectionRange,
  setParagraphScore,
  setPlaybackPosition,
  warnings,
  type Draft,
} from "./draft.js";
import { LIKERT_SCALE } from "./scale.js";
import type { AnnotationSession } from "./session.js";
import type { SentencePayload } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

/** Sentence indices called out in a 422 detail, for highlighting. */
export function rejectedSentences(detail: string | null): Set<number> {
  const out = new Set<number>();
  if (!detail) return out;
  for (const match of detail.matchAll(/sentence (\d+)/g)) {
    out.add(Number(match[1]));
  }
  return out;
}

function renderBanner(session: AnnotationSession): HTMLElement | null {
  const error = session.state.error;
  if (!error) return null;
  const banner = el("div", "banner");
  banner.appendChild(el("p", "banner-message", error.message));
  if (error.conflict) {
    banner.classList.add("banner-conflict");
    const reload = el("button", "reload-button", "Reload session");
    reload.addEventListener("click", () => void session.retry());
    banner.appendChild(el("p", undefined, "This task was updated elsewhere."));
    banner.appendChild(reload);
  } else if (error.retryable) {
    banner.classList.add("banner-retry");
    const retry = el("button", "retry-button", "Retry");
    retry.addEventListener("click", () => void session.retry());
    banner.appendChild(retry);
  }
  return banner;
}

function renderVideo(session: AnnotationSession): HTMLElement {
  const wrap = el("section", "video-panel");
  const url = session.state.caption?.video_url ?? null;
  if (url) {
    const video = el("video", "task-video");
    video.controls = true;
    video.src = url;
    video.currentTime = session.state.draft?.playbackPosition ?? 0;
    const remember = () => {
      if (session.state.phase === "annotating") {
        session.edit((d) => setPlaybackPosition(d, video.currentTime));
      }
    };
    video.addEventListener("pause", remember);
    video.addEventListener("seeked", remember);
    wrap.appendChild(video);
  } else {
    wrap.appendChild(
      el("p", "video-missing", `No stream for video ${session.state.caption?.video_id ?? ""}; use the local player.`),
    );
  }
  return wrap;
}

function renderProtocol(session: AnnotationSession): HTMLElement {
  const details = el("details", "protocol");
  details.appendChild(el("summary", undefined, "Annotation guide"));
  const body = el("pre", "protocol-text");
  body.textContent = session.state.protocolMarkdown ?? "";
  details.appendChild(body);
  return details;
}

function renderTokens(draft: Draft, sentence: SentencePayload, index: number): HTMLElement {
  const line = el("div", "tokens");
  line.dataset.sentence = String(index);
  const spans = draft.sentences[index]?.spans ?? [];
  const selection =
    draft.selection && draft.selection.sentence === index
      ? selectionRange(draft.selection)
      : null;
  sentence.tokens.forEach((token, t) => {
    const chip = el("span", "token", token);
    chip.dataset.sentence = String(index);
    chip.dataset.token = String(t);
    if (spans.some(([s, e]) => s <= t && t < e)) chip.classList.add("in-span");
    if (selection && selection[0] <= t && t < selection[1]) chip.classList.add("selecting");
    line.appendChild(chip);
  });
  return line;
}

function renderSentenceRow(
  session: AnnotationSession,
  sentence: SentencePayload,
  index: number,
  rejected: Set<number>,
): HTMLElement {
  const draft = session.state.draft!;
  const state = draft.sentences[index]!;
  const row = el("section", "sentence");
  row.dataset.sentence = String(index);
  if (rejected.has(index)) row.classList.add("field-error");
  if (draft.currentSentence === index) row.classList.add("current");

  const head = el("header", "sentence-head");
  head.appendChild(el("span", "sentence-number", `Sentence ${index + 1}`));

  for (const judgment of ["factual", "not_factual"] as const) {
    const label = el("label", `judgment judgment-${judgment}`);
    const radio = el("input");
    radio.type = "radio";
    radio.name = `judgment-${index}`;
    radio.value = judgment;
    radio.checked = state.judgment === judgment;
    radio.addEventListener("change", () => {
      session.edit((d) => judgeSentence(d, index, judgment));
    });
    label.appendChild(radio);
    label.appendChild(
      document.createTextNode(judgment === "factual" ? "factual" : "not factual"),
    );
    head.appendChild(label);
  }
  row.appendChild(head);
  row.appendChild(renderTokens(draft, sentence, index));

  const spanList = el("div", "span-list");
  state.spans.forEach(([start, end], spanIndex) => {
    const chip = el("span", "span-chip");
    chip.appendChild(
      document.createTextNode(sentence.tokens.slice(start, end).join(" ")),
    );
    const remove = el("button", "span-remove", "×");
    remove.title = `remove [${start}, ${end})`;
    remove.addEventListener("click", () => {
      session.edit((d) => removeSpan(d, index, spanIndex));
    });
    chip.appendChild(remove);
    spanList.appendChild(chip);
  });
  if (state.spans.length > 0) {
    const clear = el("button", "spans-clear", "clear error words");
    clear.addEventListener("click", () => {
      session.edit((d) => clearSpans(d, index));
    });
    spanList.appendChild(clear);
  }
  row.appendChild(spanList);
  return row;
}

function renderScale(session: AnnotationSession): HTMLElement {
  const draft = session.state.draft!;
  const fieldset = el("fieldset", "likert");
  fieldset.appendChild(el("legend", undefined, "Overall factual consistency"));
  for (const step of LIKERT_SCALE) {
    const label = el("label", "likert-step");
    const radio = el("input");
    radio.type = "radio";
    radio.name = "paragraph-score";
    radio.value = String(step.value);
    radio.checked = draft.paragraphScore === step.value;
    radio.addEventListener("change", () => {
      session.edit((d) => setParagraphScore(d, step.value));
    });
    label.appendChild(radio);
    label.appendChild(el("strong", "likert-value", String(step.value)));
    label.appendChild(el("span", "likert-definition", ` ${step.definition}`));
    fieldset.appendChild(label);
  }
  return fieldset;
}

function renderTask(session: AnnotationSession, rejected: Set<number>): HTMLElement {
  const caption = session.state.caption!;
  const draft = session.state.draft!;
  const panel = el("main", "task-panel");

  const task = session.state.task!;
  panel.appendChild(
    el("p", "task-position", `Task ${task.position} of ${task.total}`),
  );
  if (session.state.resumed) {
    panel.appendChild(el("p", "resume-note", "Resumed your saved draft."));
  }
  panel.appendChild(renderVideo(session));
  panel.appendChild(renderProtocol(session));

  const list = el("div", "sentences");
  caption.sentences.forEach((sentence, index) => {
    list.appendChild(renderSentenceRow(session, sentence, index, rejected));
  });
  panel.appendChild(list);
  panel.appendChild(renderScale(session));

  for (const warning of warnings(draft)) {
    panel.appendChild(el("p", `warning warning-${warning.code}`, warning.message));
  }

  const remaining = blockers(draft);
  if (remaining.length > 0) {
    panel.appendChild(el("p", "blockers", `To submit: ${remaining.join("; ")}.`));
  }

  const submit = el("button", "submit", "Submit annotation");
  submit.disabled = !session.submittable;
  submit.addEventListener("click", () => void session.submit());
  panel.appendChild(submit);
  return panel;
}

export function render(root: HTMLElement, session: AnnotationSession): void {
  root.textContent = "";
  const banner = renderBanner(session);
  if (banner) root.appendChild(banner);

  switch (session.state.phase) {
    case "idle":
    case "loading":
      root.appendChild(el("p", "loading", "Loading task…"));
      break;
    case "done": {
      const task = session.state.task;
      root.appendChild(
        el(
          "p",
          "all-done",
          `All done: ${task?.completed ?? 0} of ${task?.total ?? 0} tasks submitted. Thank you!`,
        ),
      );
      break;
    }
    case "error":
      // The banner carries the story.
      break;
    case "annotating":
    case "submitting":
      root.appendChild(renderTask(session, rejectedSentences(session.state.error?.detail ?? null)));
      break;
  }
}

function tokenTarget(event: Event): { sentence: number; token: number } | null {
  const target = event.target;
  if (!(target instanceof HTMLElement)) return null;
  if (!target.classList.contains("token")) return null;
  return {
    sentence: Number(target.dataset.sentence),
    token: Number(target.dataset.token),
  };
}

/** Attach a session to a root element and keep it painted. */
export function mountAnnotationApp(root: HTMLElement, session: AnnotationSession): void {
  session.onChange = () => render(root, session);

  root.addEventListener("mousedown", (event) => {
    const hit = tokenTarget(event);
    if (!hit || session.state.phase !== "annotating") return;
    event.preventDefault();
    session.edit((d) => beginSelection(d, hit.sentence, hit.token));
  });
  root.addEventListener("mouseover", (event) => {
    const hit = tokenTarget(event);
    if (!hit || session.state.phase !== "annotating") return;
    if (!session.state.draft?.selection) return;
    session.edit((d) => extendSelection(d, hit.sentence, hit.token));
  });
  root.addEventListener("mouseup", () => {
    if (session.state.phase !== "annotating") return;
    if (!session.state.draft?.selection) return;
    session.edit((d) => commitSelection(d));
  });
  root.addEventListener("keydown", (event) => {
    if (event.key !== "Escape" || session.state.phase !== "annotating") return;
    if (!session.state.draft?.selection) return;
    session.edit((d) => cancelSelection(d));
  });

  render(root, session);
}
