/**
 * Draft state for one annotation task, and the transitions on it.
 *
 * Everything here is pure: each transition returns a fresh draft, which
 * makes autosave-on-change and undo trivial. The invariants live in this
 * module and nowhere else:
 *
 * - a draft is submittable only when every sentence has a judgment, the
 *   paragraph score is set, and every not-factual sentence carries at
 *   least one error span;
 * - marking a span forces that sentence's judgment to not-factual;
 * - clearing all spans does NOT flip the judgment back; staying
 *   not-factual until the annotator explicitly decides is deliberate;
 * - judging a sentence factual drops its spans, since a factual sentence
 *   must carry none;
 * - span indices refer to the token list delivered by the service.
 */

import type {
  AnnotationSubmission,
  CaptionPayload,
  ErrorSpan,
} from "./types.js";
import { SCORE_NO_ERRORS } from "./scale.js";

export type Judgment = "factual" | "not_factual";

export interface SentenceDraft {
  judgment: Judgment | null;
  /** Sorted, disjoint, half-open token ranges. */
  spans: ErrorSpan[];
}

/** An in-progress click-drag over the tokens of one sentence. */
export interface TokenSelection {
  sentence: number;
  anchor: number;
  focus: number;
}

export interface Draft {
  taskId: string;
  annotatorId: string;
  paragraphScore: number | null;
  sentences: SentenceDraft[];
  /** Token count per sentence, from the service payload; bounds for spans. */
  tokenCounts: number[];
  currentSentence: number;
  selection: TokenSelection | null;
  /** Video playback position in seconds; UI state only. */
  playbackPosition: number;
}

export function newDraft(caption: CaptionPayload, annotatorId: string): Draft {
  return {
    taskId: caption.task_id,
    annotatorId,
    paragraphScore: null,
    sentences: caption.sentences.map(() => ({ judgment: null, spans: [] })),
    tokenCounts: caption.sentences.map((s) => s.tokens.length),
    currentSentence: 0,
    selection: null,
    playbackPosition: 0,
  };
}

function cloneSentences(draft: Draft): SentenceDraft[] {
  return draft.sentences.map((s) => ({ judgment: s.judgment, spans: s.spans.map((sp) => [...sp] as ErrorSpan) }));
}

function checkSentenceIndex(draft: Draft, index: number): void {
  if (!Number.isInteger(index) || index < 0 || index >= draft.sentences.length) {
    throw new Error(`no sentence ${index} in a ${draft.sentences.length}-sentence draft`);
  }
}

export function setParagraphScore(draft: Draft, score: number): Draft {
  if (!Number.isInteger(score) || score < 1 || score > 5) {
    throw new Error(`paragraph score must be an integer in 1..5, got ${score}`);
  }
  return { ...draft, paragraphScore: score };
}

export function judgeSentence(draft: Draft, index: number, judgment: Judgment): Draft {
  checkSentenceIndex(draft, index);
  const sentences = cloneSentences(draft);
  const sentence = sentences[index]!;
  sentence.judgment = judgment;
  if (judgment === "factual") {
    // A factual sentence must carry no error spans.
    sentence.spans = [];
  }
  return { ...draft, sentences };
}

/** Insert a span, merging any overlapping or touching ranges into one. */
function mergeSpan(spans: ErrorSpan[], start: number, end: number): ErrorSpan[] {
  const kept: ErrorSpan[] = [];
  let lo = start;
  let hi = end;
  for (const [s, e] of spans) {
    if (e < lo || s > hi) {
      kept.push([s, e]);
    } else {
      lo = Math.min(lo, s);
      hi = Math.max(hi, e);
    }
  }
  kept.push([lo, hi]);
  kept.sort((a, b) => a[0] - b[0]);
  return kept;
}

export function markSpan(draft: Draft, index: number, start: number, end: number): Draft {
  checkSentenceIndex(draft, index);
  const total = draft.tokenCounts[index]!;
  if (!Number.isInteger(start) || !Number.isInteger(end) || start < 0 || start >= end || end > total) {
    throw new Error(
      `span [${start}, ${end}) is not a valid token range for a ${total}-token sentence`,
    );
  }
  const sentences = cloneSentences(draft);
  const sentence = sentences[index]!;
  sentence.spans = mergeSpan(sentence.spans, start, end);
  // Marking an error stretch is itself the judgment call.
  sentence.judgment = "not_factual";
  return { ...draft, sentences };
}

export function removeSpan(draft: Draft, index: number, spanIndex: number): Draft {
  checkSentenceIndex(draft, index);
  const sentences = cloneSentences(draft);
  const sentence = sentences[index]!;
  if (spanIndex < 0 || spanIndex >= sentence.spans.length) {
    throw new Error(`no span ${spanIndex} on sentence ${index}`);
  }
  sentence.spans.splice(spanIndex, 1);
  return { ...draft, sentences };
}

/** Drop all spans; the judgment stays as it is, an explicit choice remains. */
export function clearSpans(draft: Draft, index: number): Draft {
  checkSentenceIndex(draft, index);
  const sentences = cloneSentences(draft);
  sentences[index]!.spans = [];
  return { ...draft, sentences };
}

export function beginSelection(draft: Draft, sentence: number, token: number): Draft {
  checkSentenceIndex(draft, sentence);
  const total = draft.tokenCounts[sentence]!;
  if (!Number.isInteger(token) || token < 0 || token >= total) {
    throw new Error(`no token ${token} in sentence ${sentence}`);
  }
  return {
    ...draft,
    currentSentence: sentence,
    selection: { sentence, anchor: token, focus: token },
  };
}

export function extendSelection(draft: Draft, sentence: number, token: number): Draft {
  const sel = draft.selection;
  // Dragging across a different sentence does not extend the range.
  if (!sel || sel.sentence !== sentence) return draft;
  const total = draft.tokenCounts[sel.sentence]!;
  if (token < 0 || token >= total) return draft;
  return { ...draft, selection: { ...sel, focus: token } };
}

export function cancelSelection(draft: Draft): Draft {
  return draft.selection ? { ...draft, selection: null } : draft;
}

/** The half-open token range a selection covers, in either drag direction. */
export function selectionRange(selection: TokenSelection): ErrorSpan {
  const start = Math.min(selection.anchor, selection.focus);
  const end = Math.max(selection.anchor, selection.focus) + 1;
  return [start, end];
}

export function commitSelection(draft: Draft): Draft {
  const sel = draft.selection;
  if (!sel) return draft;
  const [start, end] = selectionRange(sel);
  return { ...markSpan(draft, sel.sentence, start, end), selection: null };
}

export function setCurrentSentence(draft: Draft, index: number): Draft {
  checkSentenceIndex(draft, index);
  return { ...draft, currentSentence: index };
}

export function setPlaybackPosition(draft: Draft, seconds: number): Draft {
  return { ...draft, playbackPosition: Math.max(0, seconds) };
}

/** Everything still standing between this draft and a submission. */
export function blockers(draft: Draft): string[] {
  const out: string[] = [];
  if (draft.paragraphScore === null) {
    out.push("set the overall score");
  }
  draft.sentences.forEach((sentence, i) => {
    if (sentence.judgment === null) {
      out.push(`judge sentence ${i + 1}`);
    } else if (sentence.judgment === "not_factual" && sentence.spans.length === 0) {
      out.push(`mark the error words in sentence ${i + 1}`);
    }
  });
  return out;
}

export function canSubmit(draft: Draft): boolean {
  return blockers(draft).length === 0;
}

export interface DraftWarning {
  code: "top_score_with_errors";
  message: string;
}

/** Soft inconsistencies worth flagging without blocking submission. */
export function warnings(draft: Draft): DraftWarning[] {
  const out: DraftWarning[] = [];
  if (draft.paragraphScore === SCORE_NO_ERRORS) {
    const flagged = draft.sentences.filter((s) => s.judgment === "not_factual").length;
    if (flagged > 0) {
      out.push({
        code: "top_score_with_errors",
        message:
          `Score ${SCORE_NO_ERRORS} means "no factual errors", but ` +
          `${flagged} sentence${flagged === 1 ? " is" : "s are"} marked not factual.`,
      });
    }
  }
  return out;
}

export function toSubmission(draft: Draft): AnnotationSubmission {
  const blocked = blockers(draft);
  if (blocked.length > 0) {
    throw new Error(`draft is not submittable: ${blocked.join("; ")}`);
  }
  return {
    task_id: draft.taskId,
    annotator_id: draft.annotatorId,
    paragraph_score: draft.paragraphScore!,
    sentences: draft.sentences.map((s) => ({
      factual: s.judgment === "factual",
      error_spans: s.spans.map((sp) => [...sp] as ErrorSpan),
    })),
  };
}

/**
 * Re-validate a saved draft against the caption it claims to belong to.
 * Returns null when anything disagrees (task id, sentence count, token
 * counts, span bounds); the caller should then start fresh. Token counts
 * are compared against the live payload because the service tokenizer is
 * the single source of truth for span indices.
 */
export function restoreDraft(saved: Draft, caption: CaptionPayload, annotatorId: string): Draft | null {
  if (saved.taskId !== caption.task_id || saved.annotatorId !== annotatorId) return null;
  if (!Array.isArray(saved.sentences) || saved.sentences.length !== caption.sentences.length) {
    return null;
  }
  const tokenCounts = caption.sentences.map((s) => s.tokens.length);
  if (
    !Array.isArray(saved.tokenCounts) ||
    saved.tokenCounts.length !== tokenCounts.length ||
    saved.tokenCounts.some((n, i) => n !== tokenCounts[i])
  ) {
    return null;
  }
  if (saved.paragraphScore !== null) {
    if (!Number.isInteger(saved.paragraphScore) || saved.paragraphScore < 1 || saved.paragraphScore > 5) {
      return null;
    }
  }
  for (let i = 0; i < saved.sentences.length; i++) {
    const sentence = saved.sentences[i]!;
    if (sentence.judgment !== null && sentence.judgment !== "factual" && sentence.judgment !== "not_factual") {
      return null;
    }
    if (!Array.isArray(sentence.spans)) return null;
    for (const span of sentence.spans) {
      const [start, end] = span;
      if (!Number.isInteger(start) || !Number.isInteger(end)) return null;
      if (start < 0 || start >= end || end > tokenCounts[i]!) return null;
    }
  }
  return {
    ...saved,
    // Transient interaction state never survives a reload.
    selection: null,
    currentSentence: Math.min(Math.max(0, saved.currentSentence ?? 0), caption.sentences.length - 1),
  };
}
