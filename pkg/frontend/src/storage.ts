/**
 * Local draft persistence.
 *
 * Drafts autosave on every edit under a per-(annotator, task) key, so a
 * refresh or crash resumes in place. The backend is anything with the
 * localStorage get/set/remove surface, which keeps tests off the browser.
 */

import type { Draft } from "./draft.js";

export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

const ENVELOPE_VERSION = 1;

interface Envelope {
  version: number;
  draft: Draft;
}

export class DraftStore {
  constructor(
    private readonly backend: KeyValueStore,
    private readonly prefix = "caption-annotation",
  ) {}

  private key(annotatorId: string, taskId: string): string {
    return `${this.prefix}:${annotatorId}:${taskId}`;
  }

  save(draft: Draft): void {
    const envelope: Envelope = { version: ENVELOPE_VERSION, draft };
    this.backend.setItem(this.key(draft.annotatorId, draft.taskId), JSON.stringify(envelope));
  }

  /** The saved draft, or null when missing, corrupt, or from another version. */
  load(annotatorId: string, taskId: string): Draft | null {
    const text = this.backend.getItem(this.key(annotatorId, taskId));
    if (text === null) return null;
    let envelope: Envelope;
    try {
      envelope = JSON.parse(text) as Envelope;
    } catch {
      return null;
    }
    if (envelope === null || typeof envelope !== "object") return null;
    if (envelope.version !== ENVELOPE_VERSION) return null;
    const draft = envelope.draft;
    if (draft === null || typeof draft !== "object") return null;
    if (draft.taskId !== taskId || draft.annotatorId !== annotatorId) return null;
    return draft;
  }

  clear(annotatorId: string, taskId: string): void {
    this.backend.removeItem(this.key(annotatorId, taskId));
  }
}

/** In-memory backend for tests and non-browser callers. */
export class MemoryStore implements KeyValueStore {
  private readonly map = new Map<string, string>();

  getItem(key: string): string | null {
    return this.map.has(key) ? this.map.get(key)! : null;
  }

  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }

  removeItem(key: string): void {
    this.map.delete(key);
  }
}
