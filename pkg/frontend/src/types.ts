/**
 * Wire types of the annotation service.
 *
 * Field names mirror the service JSON exactly. None of these payloads ever
 * carries a model identity; annotation stays blind end to end.
 */

/** GET /api/task?annotator=ID */
export interface TaskPayload {
  done: boolean;
  task_id?: string;
  video_id?: string;
  /** 1-based position in the annotator's queue. */
  position?: number;
  total?: number;
  completed?: number;
}

export interface SentencePayload {
  index: number;
  raw: string;
  /**
   * Token boundaries come from the service's tokenizer and are the only
   * valid reference frame for span indices; the client never re-splits.
   */
  tokens: string[];
}

/** GET /api/caption/{task_id} */
export interface CaptionPayload {
  task_id: string;
  video_id: string;
  video_url: string | null;
  sentences: SentencePayload[];
}

/** Half-open token range [start, end). */
export type ErrorSpan = [number, number];

export interface SentenceSubmission {
  factual: boolean;
  error_spans: ErrorSpan[];
}

/**
 * POST /api/annotations body. Sentence labels and the paragraph score use
 * the corpus annotation-record schema verbatim; the task id stands in for
 * the (video, model) pair the client must not know.
 */
export interface AnnotationSubmission {
  task_id: string;
  annotator_id: string;
  paragraph_score: number;
  sentences: SentenceSubmission[];
}

export interface SubmitAck {
  ok: boolean;
  task_id: string;
  remaining: number;
}

export interface AnnotatorProgress {
  annotator_id: string;
  completed: number;
  total: number;
}

/** GET /api/progress */
export interface ProgressPayload {
  annotators: AnnotatorProgress[];
  completed: number;
  total: number;
}
