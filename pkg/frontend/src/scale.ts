/**
 * The five-point factual-consistency scale shown next to the score control.
 *
 * Definitions match the annotation guide the service publishes at
 * /api/protocol, so annotators see the same wording in both places.
 */

export interface ScaleStep {
  value: number;
  definition: string;
}

export const LIKERT_SCALE: readonly ScaleStep[] = [
  {
    value: 5,
    definition: "every claim is supported by the video; no factual errors.",
  },
  {
    value: 4,
    definition:
      "almost entirely accurate; at most one minor slip (for example a wrong color or count) that does not change what is happening.",
  },
  {
    value: 3,
    definition: "the main activity is right, but several details are wrong.",
  },
  {
    value: 2,
    definition: "mostly wrong; only fragments match the video.",
  },
  {
    value: 1,
    definition: "the description does not match the video at all.",
  },
];

/** The score whose definition promises "no factual errors". */
export const SCORE_NO_ERRORS = 5;
