"""Factuality scoring of captions against video frames and reference texts.

A caption sentence is scored on two levels and blended:

* coarse: cosine between the pooled video (mean frame embedding) and the
  sentence embedding;
* fine: for each caption token, the best cosine against any frame, averaged
  over tokens (a precision; an F-value variant adds the symmetric recall).

``blended = (1 - alpha) * coarse + alpha * fine`` with ``alpha`` defaulting
to 0.75. A paragraph score is the mean over its sentences. Reference texts
can replace or accompany the video side: the reference paragraph's pooled
sentence embeddings stand in for the pooled video and its token embeddings
stand in for the frame bank.

All arithmetic here is float64 on plain arrays; projection from pre-trained
embeddings happens upstream (see :mod:`factvc.embeddings`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import embeddings as emb
from .corpus import Corpus

MODE_VIDEO = "video_ref"
MODE_TEXT = "text_ref"
MODE_VIDEO_TEXT = "video_text_ref"
MODES = (MODE_VIDEO, MODE_TEXT, MODE_VIDEO_TEXT)

FINE_PRECISION = "precision"
FINE_F_VALUE = "f_value"
FINE_VARIANTS = (FINE_PRECISION, FINE_F_VALUE)

MULTI_REF_MAX = "max"
MULTI_REF_MEAN = "mean"
MULTI_REF_MODES = (MULTI_REF_MAX, MULTI_REF_MEAN)

PARAGRAPH_MEAN = "mean_of_sentences"
PARAGRAPH_POLICIES = (PARAGRAPH_MEAN,)

DEFAULT_ALPHA = 0.75


class ScoringError(ValueError):
    pass


def _as_rows(vectors, label: str) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2:
        raise ScoringError(f"{label} must be a 2-D array, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ScoringError(f"{label} is empty")
    return arr


def _unit_rows(vectors, label: str) -> np.ndarray:
    arr = _as_rows(vectors, label)
    norms = np.linalg.norm(arr, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise ScoringError(f"{label} row {bad[0]} has zero norm")
    return arr / norms[:, None]


def cosine(u, v, labels: tuple[str, str] = ("left", "right")) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ScoringError(f"cosine of mismatched dims {u.shape[0]} and {v.shape[0]}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0:
        raise ScoringError(f"{labels[0]} vector has zero norm")
    if nv == 0:
        raise ScoringError(f"{labels[1]} vector has zero norm")
    return float(u @ v / (nu * nv))


def cosine_matrix(a, b, labels: tuple[str, str] = ("left", "right")) -> np.ndarray:
    """Pairwise cosines between rows of ``a`` (n, d) and rows of ``b`` (m, d)."""
    ua = _unit_rows(a, labels[0])
    ub = _unit_rows(b, labels[1])
    if ua.shape[1] != ub.shape[1]:
        raise ScoringError(
            f"{labels[0]} dim {ua.shape[1]} != {labels[1]} dim {ub.shape[1]}"
        )
    return ua @ ub.T


def coarse_score(frame_vectors, sentence_vector) -> float:
    """Cosine between the mean frame embedding and the sentence embedding."""
    frames = _as_rows(frame_vectors, "frames")
    return cosine(frames.mean(axis=0), sentence_vector, labels=("pooled frames", "sentence"))


def fine_precision_score(frame_vectors, token_vectors) -> float:
    """Mean over tokens of the best cosine against any frame."""
    sims = cosine_matrix(frame_vectors, token_vectors, labels=("frames", "tokens"))
    return float(sims.max(axis=0).mean())


def fine_recall_score(frame_vectors, token_vectors) -> float:
    """Mean over frames of the best cosine against any token."""
    sims = cosine_matrix(frame_vectors, token_vectors, labels=("frames", "tokens"))
    return float(sims.max(axis=1).mean())


def fine_f_value_score(frame_vectors, token_vectors) -> float:
    """Harmonic mean of the fine precision and recall; 0 when both vanish."""
    sims = cosine_matrix(frame_vectors, token_vectors, labels=("frames", "tokens"))
    precision = float(sims.max(axis=0).mean())
    recall = float(sims.max(axis=1).mean())
    denom = precision + recall
    if denom == 0:
        return 0.0
    return 2.0 * precision * recall / denom


@dataclass
class ScoreConfig:
    alpha: float = DEFAULT_ALPHA
    mode: str = MODE_VIDEO
    fine_aggregation: str = FINE_PRECISION
    multi_ref_policy: str = MULTI_REF_MAX
    paragraph_policy: str = PARAGRAPH_MEAN
    clip_restriction: bool = False

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ScoringError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.mode not in MODES:
            raise ScoringError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.fine_aggregation not in FINE_VARIANTS:
            raise ScoringError(
                f"fine_aggregation must be one of {FINE_VARIANTS}, "
                f"got '{self.fine_aggregation}'"
            )
        if self.multi_ref_policy not in MULTI_REF_MODES:
            raise ScoringError(
                f"multi_ref_policy must be one of {MULTI_REF_MODES}, "
                f"got '{self.multi_ref_policy}'"
            )
        if self.paragraph_policy not in PARAGRAPH_POLICIES:
            raise ScoringError(
                f"paragraph_policy must be one of {PARAGRAPH_POLICIES}, "
                f"got '{self.paragraph_policy}'"
            )


@dataclass
class ScoreBreakdown:
    blended: float
    coarse: float
    fine: float
    mode: str = MODE_VIDEO

    @classmethod
    def blend(
        cls, coarse: float, fine: float, alpha: float, mode: str = MODE_VIDEO
    ) -> "ScoreBreakdown":
        return cls(
            blended=(1.0 - alpha) * coarse + alpha * fine,
            coarse=coarse,
            fine=fine,
            mode=mode,
        )

    @classmethod
    def mean_of(
        cls, parts: list["ScoreBreakdown"], mode: str | None = None
    ) -> "ScoreBreakdown":
        if not parts:
            raise ScoringError("cannot average an empty list of score breakdowns")
        return cls(
            blended=float(np.mean([p.blended for p in parts])),
            coarse=float(np.mean([p.coarse for p in parts])),
            fine=float(np.mean([p.fine for p in parts])),
            mode=parts[0].mode if mode is None else mode,
        )


@dataclass
class ReferenceSide:
    """One comparison target: a pooled vector plus a bank of fine-grained rows.

    For the video side the pool is the mean frame embedding and the bank is
    the frame matrix; for a reference paragraph the pool is the mean of its
    sentence embeddings and the bank is all of its token embeddings.
    """

    label: str
    pooled: np.ndarray
    grains: np.ndarray

    @classmethod
    def from_frames(cls, frame_vectors, label: str = "video") -> "ReferenceSide":
        frames = _as_rows(frame_vectors, f"{label} frames")
        return cls(label=label, pooled=frames.mean(axis=0), grains=frames)

    @classmethod
    def from_reference_text(
        cls, sentence_vectors, token_vectors, label: str = "reference"
    ) -> "ReferenceSide":
        sents = _as_rows(sentence_vectors, f"{label} sentences")
        tokens = _as_rows(token_vectors, f"{label} tokens")
        return cls(label=label, pooled=sents.mean(axis=0), grains=tokens)


def _fine(side: ReferenceSide, token_vectors, variant: str) -> float:
    if variant == FINE_PRECISION:
        return fine_precision_score(side.grains, token_vectors)
    return fine_f_value_score(side.grains, token_vectors)


def score_sentence_against(
    side: ReferenceSide, sentence_vector, token_vectors, config: ScoreConfig
) -> ScoreBreakdown:
    coarse = cosine(side.pooled, sentence_vector, labels=(f"pooled {side.label}", "sentence"))
    fine = _fine(side, token_vectors, config.fine_aggregation)
    return ScoreBreakdown.blend(coarse, fine, config.alpha, mode=config.mode)


def _reduce_text_refs(
    refs: list[ReferenceSide], sentence_vector, token_vectors, config: ScoreConfig
) -> ScoreBreakdown:
    parts = [
        score_sentence_against(ref, sentence_vector, token_vectors, config) for ref in refs
    ]
    if config.multi_ref_policy == MULTI_REF_MAX:
        return max(parts, key=lambda p: p.blended)
    return ScoreBreakdown.mean_of(parts)


def factvc_sentence(
    sentence_vector,
    token_vectors,
    *,
    video: ReferenceSide | None = None,
    text_refs: list[ReferenceSide] | None = None,
    config: ScoreConfig | None = None,
) -> ScoreBreakdown:
    """Score one sentence under the configured reference mode."""
    config = config or ScoreConfig()
    config.validate()
    token_vectors = _as_rows(token_vectors, "tokens")
    if config.mode in (MODE_VIDEO, MODE_VIDEO_TEXT) and video is None:
        raise ScoringError(f"mode '{config.mode}' needs video embeddings")
    if config.mode in (MODE_TEXT, MODE_VIDEO_TEXT) and not text_refs:
        raise ScoringError(f"mode '{config.mode}' needs at least one reference paragraph")
    if config.mode == MODE_VIDEO:
        return score_sentence_against(video, sentence_vector, token_vectors, config)
    if config.mode == MODE_TEXT:
        return _reduce_text_refs(text_refs, sentence_vector, token_vectors, config)
    against_video = score_sentence_against(video, sentence_vector, token_vectors, config)
    against_text = _reduce_text_refs(text_refs, sentence_vector, token_vectors, config)
    return ScoreBreakdown.mean_of([against_video, against_text])


@dataclass
class SentenceEmbedding:
    """Projected embeddings for one caption sentence."""

    sentence: np.ndarray  # (d,)
    tokens: np.ndarray  # (n_tokens, d)


@dataclass
class ParagraphScore:
    paragraph: ScoreBreakdown
    sentences: list[ScoreBreakdown]


def factvc_paragraph(
    sentences: list[SentenceEmbedding],
    *,
    frame_vectors=None,
    clip_frame_ranges: list[tuple[int, int]] | None = None,
    text_refs: list[ReferenceSide] | None = None,
    config: ScoreConfig | None = None,
) -> ParagraphScore:
    """Score a whole caption; the paragraph score is the mean over sentences.

    With ``clip_restriction`` each sentence is compared only against its
    clip's frame range, which requires exactly one range per sentence.
    """
    config = config or ScoreConfig()
    config.validate()
    if not sentences:
        raise ScoringError("paragraph has no sentences")

    needs_video = config.mode in (MODE_VIDEO, MODE_VIDEO_TEXT)
    frames = None
    if needs_video:
        if frame_vectors is None:
            raise ScoringError(f"mode '{config.mode}' needs video embeddings")
        frames = _as_rows(frame_vectors, "frames")

    sides: list[ReferenceSide | None] = []
    if needs_video and config.clip_restriction:
        if clip_frame_ranges is None:
            raise ScoringError("clip_restriction requires clip frame ranges")
        if len(clip_frame_ranges) != len(sentences):
            raise ScoringError(
                f"clip_restriction requires one clip per sentence: "
                f"{len(clip_frame_ranges)} clips for {len(sentences)} sentences"
            )
        for i, (start, end) in enumerate(clip_frame_ranges):
            if not 0 <= start < end <= frames.shape[0]:
                raise ScoringError(
                    f"sentence {i}: clip frame range [{start}, {end}) invalid for "
                    f"{frames.shape[0]} frames"
                )
            sides.append(ReferenceSide.from_frames(frames[start:end], label=f"clip {i}"))
    elif needs_video:
        sides = [ReferenceSide.from_frames(frames)] * len(sentences)
    else:
        sides = [None] * len(sentences)

    parts = []
    for i, sent in enumerate(sentences):
        try:
            parts.append(
                factvc_sentence(
                    sent.sentence,
                    sent.tokens,
                    video=sides[i],
                    text_refs=text_refs,
                    config=config,
                )
            )
        except ScoringError as exc:
            raise ScoringError(f"sentence {i}: {exc}") from None
    return ParagraphScore(paragraph=ScoreBreakdown.mean_of(parts), sentences=parts)


def foil_accuracy(pairs, scorer=None) -> float:
    """Fraction of (true, corrupted) pairs ranked correctly; ties count half.

    ``pairs`` holds (true, corrupted) items. With ``scorer`` given, each item
    is mapped through it to a number first; without, items are the scores.
    """
    pairs = list(pairs)
    if not pairs:
        raise ScoringError("no score pairs to evaluate")
    credit = 0.0
    for true_item, foil_item in pairs:
        if scorer is not None:
            true_score, foil_score = scorer(true_item), scorer(foil_item)
        else:
            true_score, foil_score = true_item, foil_item
        if true_score > foil_score:
            credit += 1.0
        elif true_score == foil_score:
            credit += 0.5
    return credit / len(pairs)


def report_row(
    video_id: str, model_id: str, score: ParagraphScore, config: ScoreConfig
) -> dict:
    """One score-report JSONL record."""
    return {
        "video_id": video_id,
        "model_id": model_id,
        "mode": config.mode,
        "alpha": config.alpha,
        "paragraph": score.paragraph.blended,
        "sentences": [s.blended for s in score.sentences],
        "coarse": score.paragraph.coarse,
        "fine": score.paragraph.fine,
    }


class FactVCScorer(BaseEstimator):
    """Corpus-level scorer with the usual estimator parameter surface.

    ``fit`` binds a corpus, an embed store, and optional projection weights;
    ``transform`` produces one report row per caption. Projection defaults
    to the identity when the store's vision and text dims agree.
    """

    def __init__(
        self,
        alpha: float = DEFAULT_ALPHA,
        mode: str = MODE_VIDEO,
        fine_aggregation: str = FINE_PRECISION,
        multi_ref_policy: str = MULTI_REF_MAX,
        clip_restriction: bool = False,
        reference_model_ids: tuple[str, ...] | None = None,
    ):
        self.alpha = alpha
        self.mode = mode
        self.fine_aggregation = fine_aggregation
        self.multi_ref_policy = multi_ref_policy
        self.clip_restriction = clip_restriction
        self.reference_model_ids = reference_model_ids

    def _config(self) -> ScoreConfig:
        config = ScoreConfig(
            alpha=self.alpha,
            mode=self.mode,
            fine_aggregation=self.fine_aggregation,
            multi_ref_policy=self.multi_ref_policy,
            clip_restriction=self.clip_restriction,
        )
        config.validate()
        return config

    def fit(
        self,
        corpus: Corpus,
        store: emb.EmbedStore,
        weights: emb.ProjectionWeights | None = None,
    ) -> "FactVCScorer":
        config = self._config()
        if config.mode in (MODE_TEXT, MODE_VIDEO_TEXT) and not self.reference_model_ids:
            raise ScoringError(f"mode '{config.mode}' needs reference_model_ids")
        self.corpus_ = corpus
        self.store_ = store
        self.weights_ = weights
        return self

    def _check_fitted(self):
        if not hasattr(self, "store_"):
            raise NotFittedError("FactVCScorer must be fit(corpus, store) before scoring")

    def _project(self, matrix: emb.EmbeddingMatrix) -> np.ndarray:
        if self.weights_ is None:
            return matrix.vectors.astype(np.float64)
        return emb.project(matrix, self.weights_).vectors.astype(np.float64)

    def _sentence_embeddings(self, raw_sentences: list[str]) -> list[SentenceEmbedding]:
        out = []
        for raw in raw_sentences:
            sent = self._project(self.store_.get_text_sentence(raw))[0]
            tokens = self._project(self.store_.get_text_tokens(raw))
            out.append(SentenceEmbedding(sentence=sent, tokens=tokens))
        return out

    def _text_refs(self, video_id: str, candidate_model_id: str) -> list[ReferenceSide]:
        refs = []
        for ref_model in self.reference_model_ids or ():
            if ref_model == candidate_model_id:
                continue
            key = (video_id, ref_model)
            if key not in self.corpus_.captions:
                continue
            doc = self.corpus_.captions[key]
            sent_vecs = []
            token_banks = []
            for sent in doc.sentences:
                sent_vecs.append(self._project(self.store_.get_text_sentence(sent.raw))[0])
                token_banks.append(self._project(self.store_.get_text_tokens(sent.raw)))
            refs.append(
                ReferenceSide.from_reference_text(
                    np.stack(sent_vecs), np.vstack(token_banks), label=ref_model
                )
            )
        return refs

    def score_caption(self, video_id: str, model_id: str) -> ParagraphScore:
        self._check_fitted()
        config = self._config()
        doc = self.corpus_.caption(video_id, model_id)
        sentences = self._sentence_embeddings([s.raw for s in doc.sentences])

        frames = None
        clip_ranges = None
        if config.mode in (MODE_VIDEO, MODE_VIDEO_TEXT):
            frames = self._project(self.store_.get_frames(video_id))
            if config.clip_restriction:
                clip_ranges = self.store_.get_clip_ranges(video_id)

        text_refs = None
        if config.mode in (MODE_TEXT, MODE_VIDEO_TEXT):
            text_refs = self._text_refs(video_id, model_id)
            if not text_refs:
                raise ScoringError(
                    f"no reference captions for video '{video_id}' "
                    f"(reference models: {self.reference_model_ids})"
                )

        return factvc_paragraph(
            sentences,
            frame_vectors=frames,
            clip_frame_ranges=clip_ranges,
            text_refs=text_refs,
            config=config,
        )

    def transform(self, caption_keys: list[tuple[str, str]] | None = None) -> list[dict]:
        self._check_fitted()
        config = self._config()
        if caption_keys is None:
            caption_keys = sorted(self.corpus_.captions)
            if self.reference_model_ids:
                caption_keys = [
                    k for k in caption_keys if k[1] not in self.reference_model_ids
                ]
        rows = []
        for video_id, model_id in caption_keys:
            score = self.score_caption(video_id, model_id)
            rows.append(report_row(video_id, model_id, score, config))
        return rows

    def predict(self, caption_keys: list[tuple[str, str]] | None = None) -> np.ndarray:
        return np.array([row["paragraph"] for row in self.transform(caption_keys)])
