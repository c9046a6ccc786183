"""Contrastive finetuning of the two projection matrices.

Only the linear maps ``W_v`` and ``W_t`` train; the pre-trained encoders
are frozen, so every sample is resolved once to raw embeddings and reused.
A sample is (clip frames, consistent text, corrupted text). Within a batch,
pooled projected clips are scored against all projected positive texts by
cosine, giving a similarity matrix ``S`` whose diagonal holds the matched
pairs, plus a vector ``s_neg`` of each clip against its own corrupted text.

Losses (sums over the batch):

* coarse, "log_softmax" form: ``sum_i -log softmax(S_i / tau)_ii``
* coarse, "literal" form:     ``sum_i -softmax(S_i / tau)_ii``
* fine (margin):              ``sum_i max(0, margin - S_ii + s_neg_i)``
* total:                      ``coarse + lam * fine``

Gradients are closed-form (softmax Jacobian through row L2 normalization
and the linear maps) and the optimizer is a self-contained Adam, so results
are bit-reproducible for a given seed. All training math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import embeddings as emb
from .augment import split_train_val
from .corpus import TripleRecord

CE_LOG_SOFTMAX = "log_softmax"
CE_LITERAL = "literal"
CE_FORMS = (CE_LOG_SOFTMAX, CE_LITERAL)

# Optimizer moment constants; part of the training contract, not tunable.
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DEFAULT_FRAMES_PER_CLIP = 3


class TrainerError(ValueError):
    pass


@dataclass
class LossConfig:
    """Loss and optimization hyperparameters.

    ``margin`` is the hinge margin M; ``lam`` weights the fine term in the
    total loss (both names avoid Python keywords).
    """

    margin: float = 5.0
    lam: float = 0.1
    batch_size: int = 256
    learning_rate: float = 5e-5
    epochs: int = 3
    ce_form: str = CE_LOG_SOFTMAX
    temperature: float = 1.0
    seed: int = 0

    def validate(self):
        if self.margin < 0:
            raise TrainerError(f"margin must be >= 0, got {self.margin}")
        if self.lam < 0:
            raise TrainerError(f"lam must be >= 0, got {self.lam}")
        if self.batch_size < 2:
            raise TrainerError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.learning_rate < 0:
            raise TrainerError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise TrainerError(f"epochs must be >= 1, got {self.epochs}")
        if self.ce_form not in CE_FORMS:
            raise TrainerError(f"ce_form must be one of {CE_FORMS}, got '{self.ce_form}'")
        if self.temperature <= 0:
            raise TrainerError(f"temperature must be > 0, got {self.temperature}")

    def to_json(self) -> dict:
        return {
            "margin": self.margin,
            "lam": self.lam,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "ce_form": self.ce_form,
            "temperature": self.temperature,
            "seed": self.seed,
        }


@dataclass
class TrainSample:
    """One resolved triple: raw clip frames and the two text embeddings."""

    frames: np.ndarray  # (frames_per_clip, d_vision)
    positive: np.ndarray  # (d_text,)
    negative: np.ndarray  # (d_text,)


@dataclass
class TripleBatch:
    """Stacked sample arrays; the contrastive term needs at least two rows."""

    frames: np.ndarray  # (B, k, d_vision)
    positives: np.ndarray  # (B, d_text)
    negatives: np.ndarray  # (B, d_text)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.positives = np.asarray(self.positives, dtype=np.float64)
        self.negatives = np.asarray(self.negatives, dtype=np.float64)
        if self.frames.ndim != 3:
            raise TrainerError(f"frames must be (B, k, d), got shape {self.frames.shape}")
        if self.positives.ndim != 2 or self.negatives.ndim != 2:
            raise TrainerError("positives and negatives must be (B, d) arrays")
        b = self.frames.shape[0]
        if self.positives.shape[0] != b or self.negatives.shape[0] != b:
            raise TrainerError(
                f"batch sizes disagree: frames {b}, positives "
                f"{self.positives.shape[0]}, negatives {self.negatives.shape[0]}"
            )
        if self.positives.shape[1] != self.negatives.shape[1]:
            raise TrainerError(
                f"text dims disagree: positives {self.positives.shape[1]}, "
                f"negatives {self.negatives.shape[1]}"
            )
        if b < 2:
            raise TrainerError(f"batch size must be >= 2 for the contrastive term, got {b}")

    @property
    def batch_size(self) -> int:
        return self.frames.shape[0]

    @classmethod
    def from_samples(cls, samples: list[TrainSample]) -> "TripleBatch":
        if not samples:
            raise TrainerError("no samples")
        return cls(
            frames=np.stack([s.frames for s in samples]),
            positives=np.stack([s.positive for s in samples]),
            negatives=np.stack([s.negative for s in samples]),
        )


def pick_frame_indices(start: int, end: int, count: int) -> list[int]:
    """Evenly spaced frame indices in [start, end); repeats when short."""
    if not 0 <= start < end:
        raise TrainerError(f"empty frame range [{start}, {end})")
    if count < 1:
        raise TrainerError(f"count must be >= 1, got {count}")
    return [int(round(x)) for x in np.linspace(start, end - 1, num=count)]


def resolve_samples(
    triples: list[TripleRecord],
    store: emb.EmbedStore,
    frames_per_clip: int = DEFAULT_FRAMES_PER_CLIP,
) -> list[TrainSample]:
    """Pull embeddings for each triple from the store.

    Frames come from the triple's clip range when the store knows one,
    otherwise from the whole video, subsampled to ``frames_per_clip``.
    Missing embeddings fail up front with the affected video ids.
    """
    no_frames = sorted({t.video_id for t in triples if not store.has_frames(t.video_id)})
    no_texts = sorted(
        {
            t.video_id
            for t in triples
            if not (
                store.has_text_sentence(t.positive) and store.has_text_sentence(t.negative)
            )
        }
    )
    problems = []
    if no_frames:
        problems.append(f"missing frame embeddings for videos: {', '.join(no_frames)}")
    if no_texts:
        problems.append(f"missing text embeddings for videos: {', '.join(no_texts)}")
    if problems:
        raise TrainerError("; ".join(problems))

    samples = []
    for triple in triples:
        frames = store.get_frames(triple.video_id).vectors.astype(np.float64)
        start, end = 0, frames.shape[0]
        ranges = store.get_clip_ranges(triple.video_id)
        if triple.clip_index is not None and ranges is not None:
            if not 0 <= triple.clip_index < len(ranges):
                raise TrainerError(
                    f"video '{triple.video_id}': clip_index {triple.clip_index} "
                    f"out of range for {len(ranges)} clips"
                )
            start, end = ranges[triple.clip_index]
        indices = pick_frame_indices(start, end, frames_per_clip)
        samples.append(
            TrainSample(
                frames=frames[indices],
                positive=store.get_text_sentence(triple.positive).vectors[0].astype(np.float64),
                negative=store.get_text_sentence(triple.negative).vectors[0].astype(np.float64),
            )
        )
    return samples


def _normalize_rows(x: np.ndarray, label: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise TrainerError(f"sample {bad[0]}: projected {label} embedding has zero norm")
    return x / norms[:, None], norms


def _weight_arrays(weights) -> tuple[np.ndarray, np.ndarray]:
    """Accept ProjectionWeights or a raw (w_v, w_t) pair; float64 views."""
    if isinstance(weights, emb.ProjectionWeights):
        return weights.w_v.astype(np.float64), weights.w_t.astype(np.float64)
    w_v, w_t = weights
    return np.asarray(w_v, dtype=np.float64), np.asarray(w_t, dtype=np.float64)


def _similarities(w_v, w_t, frames, positives, negatives):
    pooled = frames.mean(axis=1)
    v_n, _ = _normalize_rows(pooled @ w_v.T, "video")
    t_n, _ = _normalize_rows(positives @ w_t.T, "positive text")
    u_n, _ = _normalize_rows(negatives @ w_t.T, "negative text")
    return v_n @ t_n.T, np.einsum("bd,bd->b", v_n, u_n)


def batch_similarities(batch: TripleBatch, weights) -> tuple[np.ndarray, np.ndarray]:
    """Cosine similarities for a batch.

    Returns ``(S, s_neg)``: the (B, B) clip-versus-positive matrix and the
    (B,) clip-versus-own-negative vector.
    """
    w_v, w_t = _weight_arrays(weights)
    return _similarities(w_v, w_t, batch.frames, batch.positives, batch.negatives)


def loss_coarse(s_matrix: np.ndarray, config: LossConfig | None = None) -> float:
    """Batch-sum cross-entropy over the matched diagonal, either form."""
    config = config or LossConfig()
    z = np.asarray(s_matrix, dtype=np.float64) / config.temperature
    z_shift = z - z.max(axis=1, keepdims=True)
    log_denom = np.log(np.exp(z_shift).sum(axis=1))
    log_probs = np.diagonal(z_shift) - log_denom
    if config.ce_form == CE_LOG_SOFTMAX:
        return float(-log_probs.sum())
    if config.ce_form == CE_LITERAL:
        return float(-np.exp(log_probs).sum())
    raise TrainerError(f"unknown ce_form '{config.ce_form}'")


def loss_fine(s_diag: np.ndarray, s_neg: np.ndarray, config: LossConfig | None = None) -> float:
    """Batch-sum hinge on the matched-versus-corrupted score gap."""
    config = config or LossConfig()
    s_diag = np.asarray(s_diag, dtype=np.float64)
    s_neg = np.asarray(s_neg, dtype=np.float64)
    if s_diag.shape != s_neg.shape:
        raise TrainerError(
            f"score vectors must match: got {s_diag.shape} and {s_neg.shape}"
        )
    return float(np.maximum(0.0, config.margin - s_diag + s_neg).sum())


def _loss_parts(s_matrix, s_neg, config: LossConfig) -> tuple[float, float, float]:
    coarse = loss_coarse(s_matrix, config)
    fine = loss_fine(np.diagonal(s_matrix), s_neg, config)
    return coarse + config.lam * fine, coarse, fine


def loss_total(batch: TripleBatch, weights, config: LossConfig | None = None) -> float:
    """Total loss ``coarse + lam * fine`` for one batch."""
    config = config or LossConfig()
    s_matrix, s_neg = batch_similarities(batch, weights)
    total, _, _ = _loss_parts(s_matrix, s_neg, config)
    return total


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_gradients(w_v, w_t, frames, positives, negatives, config: LossConfig):
    """Loss parts plus gradients (dW_v, dW_t) for one batch, all closed form."""
    pooled = frames.mean(axis=1)
    v_raw = pooled @ w_v.T
    t_raw = positives @ w_t.T
    u_raw = negatives @ w_t.T
    v_n, v_norm = _normalize_rows(v_raw, "video")
    t_n, t_norm = _normalize_rows(t_raw, "positive text")
    u_n, u_norm = _normalize_rows(u_raw, "negative text")

    s_matrix = v_n @ t_n.T
    s_neg = np.einsum("bd,bd->b", v_n, u_n)
    total, coarse, fine = _loss_parts(s_matrix, s_neg, config)

    probs = _softmax_rows(s_matrix / config.temperature)
    if config.ce_form == CE_LOG_SOFTMAX:
        g_s = (probs - np.eye(len(probs))) / config.temperature
    else:
        diag = np.diagonal(probs)
        g_s = (diag[:, None] * probs - np.diag(diag)) / config.temperature

    hinge_active = (config.margin - np.diagonal(s_matrix) + s_neg) > 0
    g_s = g_s + np.diag(-config.lam * hinge_active.astype(np.float64))
    g_neg = config.lam * hinge_active.astype(np.float64)

    d_vn = g_s @ t_n + g_neg[:, None] * u_n
    d_tn = g_s.T @ v_n
    d_un = g_neg[:, None] * v_n

    def through_norm(d_xn, x_n, norms):
        return (d_xn - np.einsum("bd,bd->b", d_xn, x_n)[:, None] * x_n) / norms[:, None]

    d_v = through_norm(d_vn, v_n, v_norm)
    d_t = through_norm(d_tn, t_n, t_norm)
    d_u = through_norm(d_un, u_n, u_norm)

    d_wv = d_v.T @ pooled
    d_wt = d_t.T @ positives + d_u.T @ negatives
    return total, coarse, fine, d_wv, d_wt


def gradients(batch: TripleBatch, weights, config: LossConfig | None = None):
    """Exact analytic gradients of the total loss: ``(dW_v, dW_t)``."""
    config = config or LossConfig()
    w_v, w_t = _weight_arrays(weights)
    _, _, _, d_wv, d_wt = _loss_and_gradients(
        w_v, w_t, batch.frames, batch.positives, batch.negatives, config
    )
    return d_wv, d_wt


class Adam:
    """Plain Adam with bias correction, kept in float64 for reproducibility."""

    def __init__(
        self,
        shapes,
        lr: float,
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(shape) for shape in shapes]
        self.v = [np.zeros(shape) for shape in shapes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1**self.t)
            v_hat = self.v[i] / (1 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_coarse: float
    train_fine: float
    val_loss: float | None = None
    val_coarse: float | None = None
    val_fine: float | None = None
    val_accuracy: float | None = None

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_coarse": self.train_coarse,
            "train_fine": self.train_fine,
            "val_loss": self.val_loss,
            "val_coarse": self.val_coarse,
            "val_fine": self.val_fine,
            "val_accuracy": self.val_accuracy,
        }


def evaluate(
    samples: list[TrainSample], weights, config: LossConfig
) -> tuple[float, float, float, float]:
    """Per-sample (loss, coarse, fine) means plus separation accuracy.

    Losses run over fixed-order batches of the training batch size; a
    trailing batch of fewer than two samples is dropped, exactly as in
    training. Separation accuracy (``s+ > s-``) is per sample and counts
    everything.
    """
    if not samples:
        raise TrainerError("no samples to evaluate")
    w_v, w_t = _weight_arrays(weights)
    full = TripleBatch.from_samples(samples) if len(samples) >= 2 else None
    if full is None:
        raise TrainerError("need at least two samples to evaluate the contrastive loss")

    # Per-sample separation: the diagonal similarity does not depend on the
    # rest of the batch, so compute it once over everything.
    pooled = full.frames.mean(axis=1)
    v_n, _ = _normalize_rows(pooled @ w_v.T, "video")
    t_n, _ = _normalize_rows(full.positives @ w_t.T, "positive text")
    u_n, _ = _normalize_rows(full.negatives @ w_t.T, "negative text")
    s_diag = np.einsum("bd,bd->b", v_n, t_n)
    s_neg = np.einsum("bd,bd->b", v_n, u_n)
    accuracy = float((s_diag > s_neg).mean())

    total = coarse = fine = 0.0
    counted = 0
    n = len(samples)
    for start in range(0, n, config.batch_size):
        idx = np.arange(start, min(start + config.batch_size, n))
        if idx.size < 2:
            continue
        s_matrix, s_neg_b = _similarities(
            w_v, w_t, full.frames[idx], full.positives[idx], full.negatives[idx]
        )
        batch_total, batch_coarse, batch_fine = _loss_parts(s_matrix, s_neg_b, config)
        total += batch_total
        coarse += batch_coarse
        fine += batch_fine
        counted += idx.size
    return total / counted, coarse / counted, fine / counted, accuracy


def train(
    triples: list[TripleRecord],
    store: emb.EmbedStore,
    init: emb.ProjectionWeights,
    config: LossConfig | None = None,
    *,
    val_triples: list[TripleRecord] | None = None,
    val_fraction: float | None = 0.1,
    frames_per_clip: int = DEFAULT_FRAMES_PER_CLIP,
    checkpoint_path=None,
) -> tuple[emb.ProjectionWeights, list[EpochStats]]:
    """Run the finetune loop; returns final weights and per-epoch history.

    Validation triples split off by video when not passed explicitly.
    History row 0 is the untouched initialization, so ``history[i]`` for
    ``i >= 1`` reflects the weights after epoch ``i``. A trailing shuffled
    batch of fewer than two samples is dropped. When ``checkpoint_path``
    is given the final weights are also written there.
    """
    config = config or LossConfig()
    config.validate()
    if not triples:
        raise TrainerError("no training triples")
    if val_triples is None and val_fraction:
        train_triples, val_triples = split_train_val(triples, val_fraction)
    else:
        train_triples = triples
    train_samples = resolve_samples(train_triples, store, frames_per_clip)
    val_samples = resolve_samples(val_triples, store, frames_per_clip) if val_triples else None

    w_v = init.w_v.astype(np.float64)
    w_t = init.w_t.astype(np.float64)
    full = TripleBatch.from_samples(train_samples)
    if full.frames.shape[2] != w_v.shape[1]:
        raise TrainerError(
            f"vision projection expects input dim {w_v.shape[1]}, "
            f"frames have {full.frames.shape[2]}"
        )
    if full.positives.shape[1] != w_t.shape[1]:
        raise TrainerError(
            f"text projection expects input dim {w_t.shape[1]}, "
            f"texts have {full.positives.shape[1]}"
        )

    def snapshot(epoch: int) -> EpochStats:
        t_loss, t_coarse, t_fine, _ = evaluate(train_samples, (w_v, w_t), config)
        stats = EpochStats(
            epoch=epoch, train_loss=t_loss, train_coarse=t_coarse, train_fine=t_fine
        )
        if val_samples:
            v_loss, v_coarse, v_fine, v_acc = evaluate(val_samples, (w_v, w_t), config)
            stats.val_loss = v_loss
            stats.val_coarse = v_coarse
            stats.val_fine = v_fine
            stats.val_accuracy = v_acc
        return stats

    history = [snapshot(0)]
    optimizer = Adam([w_v.shape, w_t.shape], lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    n = len(train_samples)
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = perm[start : start + config.batch_size]
            if batch.size < 2:
                continue
            total, coarse, fine, d_wv, d_wt = _loss_and_gradients(
                w_v,
                w_t,
                full.frames[batch],
                full.positives[batch],
                full.negatives[batch],
                config,
            )
            if not np.isfinite(total):
                raise TrainerError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}: "
                    f"total={total}, coarse={coarse}, fine={fine}"
                )
            optimizer.step([w_v, w_t], [d_wv, d_wt])
        history.append(snapshot(epoch))

    meta = {"config": config.to_json(), "history": [h.to_json() for h in history]}
    weights = emb.ProjectionWeights(
        w_v=w_v.astype(np.float32), w_t=w_t.astype(np.float32), meta=meta
    )
    if checkpoint_path is not None:
        emb.write_fvcw(checkpoint_path, weights)
    return weights, history


class ProjectionFinetuner(BaseEstimator):
    """Estimator wrapper around :func:`train` with flat hyperparameters."""

    def __init__(
        self,
        margin: float = 5.0,
        lam: float = 0.1,
        batch_size: int = 256,
        learning_rate: float = 5e-5,
        epochs: int = 3,
        ce_form: str = CE_LOG_SOFTMAX,
        temperature: float = 1.0,
        frames_per_clip: int = DEFAULT_FRAMES_PER_CLIP,
        seed: int = 0,
        val_fraction: float = 0.1,
    ):
        self.margin = margin
        self.lam = lam
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.ce_form = ce_form
        self.temperature = temperature
        self.frames_per_clip = frames_per_clip
        self.seed = seed
        self.val_fraction = val_fraction

    def _config(self) -> LossConfig:
        config = LossConfig(
            margin=self.margin,
            lam=self.lam,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            ce_form=self.ce_form,
            temperature=self.temperature,
            seed=self.seed,
        )
        config.validate()
        return config

    def fit(
        self,
        triples: list[TripleRecord],
        y=None,
        *,
        store: emb.EmbedStore,
        init: emb.ProjectionWeights | None = None,
        val_triples: list[TripleRecord] | None = None,
    ) -> "ProjectionFinetuner":
        config = self._config()
        if not triples:
            raise TrainerError("no training triples")
        if init is None:
            d_vision = store.get_frames(triples[0].video_id).dim
            d_text = store.get_text_sentence(triples[0].positive).dim
            if d_vision != d_text:
                raise TrainerError(
                    f"no identity init possible with vision dim {d_vision} != "
                    f"text dim {d_text}; pass explicit init weights"
                )
            init = emb.identity_weights(d_vision)
        self.weights_, self.history_ = train(
            triples,
            store,
            init,
            config,
            val_triples=val_triples,
            val_fraction=None if val_triples is not None else self.val_fraction,
            frames_per_clip=self.frames_per_clip,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            raise NotFittedError("ProjectionFinetuner must be fit before use")

    def transform(self, matrix: emb.EmbeddingMatrix) -> emb.EmbeddingMatrix:
        self._check_fitted()
        return emb.project(matrix, self.weights_)

    def save(self, path) -> None:
        self._check_fitted()
        emb.write_fvcw(path, self.weights_)
