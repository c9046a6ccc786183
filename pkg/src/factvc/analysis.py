"""Consensus aggregation, agreement, correlation, and ranking analyses.

Gold labels come from annotator panels: the paragraph score is the strict
majority value when one exists, otherwise the lower median; a sentence or
word counts as factual only when strictly more than half of the panel says
so, so ties resolve toward "error". Inter-annotator agreement uses
Krippendorff's alpha with the interval metric at all three levels.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import stats as scipy_stats

from .augment import UNK_TOKEN, Lexicons
from .corpus import AnnotationRecord, CaptionDoc, Corpus, GoldAnnotation


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Panel aggregation
# ---------------------------------------------------------------------------


def aggregate(records: list[AnnotationRecord], caption: CaptionDoc) -> GoldAnnotation:
    """Merge one caption's annotator records into gold labels."""
    if not records:
        raise AnalysisError("no annotation records to aggregate")
    keys = {r.key for r in records}
    if len(keys) != 1:
        raise AnalysisError(f"records span multiple captions: {sorted(keys)}")
    annotators = [r.annotator_id for r in records]
    dupes = [a for a, c in Counter(annotators).items() if c > 1]
    if dupes:
        raise AnalysisError(f"duplicate annotator records: {sorted(dupes)}")
    for record in records:
        record.validate(caption)

    n = len(records)
    scores = sorted(r.paragraph_score for r in records)
    value, count = Counter(scores).most_common(1)[0]
    paragraph = value if 2 * count > n else scores[(n - 1) // 2]

    sentence_labels = []
    word_flags = []
    for i, sent in enumerate(caption.sentences):
        factual_votes = sum(1 for r in records if r.sentence_labels[i].factual)
        if 2 * factual_votes == n:
            raise AnalysisError(
                f"sentence {i}: {factual_votes}/{n} factual votes is a tie; "
                f"majority labels need an odd annotator panel"
            )
        sentence_labels.append(2 * factual_votes > n)
        flags = []
        for j in range(len(sent.tokens)):
            error_votes = sum(
                1
                for r in records
                if any(start <= j < end for start, end in r.sentence_labels[i].error_spans)
            )
            if 2 * error_votes == n:
                raise AnalysisError(
                    f"sentence {i}, token {j}: {error_votes}/{n} error votes is a "
                    f"tie; majority labels need an odd annotator panel"
                )
            flags.append(2 * (n - error_votes) > n)
        word_flags.append(flags)

    return GoldAnnotation(
        paragraph_score=paragraph, sentence_labels=sentence_labels, word_flags=word_flags
    )


def aggregate_all(corpus: Corpus, min_annotators: int = 1) -> dict[tuple[str, str], GoldAnnotation]:
    """Aggregate every caption that has enough annotations; also fills
    ``corpus.gold``."""
    gold: dict[tuple[str, str], GoldAnnotation] = {}
    by_key: dict[tuple[str, str], list[AnnotationRecord]] = {}
    for record in corpus.annotations:
        by_key.setdefault(record.key, []).append(record)
    for key, records in sorted(by_key.items()):
        if len(records) < min_annotators:
            continue
        gold[key] = aggregate(records, corpus.captions[key])
    corpus.gold = gold
    return gold


# ---------------------------------------------------------------------------
# Krippendorff's alpha (interval metric)
# ---------------------------------------------------------------------------


def krippendorff_alpha_interval(units: list[list[float | None]]) -> float:
    """Agreement over units, each a per-annotator list with None for missing.

    Units with fewer than two codings are dropped. Observed disagreement
    averages squared differences within units; expected disagreement uses
    all retained values pooled. Identical values everywhere give 1.0.
    """
    kept: list[list[float]] = []
    for unit in units:
        values = [float(v) for v in unit if v is not None]
        if len(values) >= 2:
            kept.append(values)
    if not kept:
        raise AnalysisError("need at least one unit with two codings")

    n_total = sum(len(values) for values in kept)
    observed = 0.0
    for values in kept:
        arr = np.asarray(values, dtype=np.float64)
        diffs = arr[:, None] - arr[None, :]
        observed += float((diffs**2).sum()) / (len(values) - 1)
    observed /= n_total

    pooled = np.asarray([v for values in kept for v in values], dtype=np.float64)
    # sum over ordered pairs (v, v') of (v - v')^2 equals 2n*sum(x^2) - 2*(sum x)^2
    pair_sum = 2.0 * n_total * float((pooled**2).sum()) - 2.0 * float(pooled.sum()) ** 2
    expected = pair_sum / (n_total * (n_total - 1))
    if expected == 0.0:
        return 1.0
    return 1.0 - observed / expected


def agreement_units(corpus: Corpus) -> dict[str, list[list[float | None]]]:
    """Build the three levels of agreement units from raw annotations.

    Paragraph and sentence units come straight from the records. Word
    units need the caption's token counts, so captions absent from the
    corpus contribute no word units (word alpha then reports as None).
    """
    annotators = sorted({a.annotator_id for a in corpus.annotations})
    column = {a: i for i, a in enumerate(annotators)}
    by_key: dict[tuple[str, str], list[AnnotationRecord]] = {}
    for record in corpus.annotations:
        by_key.setdefault(record.key, []).append(record)

    paragraph_units = []
    sentence_units = []
    word_units = []
    for key, records in sorted(by_key.items()):
        caption = corpus.captions.get(key)
        unit: list[float | None] = [None] * len(annotators)
        for r in records:
            unit[column[r.annotator_id]] = float(r.paragraph_score)
        paragraph_units.append(unit)
        n_sentences = (
            len(caption.sentences)
            if caption is not None
            else max(len(r.sentence_labels) for r in records)
        )
        for i in range(n_sentences):
            s_unit: list[float | None] = [None] * len(annotators)
            for r in records:
                if i < len(r.sentence_labels):
                    s_unit[column[r.annotator_id]] = (
                        1.0 if r.sentence_labels[i].factual else 0.0
                    )
            sentence_units.append(s_unit)
            if caption is None:
                continue
            for j in range(len(caption.sentences[i].tokens)):
                w_unit: list[float | None] = [None] * len(annotators)
                for r in records:
                    if i >= len(r.sentence_labels):
                        continue
                    flagged = any(
                        start <= j < end for start, end in r.sentence_labels[i].error_spans
                    )
                    w_unit[column[r.annotator_id]] = 1.0 if flagged else 0.0
                word_units.append(w_unit)
    return {"paragraph": paragraph_units, "sentence": sentence_units, "word": word_units}


@dataclass
class AgreementReport:
    """Krippendorff's alpha per level; None where nothing is pairable."""

    alpha_paragraph: float | None
    alpha_sentence: float | None
    alpha_word: float | None

    def to_json(self) -> dict:
        return {
            "alpha_paragraph": self.alpha_paragraph,
            "alpha_sentence": self.alpha_sentence,
            "alpha_word": self.alpha_word,
        }

    @property
    def insufficient(self) -> bool:
        return (
            self.alpha_paragraph is None
            and self.alpha_sentence is None
            and self.alpha_word is None
        )


def compute_agreement(corpus: Corpus) -> AgreementReport:
    """Alpha at the paragraph, sentence, and word levels over a corpus."""
    units = agreement_units(corpus)
    by_level: dict[str, float | None] = {}
    for level, level_units in units.items():
        try:
            by_level[level] = krippendorff_alpha_interval(level_units)
        except AnalysisError:
            by_level[level] = None
    return AgreementReport(
        alpha_paragraph=by_level["paragraph"],
        alpha_sentence=by_level["sentence"],
        alpha_word=by_level["word"],
    )


# ---------------------------------------------------------------------------
# Correlation with gold labels
# ---------------------------------------------------------------------------


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise AnalysisError(f"pearson needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise AnalysisError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float((dx**2).sum())
    sy = float((dy**2).sum())
    if sx == 0.0:
        raise AnalysisError("x has zero variance")
    if sy == 0.0:
        raise AnalysisError("y has zero variance")
    return float((dx * dy).sum() / np.sqrt(sx * sy))


GOLD_LEVELS = ("paragraph", "sentence", "word")


def _gold_value(gold: GoldAnnotation, level: str) -> float:
    if level == "paragraph":
        return float(gold.paragraph_score)
    if level == "sentence":
        return gold.sentence_ratio
    if level == "word":
        return gold.word_ratio
    raise AnalysisError(f"unknown gold level '{level}'")


@dataclass
class CorrelationReport:
    """Pearson r per gold level for one metric run, plus the pair count."""

    pearson_by_level: dict[str, float]
    n_captions: int

    def to_json(self) -> dict:
        return {
            "n_captions": self.n_captions,
            **{level: self.pearson_by_level[level] for level in GOLD_LEVELS},
        }


def correlate(
    metric_scores: dict[tuple[str, str], float],
    gold: dict[tuple[str, str], GoldAnnotation],
) -> CorrelationReport:
    """Pearson correlation of metric scores against each gold level, pairing
    one value per caption. Scored captions lacking gold are an error."""
    missing = sorted(set(metric_scores) - set(gold))
    if missing:
        listed = ", ".join(f"({v}, {m})" for v, m in missing[:10])
        raise AnalysisError(f"scored captions without gold annotations: {listed}")
    keys = sorted(metric_scores)
    if len(keys) < 2:
        raise AnalysisError(
            f"need at least two captions scored and annotated, got {len(keys)}"
        )
    metric = [metric_scores[k] for k in keys]
    by_level = {
        level: pearson(metric, [_gold_value(gold[k], level) for k in keys])
        for level in GOLD_LEVELS
    }
    return CorrelationReport(pearson_by_level=by_level, n_captions=len(keys))


# ---------------------------------------------------------------------------
# System-level ranking
# ---------------------------------------------------------------------------


@dataclass
class SystemRow:
    model_id: str
    metric_mean: float
    gold_mean: float
    metric_rank: float
    gold_rank: float

    @property
    def discordant(self) -> bool:
        return self.metric_rank != self.gold_rank

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "metric_mean": self.metric_mean,
            "gold_mean": self.gold_mean,
            "metric_rank": self.metric_rank,
            "gold_rank": self.gold_rank,
            "discordant": self.discordant,
        }


@dataclass
class RankingResult:
    rows: list[SystemRow]
    kendall_tau: float

    def to_json(self) -> dict:
        return {"kendall_tau": self.kendall_tau, "systems": [r.to_json() for r in self.rows]}


def system_ranking(
    metric_scores: dict[tuple[str, str], float],
    gold: dict[tuple[str, str], GoldAnnotation],
    gold_level: str = "paragraph",
) -> RankingResult:
    """Rank captioning systems by mean metric score versus mean gold label.

    Ranks are descending (1 = best, ties averaged) and the agreement between
    the two orderings is Kendall's tau over the per-system means.
    """
    keys = sorted(set(metric_scores) & set(gold))
    per_model: dict[str, list[tuple[float, float]]] = {}
    for key in keys:
        per_model.setdefault(key[1], []).append(
            (metric_scores[key], _gold_value(gold[key], gold_level))
        )
    if len(per_model) < 2:
        raise AnalysisError(f"need at least two systems to rank, got {len(per_model)}")

    model_ids = sorted(per_model)
    metric_means = np.array([np.mean([p[0] for p in per_model[m]]) for m in model_ids])
    gold_means = np.array([np.mean([p[1] for p in per_model[m]]) for m in model_ids])
    metric_ranks = scipy_stats.rankdata(-metric_means)
    gold_ranks = scipy_stats.rankdata(-gold_means)
    tau = float(scipy_stats.kendalltau(metric_means, gold_means).statistic)

    rows = [
        SystemRow(
            model_id=m,
            metric_mean=float(metric_means[i]),
            gold_mean=float(gold_means[i]),
            metric_rank=float(metric_ranks[i]),
            gold_rank=float(gold_ranks[i]),
        )
        for i, m in enumerate(model_ids)
    ]
    rows.sort(key=lambda r: r.metric_rank)
    return RankingResult(rows=rows, kendall_tau=tau)


# ---------------------------------------------------------------------------
# Error span typology
# ---------------------------------------------------------------------------

ERROR_CATEGORIES = (
    "Person",
    "Action",
    "Object",
    "Adjective",
    "PoorGeneration",
    "Other",
)


def _is_immediate_repetition(tokens: list[str], start: int, end: int) -> bool:
    span = tokens[start:end]
    length = end - start
    before = tokens[start - length : start] if start - length >= 0 else None
    after = tokens[end : end + length] if end + length <= len(tokens) else None
    return span == before or span == after


def classify_error_span(
    tokens: list[str], span: tuple[int, int], lexicons: Lexicons
) -> str:
    """Assign an error span to one category by first matching rule:
    degenerate output, then person, adjective, action, object, else other."""
    start, end = span
    if not 0 <= start < end <= len(tokens):
        raise AnalysisError(f"span [{start}, {end}) out of bounds for {len(tokens)} tokens")
    words = tokens[start:end]
    if any(t == UNK_TOKEN for t in words) or _is_immediate_repetition(tokens, start, end):
        return "PoorGeneration"
    if any(lexicons.is_person(t) for t in words):
        return "Person"
    if any(lexicons.is_color(t) or lexicons.is_numeral(t) for t in words):
        return "Adjective"
    if any(lexicons.is_action(t) for t in words):
        return "Action"
    if any(lexicons.is_object(t) for t in words):
        return "Object"
    return "Other"


def error_breakdown(
    corpus: Corpus, lexicons: Lexicons | None = None
) -> dict[str, dict[str, float]]:
    """Count annotated error spans per category, with ratios of the total."""
    lex = lexicons or Lexicons.load_default()
    counts = {category: 0 for category in ERROR_CATEGORIES}
    total = 0
    for record in corpus.annotations:
        caption = corpus.captions.get(record.key)
        if caption is None:
            raise AnalysisError(f"annotation references missing caption {record.key}")
        for i, label in enumerate(record.sentence_labels):
            for span in label.error_spans:
                category = classify_error_span(caption.sentences[i].tokens, span, lex)
                counts[category] += 1
                total += 1
    if total == 0:
        raise AnalysisError("no error spans to classify")
    return {
        category: {"count": counts[category], "ratio": counts[category] / total}
        for category in ERROR_CATEGORIES
    }


# ---------------------------------------------------------------------------
# Plain-text tables
# ---------------------------------------------------------------------------


def render_table(headers: list[str], rows: list[list]) -> str:
    """Fixed-width text table; floats get four decimals."""

    def fmt(cell):
        if isinstance(cell, bool):
            return "yes" if cell else "no"
        if isinstance(cell, float):
            return f"{cell:.4f}"
        return str(cell)

    grid = [headers] + [[fmt(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in grid) for i in range(len(headers))]
    lines = []
    for k, row in enumerate(grid):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if k == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(headers))))
    return "\n".join(lines)
