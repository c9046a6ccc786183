"""Data model and JSONL I/O for videos, captions, annotations, and triples.

A corpus is described by a small JSON manifest pointing at JSONL files:

    {"videos": "videos.jsonl", "captions": "captions.jsonl",
     "annotations": "annotations.jsonl", "triples": "triples.jsonl"}

All paths are resolved relative to the manifest. Every key is optional; an
empty manifest loads an empty corpus. Loaded corpora are immutable by
convention and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

# Characters peeled off chunk boundaries into their own tokens.
PUNCT_CHARS = set(".,!?;:\"'()")

TERMINAL_TOKENS = {".", "!", "?"}


class CorpusError(ValueError):
    """Schema or cross-reference failure, with file/line/field context."""

    def __init__(self, message, *, file=None, line=None, field=None):
        self.file = file
        self.line = line
        self.field = field
        prefix = ""
        if file is not None:
            prefix = str(file)
            if line is not None:
                prefix += f":{line}"
            prefix += ": "
        if field is not None:
            message = f"field '{field}': {message}"
        super().__init__(prefix + message)


def tokenize(raw: str) -> list[str]:
    """Split text into word tokens.

    Whitespace separates chunks; leading and trailing punctuation characters
    of each chunk become tokens of their own. Case is preserved. Internal
    punctuation (e.g. "don't") stays attached.
    """
    tokens = []
    for chunk in raw.split():
        head = []
        tail = []
        start, end = 0, len(chunk)
        while start < end and chunk[start] in PUNCT_CHARS:
            head.append(chunk[start])
            start += 1
        while end > start and chunk[end - 1] in PUNCT_CHARS:
            tail.append(chunk[end - 1])
            end -= 1
        tokens.extend(head)
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(reversed(tail))
    return tokens


def detokenize(tokens: list[str]) -> str:
    """Inverse of :func:`tokenize` up to canonical spacing.

    ``tokenize(detokenize(tokens)) == tokens`` for any token list produced
    by ``tokenize``.
    """
    return " ".join(tokens)


@dataclass
class SentenceText:
    raw: str
    tokens: list[str]

    @classmethod
    def from_raw(cls, raw: str) -> "SentenceText":
        return cls(raw=raw, tokens=tokenize(raw))

    def validate(self):
        if self.tokens != tokenize(self.raw):
            raise CorpusError("tokens do not match tokenize(raw)", field="tokens")


@dataclass
class VideoRef:
    video_id: str
    duration_s: float | None = None
    clips: list[tuple[float, float]] | None = None
    frame_count: int = 0
    media: str | None = None  # optional path to a video file or frame directory

    def validate(self):
        if not self.video_id:
            raise CorpusError("video_id must be non-empty", field="video_id")
        if self.clips is not None:
            for i, (start, end) in enumerate(self.clips):
                if not start < end:
                    raise CorpusError(
                        f"clip {i} has start {start} >= end {end}", field="clips"
                    )
                if self.duration_s is not None and not (0 <= start and end <= self.duration_s):
                    raise CorpusError(
                        f"clip {i} [{start}, {end}] outside [0, {self.duration_s}]",
                        field="clips",
                    )
        if self.frame_count < 0:
            raise CorpusError("frame_count must be >= 0", field="frame_count")


@dataclass
class CaptionDoc:
    video_id: str
    model_id: str
    sentences: list[SentenceText]

    def validate(self):
        if not self.sentences:
            raise CorpusError("caption must have at least one sentence", field="sentences")
        for sent in self.sentences:
            sent.validate()

    @property
    def key(self) -> tuple[str, str]:
        return (self.video_id, self.model_id)


@dataclass
class SentenceLabel:
    factual: bool
    error_spans: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class AnnotationRecord:
    annotator_id: str
    video_id: str
    model_id: str
    paragraph_score: int
    sentence_labels: list[SentenceLabel]

    def validate(self, caption: CaptionDoc | None = None):
        if not 1 <= self.paragraph_score <= 5:
            raise CorpusError(
                f"paragraph_score {self.paragraph_score} outside [1, 5]",
                field="paragraph_score",
            )
        for i, label in enumerate(self.sentence_labels):
            spans = sorted(label.error_spans)
            for start, end in spans:
                if not 0 <= start < end:
                    raise CorpusError(
                        f"sentence {i}: span [{start}, {end}) is empty or negative",
                        field="sentences",
                    )
            for (_, prev_end), (next_start, _) in zip(spans, spans[1:]):
                if next_start < prev_end:
                    raise CorpusError(
                        f"sentence {i}: overlapping error spans", field="sentences"
                    )
            if label.factual and label.error_spans:
                raise CorpusError(
                    f"sentence {i}: factual sentence must have no error spans",
                    field="sentences",
                )
            if not label.factual and not label.error_spans:
                raise CorpusError(
                    f"sentence {i}: non-factual sentence needs at least one error span",
                    field="sentences",
                )
        if caption is not None:
            if len(self.sentence_labels) != len(caption.sentences):
                raise CorpusError(
                    f"{len(self.sentence_labels)} sentence labels for a "
                    f"{len(caption.sentences)}-sentence caption",
                    field="sentences",
                )
            for i, label in enumerate(self.sentence_labels):
                n_tokens = len(caption.sentences[i].tokens)
                for start, end in label.error_spans:
                    if end > n_tokens:
                        raise CorpusError(
                            f"sentence {i}: span [{start}, {end}) exceeds "
                            f"{n_tokens} tokens",
                            field="sentences",
                        )

    @property
    def key(self) -> tuple[str, str]:
        return (self.video_id, self.model_id)


@dataclass
class GoldAnnotation:
    """Panel consensus for one caption. True flags mean factual."""

    paragraph_score: int
    sentence_labels: list[bool]
    word_flags: list[list[bool]]

    @property
    def sentence_ratio(self) -> float:
        return sum(self.sentence_labels) / len(self.sentence_labels)

    @property
    def word_ratio(self) -> float:
        total = sum(len(flags) for flags in self.word_flags)
        return sum(sum(flags) for flags in self.word_flags) / total


@dataclass
class TripleRecord:
    """One weak-supervision sample: a video, a fact-consistent text, a corrupted one."""

    video_id: str
    positive: str
    negative: str
    negative_transform: str
    positive_transforms: list[str] = field(default_factory=list)
    clip_index: int | None = None

    NEGATIVE_FAMILIES = (
        "person_swap",
        "action_swap",
        "object_swap",
        "adjective_swap",
        "poor_generation",
    )

    def validate(self, video: VideoRef | None = None):
        if self.positive == self.negative:
            raise CorpusError("positive and negative texts are identical", field="negative")
        if self.negative_transform not in self.NEGATIVE_FAMILIES:
            raise CorpusError(
                f"unknown negative transform '{self.negative_transform}'",
                field="negative_transform",
            )
        if video is not None and self.clip_index is not None and video.clips is not None:
            if not 0 <= self.clip_index < len(video.clips):
                raise CorpusError(
                    f"clip_index {self.clip_index} out of range for "
                    f"{len(video.clips)} clips",
                    field="clip_index",
                )


@dataclass
class Corpus:
    videos: dict[str, VideoRef] = field(default_factory=dict)
    captions: dict[tuple[str, str], CaptionDoc] = field(default_factory=dict)
    annotations: list[AnnotationRecord] = field(default_factory=list)
    triples: list[TripleRecord] = field(default_factory=list)
    gold: dict[tuple[str, str], GoldAnnotation] = field(default_factory=dict)

    def caption(self, video_id: str, model_id: str) -> CaptionDoc:
        try:
            return self.captions[(video_id, model_id)]
        except KeyError:
            raise CorpusError(f"no caption for ({video_id}, {model_id})") from None

    def captions_for_model(self, model_id: str) -> list[CaptionDoc]:
        return [c for c in self.captions.values() if c.model_id == model_id]

    def annotations_for(self, video_id: str, model_id: str) -> list[AnnotationRecord]:
        return [a for a in self.annotations if a.key == (video_id, model_id)]


# ---------------------------------------------------------------------------
# JSONL (de)serialization
# ---------------------------------------------------------------------------


def _read_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON: {exc}", file=path, line=lineno) from None
            if not isinstance(obj, dict):
                raise CorpusError("record must be a JSON object", file=path, line=lineno)
            yield lineno, obj


def _require(obj: dict, key: str, types, path, lineno):
    if key not in obj:
        raise CorpusError("missing required field", file=path, line=lineno, field=key)
    value = obj[key]
    if not isinstance(value, types):
        raise CorpusError(
            f"expected {types if not isinstance(types, tuple) else '/'.join(t.__name__ for t in types)},"
            f" got {type(value).__name__}",
            file=path,
            line=lineno,
            field=key,
        )
    return value


def _video_from_json(obj: dict, path, lineno) -> VideoRef:
    video_id = _require(obj, "video_id", str, path, lineno)
    duration = obj.get("duration_s")
    if duration is not None and not isinstance(duration, (int, float)):
        raise CorpusError("duration_s must be a number", file=path, line=lineno, field="duration_s")
    clips = obj.get("clips")
    if clips is not None:
        if not isinstance(clips, list) or not all(
            isinstance(c, list) and len(c) == 2 and all(isinstance(x, (int, float)) for x in c)
            for c in clips
        ):
            raise CorpusError(
                "clips must be a list of [start, end] pairs", file=path, line=lineno, field="clips"
            )
        clips = [(float(s), float(e)) for s, e in clips]
    frame_count = obj.get("frame_count", 0)
    if not isinstance(frame_count, int) or isinstance(frame_count, bool):
        raise CorpusError("frame_count must be an integer", file=path, line=lineno, field="frame_count")
    media = obj.get("media")
    video = VideoRef(
        video_id=video_id,
        duration_s=float(duration) if duration is not None else None,
        clips=clips,
        frame_count=frame_count,
        media=media,
    )
    try:
        video.validate()
    except CorpusError as exc:
        raise CorpusError(str(exc), file=path, line=lineno) from None
    return video


def _video_to_json(video: VideoRef) -> dict:
    obj = {"video_id": video.video_id}
    if video.duration_s is not None:
        obj["duration_s"] = video.duration_s
    if video.clips is not None:
        obj["clips"] = [[s, e] for s, e in video.clips]
    if video.frame_count:
        obj["frame_count"] = video.frame_count
    if video.media is not None:
        obj["media"] = video.media
    return obj


def _caption_from_json(obj: dict, path, lineno) -> CaptionDoc:
    video_id = _require(obj, "video_id", str, path, lineno)
    model_id = _require(obj, "model_id", str, path, lineno)
    sentences = _require(obj, "sentences", list, path, lineno)
    if not all(isinstance(s, str) for s in sentences):
        raise CorpusError("sentences must be strings", file=path, line=lineno, field="sentences")
    doc = CaptionDoc(
        video_id=video_id,
        model_id=model_id,
        sentences=[SentenceText.from_raw(s) for s in sentences],
    )
    try:
        doc.validate()
    except CorpusError as exc:
        raise CorpusError(str(exc), file=path, line=lineno) from None
    return doc


def _caption_to_json(doc: CaptionDoc) -> dict:
    return {
        "video_id": doc.video_id,
        "model_id": doc.model_id,
        "sentences": [s.raw for s in doc.sentences],
    }


def annotation_from_json(obj: dict, path=None, lineno=None) -> AnnotationRecord:
    annotator_id = _require(obj, "annotator_id", str, path, lineno)
    video_id = _require(obj, "video_id", str, path, lineno)
    model_id = _require(obj, "model_id", str, path, lineno)
    score = _require(obj, "paragraph_score", int, path, lineno)
    if isinstance(score, bool):
        raise CorpusError("paragraph_score must be an integer", file=path, line=lineno, field="paragraph_score")
    sentences = _require(obj, "sentences", list, path, lineno)
    labels = []
    for i, item in enumerate(sentences):
        if not isinstance(item, dict) or "factual" not in item:
            raise CorpusError(
                f"sentence {i} must be an object with 'factual'",
                file=path,
                line=lineno,
                field="sentences",
            )
        spans = item.get("error_spans", [])
        if not isinstance(spans, list) or not all(
            isinstance(sp, list) and len(sp) == 2 and all(isinstance(x, int) for x in sp)
            for sp in spans
        ):
            raise CorpusError(
                f"sentence {i}: error_spans must be [start, end] integer pairs",
                file=path,
                line=lineno,
                field="sentences",
            )
        labels.append(
            SentenceLabel(factual=bool(item["factual"]), error_spans=[(s, e) for s, e in spans])
        )
    record = AnnotationRecord(
        annotator_id=annotator_id,
        video_id=video_id,
        model_id=model_id,
        paragraph_score=score,
        sentence_labels=labels,
    )
    try:
        record.validate()
    except CorpusError as exc:
        raise CorpusError(str(exc), file=path, line=lineno) from None
    return record


def annotation_to_json(record: AnnotationRecord) -> dict:
    return {
        "annotator_id": record.annotator_id,
        "video_id": record.video_id,
        "model_id": record.model_id,
        "paragraph_score": record.paragraph_score,
        "sentences": [
            {"factual": label.factual, "error_spans": [[s, e] for s, e in label.error_spans]}
            for label in record.sentence_labels
        ],
    }


def _triple_from_json(obj: dict, path, lineno) -> TripleRecord:
    record = TripleRecord(
        video_id=_require(obj, "video_id", str, path, lineno),
        positive=_require(obj, "positive", str, path, lineno),
        negative=_require(obj, "negative", str, path, lineno),
        negative_transform=_require(obj, "negative_transform", str, path, lineno),
        positive_transforms=list(obj.get("positive_transforms", [])),
        clip_index=obj.get("clip_index"),
    )
    try:
        record.validate()
    except CorpusError as exc:
        raise CorpusError(str(exc), file=path, line=lineno) from None
    return record


def triple_to_json(record: TripleRecord) -> dict:
    return {
        "video_id": record.video_id,
        "clip_index": record.clip_index,
        "positive": record.positive,
        "negative": record.negative,
        "positive_transforms": record.positive_transforms,
        "negative_transform": record.negative_transform,
    }


def load_corpus(manifest_path: str | Path) -> Corpus:
    """Load and cross-validate a corpus described by a manifest file."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"invalid manifest JSON: {exc}", file=manifest_path) from None
    if not isinstance(manifest, dict):
        raise CorpusError("manifest must be a JSON object", file=manifest_path)
    base = manifest_path.parent
    corpus = Corpus()

    if "videos" in manifest:
        path = base / manifest["videos"]
        for lineno, obj in _read_jsonl(path):
            video = _video_from_json(obj, path, lineno)
            if video.video_id in corpus.videos:
                raise CorpusError(
                    f"duplicate video_id '{video.video_id}'", file=path, line=lineno
                )
            corpus.videos[video.video_id] = video

    if "captions" in manifest:
        path = base / manifest["captions"]
        for lineno, obj in _read_jsonl(path):
            doc = _caption_from_json(obj, path, lineno)
            if doc.key in corpus.captions:
                raise CorpusError(
                    f"duplicate caption ({doc.video_id}, {doc.model_id})",
                    file=path,
                    line=lineno,
                )
            corpus.captions[doc.key] = doc

    missing = sorted({c.video_id for c in corpus.captions.values()} - set(corpus.videos))
    if missing:
        raise CorpusError(f"captions reference missing videos: {', '.join(missing)}")

    if "annotations" in manifest:
        path = base / manifest["annotations"]
        for lineno, obj in _read_jsonl(path):
            record = annotation_from_json(obj, path, lineno)
            if record.key not in corpus.captions:
                raise CorpusError(
                    f"annotation references missing caption "
                    f"({record.video_id}, {record.model_id})",
                    file=path,
                    line=lineno,
                )
            try:
                record.validate(corpus.captions[record.key])
            except CorpusError as exc:
                raise CorpusError(str(exc), file=path, line=lineno) from None
            corpus.annotations.append(record)

    if "triples" in manifest:
        path = base / manifest["triples"]
        for lineno, obj in _read_jsonl(path):
            record = _triple_from_json(obj, path, lineno)
            if record.video_id not in corpus.videos:
                raise CorpusError(
                    f"triple references missing video '{record.video_id}'",
                    file=path,
                    line=lineno,
                )
            record.validate(corpus.videos[record.video_id])
            corpus.triples.append(record)

    return corpus


def _write_jsonl(path: Path, objects):
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objects:
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def save_corpus(corpus: Corpus, directory: str | Path) -> Path:
    """Write a corpus back to JSONL files plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, str] = {}
    if corpus.videos:
        _write_jsonl(directory / "videos.jsonl", (_video_to_json(v) for v in corpus.videos.values()))
        manifest["videos"] = "videos.jsonl"
    if corpus.captions:
        _write_jsonl(
            directory / "captions.jsonl", (_caption_to_json(c) for c in corpus.captions.values())
        )
        manifest["captions"] = "captions.jsonl"
    if corpus.annotations:
        _write_jsonl(
            directory / "annotations.jsonl", (annotation_to_json(a) for a in corpus.annotations)
        )
        manifest["annotations"] = "annotations.jsonl"
    if corpus.triples:
        _write_jsonl(directory / "triples.jsonl", (triple_to_json(t) for t in corpus.triples))
        manifest["triples"] = "triples.jsonl"
    manifest_path = directory / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def load_triples(path: str | Path) -> list[TripleRecord]:
    path = Path(path)
    return [_triple_from_json(obj, path, lineno) for lineno, obj in _read_jsonl(path)]


def save_triples(triples: list[TripleRecord], path: str | Path):
    _write_jsonl(Path(path), (triple_to_json(t) for t in triples))


def load_captions(path: str | Path) -> list[CaptionDoc]:
    path = Path(path)
    docs = []
    seen = set()
    for lineno, obj in _read_jsonl(path):
        doc = _caption_from_json(obj, path, lineno)
        if doc.key in seen:
            raise CorpusError(f"duplicate caption {doc.key}", file=path, line=lineno)
        seen.add(doc.key)
        docs.append(doc)
    return docs


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    path = Path(path)
    return [annotation_from_json(obj, path, lineno) for lineno, obj in _read_jsonl(path)]


# ---------------------------------------------------------------------------
# Corpus statistics
# ---------------------------------------------------------------------------


@dataclass
class CorpusStats:
    paragraph_count: int
    sentence_count: int
    word_count: int
    pct_paragraphs_with_errors: float
    pct_sentences_with_errors: float
    pct_words_with_errors: float

    def to_json(self) -> dict:
        return {
            "paragraph_count": self.paragraph_count,
            "sentence_count": self.sentence_count,
            "word_count": self.word_count,
            "pct_paragraphs_with_errors": self.pct_paragraphs_with_errors,
            "pct_sentences_with_errors": self.pct_sentences_with_errors,
            "pct_words_with_errors": self.pct_words_with_errors,
        }


def corpus_stats(corpus: Corpus) -> CorpusStats:
    """Counts and error percentages over the aggregated gold annotations.

    A paragraph counts as having errors iff its consensus score is below 5.
    Percentages are exact rationals converted to float only at the end.
    """
    if not corpus.gold:
        raise CorpusError(
            "corpus has no gold annotations; aggregate annotator records first"
        )
    paragraphs = len(corpus.gold)
    sentences = 0
    words = 0
    bad_paragraphs = 0
    bad_sentences = 0
    bad_words = 0
    for key, gold in corpus.gold.items():
        if gold.paragraph_score < 5:
            bad_paragraphs += 1
        sentences += len(gold.sentence_labels)
        bad_sentences += sum(1 for ok in gold.sentence_labels if not ok)
        for flags in gold.word_flags:
            words += len(flags)
            bad_words += sum(1 for ok in flags if not ok)
    return CorpusStats(
        paragraph_count=paragraphs,
        sentence_count=sentences,
        word_count=words,
        pct_paragraphs_with_errors=float(100 * Fraction(bad_paragraphs, paragraphs)),
        pct_sentences_with_errors=float(100 * Fraction(bad_sentences, sentences)),
        pct_words_with_errors=float(100 * Fraction(bad_words, words)),
    )
