"""Just enough corpus reading for export jobs.

A corpus manifest is a JSON object naming JSONL files relative to itself::

    {"videos": "videos.jsonl", "captions": "captions.jsonl", ...}

Exports touch only ``videos`` and ``captions``; other manifest keys are
ignored. Validation covers exactly the fields an export reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

# Characters peeled off word-chunk boundaries into their own tokens.
PUNCT_CHARS = set(".,!?;:\"'()")


class ManifestError(ValueError):
    """Bad corpus input, with file and line context in the message."""


def word_tokens(raw: str) -> list[str]:
    """Word tokens of a sentence, matching the scoring toolkit's convention.

    Whitespace separates chunks; leading and trailing punctuation characters
    of each chunk become tokens of their own, internal punctuation stays
    attached. Token embedding files must carry one row per token under this
    rule or span indices stop lining up downstream.
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


@dataclass
class Video:
    video_id: str
    duration_s: float | None = None
    clips: list[tuple[float, float]] | None = None
    media: str | None = None


@dataclass
class Caption:
    video_id: str
    model_id: str
    sentences: list[str]


@dataclass
class ExportCorpus:
    videos: dict[str, Video] = field(default_factory=dict)
    captions: list[Caption] = field(default_factory=list)


def _read_jsonl(path: Path):
    if not path.exists():
        raise ManifestError(f"{path}: file not found")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}:{lineno}: record must be a JSON object")
            yield lineno, obj


def _video_from_json(obj: dict, path: Path, lineno: int) -> Video:
    video_id = obj.get("video_id")
    if not isinstance(video_id, str) or not video_id:
        raise ManifestError(f"{path}:{lineno}: video_id must be a non-empty string")
    duration = obj.get("duration_s")
    if duration is not None and not isinstance(duration, (int, float)):
        raise ManifestError(f"{path}:{lineno}: duration_s must be a number")
    clips = obj.get("clips")
    if clips is not None:
        if not isinstance(clips, list) or not all(
            isinstance(c, list) and len(c) == 2 and all(isinstance(x, (int, float)) for x in c)
            for c in clips
        ):
            raise ManifestError(f"{path}:{lineno}: clips must be [start, end] pairs")
        for i, (start, end) in enumerate(clips):
            if not start < end:
                raise ManifestError(
                    f"{path}:{lineno}: clip {i} has start {start} >= end {end}"
                )
        clips = [(float(s), float(e)) for s, e in clips]
    return Video(
        video_id=video_id,
        duration_s=float(duration) if duration is not None else None,
        clips=clips,
        media=obj.get("media"),
    )


def _caption_from_json(obj: dict, path: Path, lineno: int) -> Caption:
    video_id = obj.get("video_id")
    model_id = obj.get("model_id")
    sentences = obj.get("sentences")
    if not isinstance(video_id, str) or not isinstance(model_id, str):
        raise ManifestError(f"{path}:{lineno}: video_id and model_id must be strings")
    if (
        not isinstance(sentences, list)
        or not sentences
        or not all(isinstance(s, str) for s in sentences)
    ):
        raise ManifestError(
            f"{path}:{lineno}: sentences must be a non-empty list of strings"
        )
    return Caption(video_id=video_id, model_id=model_id, sentences=list(sentences))


def read_corpus(manifest_path: str | Path) -> ExportCorpus:
    """Read the videos and captions named by a corpus manifest."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ManifestError(f"{manifest_path}: file not found")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest_path}: invalid manifest JSON: {exc}") from None
    if not isinstance(manifest, dict):
        raise ManifestError(f"{manifest_path}: manifest must be a JSON object")
    base = manifest_path.parent
    corpus = ExportCorpus()

    if "videos" in manifest:
        path = base / manifest["videos"]
        for lineno, obj in _read_jsonl(path):
            video = _video_from_json(obj, path, lineno)
            if video.video_id in corpus.videos:
                raise ManifestError(f"{path}:{lineno}: duplicate video_id '{video.video_id}'")
            corpus.videos[video.video_id] = video

    if "captions" in manifest:
        path = base / manifest["captions"]
        seen = set()
        for lineno, obj in _read_jsonl(path):
            caption = _caption_from_json(obj, path, lineno)
            key = (caption.video_id, caption.model_id)
            if key in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate caption {key}")
            seen.add(key)
            corpus.captions.append(caption)

    missing = sorted({c.video_id for c in corpus.captions} - set(corpus.videos))
    if missing:
        raise ManifestError(f"captions reference missing videos: {', '.join(missing)}")
    return corpus
