"""Batch export of frame and text features for one corpus.

For every video the job samples frame timestamps per clip, featurizes the
frame references, and writes ``{video_id}.frames.fvce`` plus
``{video_id}.clips.json`` mapping clips to frame-row ranges. For every
caption sentence it writes ``{video_id}.{model_id}.{idx}.sent.fvce`` and
``{video_id}.{model_id}.{idx}.tok.fvce``. The variant's original projection
heads go to ``proj.fvcw`` once, and ``manifest.json`` indexes everything,
including the raw text behind each sentence file so consumers can key
embeddings by content.

A video that cannot be sampled (no clips and no positive duration) is
skipped with a logged id; its captions still export, since the text side
needs no decoding. All outputs are deterministic: re-running a job yields
byte-identical files.
"""

from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import DEFAULT_VARIANT, EncoderVariant, HashEncoder
from .fvcio import (
    KIND_FRAMES_PRE,
    KIND_SENTENCE_PRE,
    KIND_TOKENS_PRE,
    read_matrix,
    write_matrix_bytes,
    write_projection,
)
from .manifest import ExportCorpus, Video, read_corpus, word_tokens

log = logging.getLogger(__name__)

PROJECTION_FILE = "proj.fvcw"
MANIFEST_FILE = "manifest.json"

_SAFE_ID = re.compile(r"^[A-Za-z0-9_-]+$")


class ExportError(ValueError):
    pass


class DecodeError(ExportError):
    """A video that offers nothing to sample frames from."""


@dataclass
class ExportJob:
    """One export run: corpus in, FVCE files out.

    Exactly one sampling rule applies: ``fps`` frames per second of clip
    time, or a fixed ``frames_per_clip``. With neither given, ``fps``
    defaults to 1.0.
    """

    manifest: str | Path
    out_dir: str | Path
    variant: str = DEFAULT_VARIANT
    fps: float | None = None
    frames_per_clip: int | None = None

    def __post_init__(self):
        if self.fps is not None and self.frames_per_clip is not None:
            raise ExportError("give either fps or frames_per_clip, not both")
        if self.fps is None and self.frames_per_clip is None:
            self.fps = 1.0
        if self.fps is not None and not self.fps > 0:
            raise ExportError(f"fps must be positive, got {self.fps}")
        if self.frames_per_clip is not None and self.frames_per_clip < 1:
            raise ExportError(f"frames_per_clip must be >= 1, got {self.frames_per_clip}")

    def sampling(self) -> dict:
        if self.frames_per_clip is not None:
            return {"frames_per_clip": self.frames_per_clip}
        return {"fps": self.fps}


@dataclass
class ExportResult:
    out_dir: Path
    variant: EncoderVariant
    manifest_path: Path
    videos: list[dict] = field(default_factory=list)
    sentences: list[dict] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.skipped


def _check_id(role: str, value: str):
    # Pinned file naming embeds ids verbatim; reject anything unsafe on disk.
    if not _SAFE_ID.match(value):
        raise ExportError(f"{role} '{value}' is not filename-safe ([A-Za-z0-9_-] only)")


def clip_windows(video: Video) -> list[tuple[float, float]]:
    """The time windows to sample, one per clip; whole video when unclipped."""
    if video.clips:
        return list(video.clips)
    if video.duration_s is not None and video.duration_s > 0:
        return [(0.0, float(video.duration_s))]
    raise DecodeError(
        f"video '{video.video_id}' has no clips and no positive duration to sample"
    )


def sample_times(
    windows: list[tuple[float, float]],
    *,
    fps: float | None = None,
    frames_per_clip: int | None = None,
) -> list[list[float]]:
    """Frame timestamps per window: midpoints of equal slices.

    ``frames_per_clip`` takes that many frames from every window; ``fps``
    takes one frame per 1/fps of window time, at least one per window.
    """
    out = []
    for start, end in windows:
        if frames_per_clip is not None:
            n = frames_per_clip
        else:
            n = max(1, math.floor((end - start) * fps + 1e-9))
        step = (end - start) / n
        out.append([start + (i + 0.5) * step for i in range(n)])
    return out


def frame_refs(video_id: str, times: list[list[float]]) -> list[str]:
    return [f"{video_id}@{t:.3f}" for clip_times in times for t in clip_times]


def _frames_payload(video: Video, job: ExportJob, encoder: HashEncoder):
    """(manifest entry, frames bytes, clips JSON text) for one video."""
    times = sample_times(clip_windows(video), **job.sampling())
    refs = frame_refs(video.video_id, times)
    matrix = encoder.encode_frames(refs)
    ranges = []
    offset = 0
    for clip_times in times:
        ranges.append([offset, offset + len(clip_times)])
        offset += len(clip_times)
    entry = {
        "video_id": video.video_id,
        "frames": f"{video.video_id}.frames.fvce",
        "clips": f"{video.video_id}.clips.json",
        "frame_count": len(refs),
    }
    clips_text = json.dumps({"clip_frame_ranges": ranges}) + "\n"
    return entry, write_matrix_bytes(KIND_FRAMES_PRE, matrix), clips_text


def run_export(job: ExportJob, *, threads: int = 1) -> ExportResult:
    """Execute a job; returns what was written and which videos were skipped."""
    corpus = read_corpus(job.manifest)
    encoder = HashEncoder(job.variant)
    for video_id in corpus.videos:
        _check_id("video_id", video_id)
    for caption in corpus.captions:
        _check_id("model_id", caption.model_id)

    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = ExportResult(
        out_dir=out_dir, variant=encoder.variant, manifest_path=out_dir / MANIFEST_FILE
    )

    w_v, w_t = encoder.projection()
    write_projection(
        out_dir / PROJECTION_FILE,
        w_v,
        w_t,
        meta={
            "dims": encoder.dims(),
            "role": "encoder original projection heads",
            "variant": encoder.variant.name,
        },
    )

    videos = sorted(corpus.videos.values(), key=lambda v: v.video_id)

    def featurize(video: Video):
        try:
            return video.video_id, _frames_payload(video, job, encoder), None
        except DecodeError as exc:
            return video.video_id, None, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            payloads = list(pool.map(featurize, videos))
    else:
        payloads = [featurize(v) for v in videos]

    for video_id, payload, error in payloads:
        if payload is None:
            log.warning("skipping video %s: %s", video_id, error)
            result.skipped.append(video_id)
            continue
        entry, frames_bytes, clips_text = payload
        (out_dir / entry["frames"]).write_bytes(frames_bytes)
        (out_dir / entry["clips"]).write_text(clips_text, encoding="utf-8")
        result.videos.append(entry)

    for caption in sorted(corpus.captions, key=lambda c: (c.video_id, c.model_id)):
        for idx, raw in enumerate(caption.sentences):
            tokens = word_tokens(raw)
            stem = f"{caption.video_id}.{caption.model_id}.{idx}"
            sent = encoder.encode_sentences([raw])
            tok = encoder.encode_tokens(tokens)
            (out_dir / f"{stem}.sent.fvce").write_bytes(
                write_matrix_bytes(KIND_SENTENCE_PRE, sent)
            )
            (out_dir / f"{stem}.tok.fvce").write_bytes(
                write_matrix_bytes(KIND_TOKENS_PRE, tok)
            )
            result.sentences.append(
                {
                    "video_id": caption.video_id,
                    "model_id": caption.model_id,
                    "sentence_idx": idx,
                    "raw": raw,
                    "tokens": tokens,
                    "sent": f"{stem}.sent.fvce",
                    "tok": f"{stem}.tok.fvce",
                }
            )

    manifest = {
        "dims": encoder.dims(),
        "projection": PROJECTION_FILE,
        "sampling": job.sampling(),
        "sentences": result.sentences,
        "skipped": result.skipped,
        "variant": encoder.variant.name,
        "videos": result.videos,
    }
    result.manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    verify_export(result.manifest_path)
    return result


def verify_export(manifest_path: str | Path) -> dict:
    """Re-read an export and cross-check every file against declared dims.

    Returns the parsed manifest; raises :class:`ExportError` on the first
    inconsistency (wrong kind, wrong dim, row count off, bad clip ranges).
    """
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.parent
    dims = manifest["dims"]

    for entry in manifest["videos"]:
        kind, matrix = read_matrix(base / entry["frames"])
        if kind != KIND_FRAMES_PRE:
            raise ExportError(f"{entry['frames']}: kind '{kind}', expected '{KIND_FRAMES_PRE}'")
        if matrix.shape != (entry["frame_count"], dims["vision"]):
            raise ExportError(
                f"{entry['frames']}: shape {matrix.shape}, expected "
                f"({entry['frame_count']}, {dims['vision']})"
            )
        ranges = json.loads((base / entry["clips"]).read_text(encoding="utf-8"))[
            "clip_frame_ranges"
        ]
        for start, end in ranges:
            if not 0 <= start < end <= entry["frame_count"]:
                raise ExportError(f"{entry['clips']}: bad range [{start}, {end})")

    for entry in manifest["sentences"]:
        kind, sent = read_matrix(base / entry["sent"])
        if kind != KIND_SENTENCE_PRE or sent.shape != (1, dims["text"]):
            raise ExportError(
                f"{entry['sent']}: kind '{kind}' shape {sent.shape}, expected "
                f"1 x {dims['text']} '{KIND_SENTENCE_PRE}'"
            )
        kind, tok = read_matrix(base / entry["tok"])
        if kind != KIND_TOKENS_PRE or tok.shape != (len(entry["tokens"]), dims["text"]):
            raise ExportError(
                f"{entry['tok']}: kind '{kind}' shape {tok.shape}, expected "
                f"{len(entry['tokens'])} x {dims['text']} '{KIND_TOKENS_PRE}'"
            )
    return manifest
