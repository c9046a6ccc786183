"""HTTP service for collecting blind caption annotations.

Each caption is assigned to a fixed number of annotators round-robin; every
annotator works through their queue in a per-annotator shuffled order, so
neither system identity nor system order leaks. Responses never contain
model ids. Submitted annotations append to a JSONL file in the corpus
schema (these allow later reloads with the regular corpus loader), and the
service replays that file on startup, so restarts lose nothing.

Endpoints (all JSON):

* ``GET  /api/task?annotator=ID`` -- the annotator's next open task
* ``GET  /api/caption/{task_id}`` -- sentences and video pointer for a task
* ``POST /api/annotations``      -- submit one completed task
* ``GET  /api/progress``         -- per-annotator and overall counts
* ``GET  /api/agreement``        -- live agreement over fully-collected captions
* ``GET  /api/protocol``         -- the annotation guide, markdown
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .analysis import AgreementReport, compute_agreement
from .corpus import (
    AnnotationRecord,
    Corpus,
    CorpusError,
    SentenceLabel,
    annotation_from_json,
    annotation_to_json,
)

log = logging.getLogger(__name__)

STATUS_PENDING = "pending"
STATUS_SUBMITTED = "submitted"


class ServiceError(ValueError):
    pass


def task_id_for(annotator_id: str, video_id: str, model_id: str) -> str:
    digest = hashlib.sha1(f"{annotator_id}|{video_id}|{model_id}".encode("utf-8"))
    return digest.hexdigest()[:12]


@dataclass
class TaskAssignment:
    task_id: str
    annotator_id: str
    video_id: str
    model_id: str
    order: int
    status: str = STATUS_PENDING


class AnnotationStore:
    """Assignment plan plus submitted annotations, both persisted as JSONL."""

    def __init__(
        self,
        corpus: Corpus,
        store_dir: str | Path,
        annotators: list[str],
        per_caption: int = 3,
        seed: int = 0,
        video_base_url: str | None = None,
    ):
        if not corpus.captions:
            raise ServiceError("corpus has no captions to annotate")
        if len(set(annotators)) != len(annotators) or not annotators:
            raise ServiceError("annotators must be a non-empty list of unique ids")
        if not 1 <= per_caption <= len(annotators):
            raise ServiceError(
                f"per_caption must be in [1, {len(annotators)}], got {per_caption}"
            )
        self.corpus = corpus
        self.annotators = list(annotators)
        self.per_caption = per_caption
        self.seed = seed
        self.video_base_url = video_base_url
        self.store_dir = Path(store_dir)
        self.store_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

        self.assignments_path = self.store_dir / "assignments.jsonl"
        self.annotations_path = self.store_dir / "annotations.jsonl"
        if self.assignments_path.exists():
            self.tasks = self._load_assignments()
        else:
            self.tasks = self._build_assignments()
            self._write_assignments()

        self.by_task_id = {t.task_id: t for t in self.tasks}
        self.queues: dict[str, list[TaskAssignment]] = {a: [] for a in self.annotators}
        for task in self.tasks:
            if task.annotator_id not in self.queues:
                raise ServiceError(
                    f"assignment references unknown annotator '{task.annotator_id}'"
                )
            self.queues[task.annotator_id].append(task)
        for queue in self.queues.values():
            queue.sort(key=lambda t: t.order)

        self.submitted: dict[str, AnnotationRecord] = {}
        self._replay_annotations()

    # -- assignment plan ----------------------------------------------------

    def _build_assignments(self) -> list[TaskAssignment]:
        caption_keys = sorted(self.corpus.captions)
        n_annotators = len(self.annotators)
        per_annotator: dict[str, list[tuple[str, str]]] = {a: [] for a in self.annotators}
        for index, key in enumerate(caption_keys):
            for j in range(self.per_caption):
                annotator = self.annotators[(index + j) % n_annotators]
                per_annotator[annotator].append(key)
        tasks = []
        for a_index, annotator in enumerate(self.annotators):
            keys = per_annotator[annotator]
            rng = np.random.default_rng([self.seed, a_index])
            for order, k in enumerate(rng.permutation(len(keys))):
                video_id, model_id = keys[int(k)]
                tasks.append(
                    TaskAssignment(
                        task_id=task_id_for(annotator, video_id, model_id),
                        annotator_id=annotator,
                        video_id=video_id,
                        model_id=model_id,
                        order=order,
                    )
                )
        return tasks

    def _write_assignments(self):
        with open(self.assignments_path, "w", encoding="utf-8") as fh:
            for task in sorted(self.tasks, key=lambda t: (t.annotator_id, t.order)):
                fh.write(
                    json.dumps(
                        {
                            "task_id": task.task_id,
                            "annotator_id": task.annotator_id,
                            "video_id": task.video_id,
                            "model_id": task.model_id,
                            "order": task.order,
                        }
                    )
                    + "\n"
                )

    def _load_assignments(self) -> list[TaskAssignment]:
        tasks = []
        with open(self.assignments_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                task = TaskAssignment(
                    task_id=obj["task_id"],
                    annotator_id=obj["annotator_id"],
                    video_id=obj["video_id"],
                    model_id=obj["model_id"],
                    order=int(obj["order"]),
                )
                if (task.video_id, task.model_id) not in self.corpus.captions:
                    raise ServiceError(
                        f"{self.assignments_path}:{lineno}: assignment references "
                        f"missing caption ({task.video_id}, {task.model_id})"
                    )
                tasks.append(task)
        if not tasks:
            raise ServiceError(f"{self.assignments_path} exists but holds no tasks")
        return tasks

    # -- annotations --------------------------------------------------------

    def _replay_annotations(self):
        if not self.annotations_path.exists():
            return
        with open(self.annotations_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                record = annotation_from_json(
                    json.loads(line), self.annotations_path, lineno
                )
                task_id = task_id_for(record.annotator_id, record.video_id, record.model_id)
                task = self.by_task_id.get(task_id)
                if task is None:
                    raise ServiceError(
                        f"{self.annotations_path}:{lineno}: annotation does not match "
                        f"any assigned task"
                    )
                self.submitted[task_id] = record
                task.status = STATUS_SUBMITTED

    def next_task(self, annotator_id: str) -> TaskAssignment | None:
        if annotator_id not in self.queues:
            raise ServiceError(f"unknown annotator '{annotator_id}'")
        for task in self.queues[annotator_id]:
            if task.status == STATUS_PENDING:
                return task
        return None

    def submit(self, record: AnnotationRecord) -> int:
        """Persist one record (latest submission per task wins); returns the
        annotator's remaining task count."""
        task_id = task_id_for(record.annotator_id, record.video_id, record.model_id)
        with self._lock:
            record.validate(self.corpus.captions[(record.video_id, record.model_id)])
            with open(self.annotations_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(annotation_to_json(record)) + "\n")
            if task_id in self.submitted:
                log.info(
                    "task %s resubmitted by %s; earlier record superseded",
                    task_id,
                    record.annotator_id,
                )
            self.submitted[task_id] = record
            self.by_task_id[task_id].status = STATUS_SUBMITTED
        return sum(
            1 for t in self.queues[record.annotator_id] if t.status == STATUS_PENDING
        )

    def progress(self) -> dict:
        per_annotator = []
        for annotator in self.annotators:
            queue = self.queues[annotator]
            completed = sum(1 for t in queue if t.task_id in self.submitted)
            per_annotator.append(
                {"annotator_id": annotator, "completed": completed, "total": len(queue)}
            )
        return {
            "annotators": per_annotator,
            "completed": len(self.submitted),
            "total": len(self.tasks),
        }

    def completed_caption_keys(self) -> list[tuple[str, str]]:
        """Captions for which every assigned annotator has submitted."""
        assigned: dict[tuple[str, str], set[str]] = {}
        done: dict[tuple[str, str], set[str]] = {}
        for task in self.tasks:
            key = (task.video_id, task.model_id)
            assigned.setdefault(key, set()).add(task.annotator_id)
            if task.task_id in self.submitted:
                done.setdefault(key, set()).add(task.annotator_id)
        return sorted(key for key, who in assigned.items() if done.get(key) == who)

    def video_url(self, video_id: str) -> str | None:
        video = self.corpus.videos.get(video_id)
        if video is not None and video.media:
            return video.media
        if self.video_base_url:
            return f"{self.video_base_url.rstrip('/')}/{video_id}"
        return None


class SentenceLabelIn(BaseModel):
    factual: bool
    error_spans: list[list[int]] = Field(default_factory=list)


class AnnotationIn(BaseModel):
    task_id: str
    annotator_id: str
    paragraph_score: int = Field(ge=1, le=5)
    sentences: list[SentenceLabelIn]


def protocol_markdown() -> str:
    return (resources.files("factvc") / "data" / "protocol.md").read_text(encoding="utf-8")


def create_app(
    corpus: Corpus,
    store_dir: str | Path,
    annotators: list[str],
    per_caption: int = 3,
    seed: int = 0,
    video_base_url: str | None = None,
) -> FastAPI:
    store = AnnotationStore(
        corpus,
        store_dir,
        annotators,
        per_caption=per_caption,
        seed=seed,
        video_base_url=video_base_url,
    )
    app = FastAPI(title="caption annotation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.store = store

    @app.get("/api/task")
    def get_task(annotator: str):
        try:
            task = store.next_task(annotator)
        except ServiceError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None
        queue = store.queues[annotator]
        completed = sum(1 for t in queue if t.status == STATUS_SUBMITTED)
        if task is None:
            return {"done": True, "completed": completed, "total": len(queue)}
        return {
            "done": False,
            "task_id": task.task_id,
            "video_id": task.video_id,
            "position": completed + 1,
            "total": len(queue),
        }

    @app.get("/api/caption/{task_id}")
    def get_caption(task_id: str):
        task = store.by_task_id.get(task_id)
        if task is None:
            raise HTTPException(status_code=404, detail=f"unknown task '{task_id}'")
        caption = store.corpus.captions[(task.video_id, task.model_id)]
        return {
            "task_id": task.task_id,
            "video_id": task.video_id,
            "video_url": store.video_url(task.video_id),
            "sentences": [
                {"index": i, "raw": s.raw, "tokens": s.tokens}
                for i, s in enumerate(caption.sentences)
            ],
        }

    @app.post("/api/annotations")
    def post_annotation(payload: AnnotationIn):
        task = store.by_task_id.get(payload.task_id)
        if task is None:
            raise HTTPException(status_code=404, detail=f"unknown task '{payload.task_id}'")
        if payload.annotator_id != task.annotator_id:
            raise HTTPException(
                status_code=409,
                detail=f"annotator '{payload.annotator_id}' holds no open assignment "
                f"for task '{payload.task_id}'",
            )
        for i, sent in enumerate(payload.sentences):
            for span in sent.error_spans:
                if len(span) != 2:
                    raise HTTPException(
                        status_code=422,
                        detail=f"sentence {i}: error span must be a [start, end) pair",
                    )
        record = AnnotationRecord(
            annotator_id=task.annotator_id,
            video_id=task.video_id,
            model_id=task.model_id,
            paragraph_score=payload.paragraph_score,
            sentence_labels=[
                SentenceLabel(
                    factual=s.factual, error_spans=[(a, b) for a, b in s.error_spans]
                )
                for s in payload.sentences
            ],
        )
        try:
            remaining = store.submit(record)
        except CorpusError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return {"ok": True, "task_id": payload.task_id, "remaining": remaining}

    @app.get("/api/progress")
    def get_progress():
        return store.progress()

    @app.get("/api/agreement")
    def get_agreement():
        keys = store.completed_caption_keys()
        records = [
            r
            for r in store.submitted.values()
            if (r.video_id, r.model_id) in set(keys)
        ]
        sub = Corpus(
            videos=store.corpus.videos,
            captions=store.corpus.captions,
            annotations=records,
        )
        report = (
            compute_agreement(sub) if records else AgreementReport(None, None, None)
        )
        if report.insufficient:
            return {"status": "insufficient data", "n_captions": len(keys)}
        return {"status": "ok", "n_captions": len(keys), **report.to_json()}

    @app.get("/api/protocol")
    def get_protocol():
        return {"markdown": protocol_markdown()}

    return app
