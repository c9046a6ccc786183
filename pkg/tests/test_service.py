"""Annotation collection service: assignment plan, submission, endpoints."""

import pytest
from fastapi.testclient import TestClient

from _synth import template_corpus
from factvc.corpus import AnnotationRecord, SentenceLabel
from factvc.service import (
    AnnotationStore,
    ServiceError,
    STATUS_PENDING,
    STATUS_SUBMITTED,
    create_app,
    task_id_for,
)

ANNOTATORS = ["ann-1", "ann-2", "ann-3", "ann-4"]


def make_corpus(n_videos=4):
    corpus = template_corpus(n_videos, 1, model_id="modelA")
    extra = template_corpus(n_videos, 1, model_id="modelB")
    corpus.captions.update(extra.captions)
    return corpus


def make_store(tmp_path, corpus=None, per_caption=3, seed=0, **kwargs):
    corpus = corpus or make_corpus()
    return AnnotationStore(
        corpus, tmp_path / "anno", ANNOTATORS, per_caption=per_caption, seed=seed, **kwargs
    )


def record_for(store, task, score=5, factual=True):
    labels = [
        SentenceLabel(factual=factual, error_spans=[] if factual else [(0, 2)])
        for _ in store.corpus.captions[(task.video_id, task.model_id)].sentences
    ]
    return AnnotationRecord(
        annotator_id=task.annotator_id,
        video_id=task.video_id,
        model_id=task.model_id,
        paragraph_score=score,
        sentence_labels=labels,
    )


class TestAssignmentPlan:
    def test_every_caption_covered_per_caption_times(self, tmp_path):
        store = make_store(tmp_path)
        per_key = {}
        for task in store.tasks:
            per_key.setdefault((task.video_id, task.model_id), set()).add(task.annotator_id)
        assert len(per_key) == 8
        assert all(len(who) == 3 for who in per_key.values())

    def test_balanced_round_robin(self, tmp_path):
        store = make_store(tmp_path)
        sizes = {a: len(q) for a, q in store.queues.items()}
        # 8 captions x 3 assignments over 4 annotators.
        assert sum(sizes.values()) == 24
        assert max(sizes.values()) - min(sizes.values()) == 0

    def test_deterministic_in_seed(self, tmp_path):
        a = make_store(tmp_path / "a", seed=7)
        b = make_store(tmp_path / "b", seed=7)
        assert [(t.task_id, t.order) for t in a.tasks] == [
            (t.task_id, t.order) for t in b.tasks
        ]
        # A different seed covers the same tasks in a different order.
        c = make_store(tmp_path / "c", seed=8)
        assert {t.task_id for t in a.tasks} == {t.task_id for t in c.tasks}
        assert [(t.task_id, t.order) for t in a.tasks] != [
            (t.task_id, t.order) for t in c.tasks
        ]

    def test_plan_survives_restart(self, tmp_path):
        first = make_store(tmp_path)
        again = make_store(tmp_path)
        assert [
            (t.task_id, t.order) for t in sorted(first.tasks, key=lambda t: t.task_id)
        ] == [(t.task_id, t.order) for t in sorted(again.tasks, key=lambda t: t.task_id)]

    def test_validations(self, tmp_path):
        from factvc.corpus import Corpus

        with pytest.raises(ServiceError, match="no captions"):
            AnnotationStore(Corpus(), tmp_path / "x", ANNOTATORS)
        with pytest.raises(ServiceError, match="unique"):
            AnnotationStore(make_corpus(), tmp_path / "y", ["a", "a"])
        with pytest.raises(ServiceError, match="per_caption"):
            make_store(tmp_path, per_caption=9)


class TestSubmission:
    def test_next_task_until_done(self, tmp_path):
        store = make_store(tmp_path)
        annotator = ANNOTATORS[0]
        seen = []
        while (task := store.next_task(annotator)) is not None:
            seen.append(task.task_id)
            store.submit(record_for(store, task))
        assert len(seen) == len(store.queues[annotator])
        assert len(set(seen)) == len(seen)

    def test_next_task_is_stable_until_submit(self, tmp_path):
        store = make_store(tmp_path)
        t1 = store.next_task(ANNOTATORS[0])
        t2 = store.next_task(ANNOTATORS[0])
        assert t1.task_id == t2.task_id

    def test_unknown_annotator(self, tmp_path):
        store = make_store(tmp_path)
        with pytest.raises(ServiceError, match="unknown annotator"):
            store.next_task("ghost")

    def test_submit_decrements_remaining(self, tmp_path):
        store = make_store(tmp_path)
        task = store.next_task(ANNOTATORS[0])
        total = len(store.queues[ANNOTATORS[0]])
        remaining = store.submit(record_for(store, task))
        assert remaining == total - 1
        assert task.status == STATUS_SUBMITTED

    def test_resubmission_wins_and_is_logged(self, tmp_path, caplog):
        store = make_store(tmp_path)
        task = store.next_task(ANNOTATORS[0])
        store.submit(record_for(store, task, score=5))
        with caplog.at_level("INFO", logger="factvc.service"):
            remaining = store.submit(record_for(store, task, score=2, factual=False))
        assert "superseded" in caplog.text
        assert store.submitted[task.task_id].paragraph_score == 2
        # Remaining count unchanged by a resubmission.
        assert remaining == len(store.queues[ANNOTATORS[0]]) - 1

    def test_replay_after_restart(self, tmp_path):
        store = make_store(tmp_path)
        task = store.next_task(ANNOTATORS[0])
        store.submit(record_for(store, task, score=4))
        task2 = store.next_task(ANNOTATORS[1])
        store.submit(record_for(store, task2, score=3))
        store.submit(record_for(store, task, score=2))  # resubmission

        revived = make_store(tmp_path)
        assert revived.submitted[task.task_id].paragraph_score == 2
        assert revived.submitted[task2.task_id].paragraph_score == 3
        assert revived.by_task_id[task.task_id].status == STATUS_SUBMITTED
        assert revived.next_task(ANNOTATORS[0]).task_id != task.task_id

    def test_progress(self, tmp_path):
        store = make_store(tmp_path)
        task = store.next_task(ANNOTATORS[0])
        store.submit(record_for(store, task))
        progress = store.progress()
        assert progress["completed"] == 1
        assert progress["total"] == 24
        rows = {r["annotator_id"]: r for r in progress["annotators"]}
        assert rows[ANNOTATORS[0]]["completed"] == 1

    def test_completed_caption_keys(self, tmp_path):
        store = make_store(tmp_path)
        key = (store.tasks[0].video_id, store.tasks[0].model_id)
        holders = [t for t in store.tasks if (t.video_id, t.model_id) == key]
        for task in holders[:-1]:
            store.submit(record_for(store, task))
        assert store.completed_caption_keys() == []
        store.submit(record_for(store, holders[-1]))
        assert store.completed_caption_keys() == [key]

    def test_video_url_fallbacks(self, tmp_path):
        corpus = make_corpus()
        corpus.videos["v0000"].media = "file:///clips/v0000.mp4"
        store = make_store(tmp_path, corpus=corpus, video_base_url="http://cdn.test/v")
        assert store.video_url("v0000") == "file:///clips/v0000.mp4"
        assert store.video_url("v0001") == "http://cdn.test/v/v0001"
        bare = make_store(tmp_path / "bare")
        assert bare.video_url("v0001") is None


@pytest.fixture()
def client(tmp_path):
    app = create_app(make_corpus(), tmp_path / "anno", ANNOTATORS, seed=0)
    with TestClient(app) as c:
        yield c


def fetch_task(client, annotator):
    response = client.get("/api/task", params={"annotator": annotator})
    assert response.status_code == 200
    return response.json()


def submit_payload(client, task_id, annotator, n_sentences=1, **overrides):
    payload = {
        "task_id": task_id,
        "annotator_id": annotator,
        "paragraph_score": 5,
        "sentences": [{"factual": True, "error_spans": []} for _ in range(n_sentences)],
    }
    payload.update(overrides)
    return client.post("/api/annotations", json=payload)


class TestEndpoints:
    def test_task_caption_submit_flow(self, client):
        task = fetch_task(client, "ann-1")
        assert task["done"] is False
        assert task["position"] == 1

        caption = client.get(f"/api/caption/{task['task_id']}").json()
        assert caption["video_id"] == task["video_id"]
        assert caption["sentences"][0]["tokens"]

        response = submit_payload(client, task["task_id"], "ann-1")
        assert response.status_code == 200
        body = response.json()
        assert body["ok"] is True
        assert body["remaining"] == task["total"] - 1

        next_task = fetch_task(client, "ann-1")
        assert next_task["task_id"] != task["task_id"]
        assert next_task["position"] == 2

    def test_caption_payload_never_reveals_model(self, client):
        # Annotators must not see which system wrote the caption.
        task = fetch_task(client, "ann-1")
        caption = client.get(f"/api/caption/{task['task_id']}").json()
        assert "model_id" not in caption
        assert "model_id" not in task

    def test_unknown_annotator_404(self, client):
        response = client.get("/api/task", params={"annotator": "ghost"})
        assert response.status_code == 404

    def test_unknown_task_404(self, client):
        assert client.get("/api/caption/beef00000000").status_code == 404
        response = submit_payload(client, "beef00000000", "ann-1")
        assert response.status_code == 404

    def test_wrong_annotator_409(self, client):
        task = fetch_task(client, "ann-1")
        response = submit_payload(client, task["task_id"], "ann-2")
        assert response.status_code == 409
        assert "ann-2" in response.json()["detail"]

    def test_validation_422(self, client):
        task = fetch_task(client, "ann-1")
        # Score outside 1..5 fails model validation.
        response = submit_payload(client, task["task_id"], "ann-1", paragraph_score=9)
        assert response.status_code == 422
        # Non-factual sentence without spans fails record validation.
        response = submit_payload(
            client,
            task["task_id"],
            "ann-1",
            sentences=[{"factual": False, "error_spans": []}],
        )
        assert response.status_code == 422
        assert "error span" in response.json()["detail"]
        # Malformed span pair.
        response = submit_payload(
            client,
            task["task_id"],
            "ann-1",
            sentences=[{"factual": False, "error_spans": [[1, 2, 3]]}],
        )
        assert response.status_code == 422

    def test_wrong_label_count_422(self, client):
        task = fetch_task(client, "ann-1")
        response = submit_payload(client, task["task_id"], "ann-1", n_sentences=3)
        assert response.status_code == 422

    def test_done_flag_after_queue_drained(self, client):
        while True:
            task = fetch_task(client, "ann-1")
            if task["done"]:
                assert task["completed"] == task["total"]
                break
            submit_payload(client, task["task_id"], "ann-1")

    def test_progress_endpoint(self, client):
        task = fetch_task(client, "ann-1")
        submit_payload(client, task["task_id"], "ann-1")
        progress = client.get("/api/progress").json()
        assert progress["completed"] == 1

    def test_agreement_endpoint_lifecycle(self, client, tmp_path):
        body = client.get("/api/agreement").json()
        assert body["status"] == "insufficient data"
        assert body["n_captions"] == 0

        # Drain every annotator with score spread so alpha is defined.
        scores = {"ann-1": 5, "ann-2": 4, "ann-3": 5, "ann-4": 3}
        for annotator, score in scores.items():
            while True:
                task = fetch_task(client, annotator)
                if task["done"]:
                    break
                submit_payload(
                    client, task["task_id"], annotator, paragraph_score=score
                )
        body = client.get("/api/agreement").json()
        assert body["status"] == "ok"
        assert body["n_captions"] == 8
        assert body["alpha_paragraph"] is not None

    def test_protocol_endpoint(self, client):
        body = client.get("/api/protocol").json()
        assert "# " in body["markdown"]
        assert "factual" in body["markdown"].lower()


class TestTaskIds:
    def test_stable_and_distinct(self):
        a = task_id_for("ann-1", "v1", "m1")
        assert a == task_id_for("ann-1", "v1", "m1")
        assert a != task_id_for("ann-2", "v1", "m1")
        assert len(a) == 12
