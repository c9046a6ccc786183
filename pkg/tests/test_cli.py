"""End-to-end tests for the command-line workflow.

Commands run in-process through ``cli.main`` with stdout/stderr captured,
so exit codes and printed reports are asserted directly. A module-scoped
workspace runs the expensive pipeline (gen-data, finetune, score) once;
cheap commands and failure modes run inside their own tests.
"""

import contextlib
import io
import json
from pathlib import Path

import pytest

from _synth import (
    SMALL_LEX,
    populate_store,
    template_corpus,
    triple_texts,
)
from factvc import cli
from factvc.corpus import (
    CaptionDoc,
    SentenceText,
    AnnotationRecord,
    SentenceLabel,
    detokenize,
    load_triples,
    save_corpus,
)

ANNOTATORS = ("a1", "a2", "a3")


def run(*argv):
    """Invoke the CLI in-process; returns (exit_code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main(list(argv))
    return code, out.getvalue(), err.getvalue()


def build_corpus():
    """Six videos, two sentences each; three caption systems per video.

    "m1" copies the human captions verbatim and "m2" swaps every person
    token, so m1 must outscore m2 everywhere. Each m1/m2 caption carries
    three identical annotator records (5 = factual for m1, 2 with a span
    on the swapped token for m2), giving perfect panel agreement and a
    gold signal that tracks the planted score gap.
    """
    corpus = template_corpus(6, sentences_per_video=2, model_id="human")
    for video_id in sorted(corpus.videos):
        human = corpus.captions[(video_id, "human")]
        corpus.captions[(video_id, "m1")] = CaptionDoc(
            video_id=video_id,
            model_id="m1",
            sentences=[SentenceText.from_raw(s.raw) for s in human.sentences],
        )
        swapped = [
            SentenceText.from_raw(
                detokenize([SMALL_LEX.person_pairs.get(t, t) for t in s.tokens])
            )
            for s in human.sentences
        ]
        corpus.captions[(video_id, "m2")] = CaptionDoc(
            video_id=video_id, model_id="m2", sentences=swapped
        )
        for annotator in ANNOTATORS:
            corpus.annotations.append(
                AnnotationRecord(
                    annotator_id=annotator,
                    video_id=video_id,
                    model_id="m1",
                    paragraph_score=5,
                    sentence_labels=[SentenceLabel(True) for _ in human.sentences],
                )
            )
            corpus.annotations.append(
                AnnotationRecord(
                    annotator_id=annotator,
                    video_id=video_id,
                    model_id="m2",
                    paragraph_score=2,
                    sentence_labels=[
                        SentenceLabel(False, [(1, 2)]) for _ in swapped
                    ],
                )
            )
    return corpus


def translation_table(corpus):
    """Stub round trips that swap the leading article, keeping every
    content token intact so paraphrases stay aligned with the frames."""
    table = {"en->de": {}, "de->en": {}}
    for (_, model_id), doc in corpus.captions.items():
        if model_id != "human":
            continue
        for sent in doc.sentences:
            assert sent.raw.startswith("the ")
            table["en->de"][sent.raw] = "DE::" + sent.raw
            table["de->en"]["DE::" + sent.raw] = "a " + sent.raw[4:]
    return table


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_ws")
    corpus = build_corpus()
    manifest = save_corpus(corpus, root / "corpus")
    table_path = root / "translations.json"
    table_path.write_text(json.dumps(translation_table(corpus)), encoding="utf-8")

    triples_path = root / "triples.jsonl"
    gen = run(
        "gen-data",
        "--corpus", str(manifest),
        "--model", "human",
        "--out", str(triples_path),
        "--seed", "11",
        "--translations", str(table_path),
        "--action-mode", "insert",
        "--poor-mode", "unk",
    )

    triples = load_triples(triples_path)
    texts = [s.raw for doc in corpus.captions.values() for s in doc.sentences]
    texts += triple_texts(triples)
    # gen-data swaps against the full default lexicons, so the concept
    # union is wide; the planted world needs dim > n_concepts.
    store_dir = root / "embeds"
    populate_store(store_dir, corpus, texts, dim=96, seed=0)

    ckpt = root / "proj.fvcw"
    finetune = run(
        "finetune",
        "--triples", str(triples_path),
        "--embeds", str(store_dir),
        "--out", str(ckpt),
        "--epochs", "2",
        "--batch", "16",
        "--val-fraction", "0.25",
        "--seed", "0",
    )

    report = root / "report.jsonl"
    score = run(
        "score",
        "--embeds", str(store_dir),
        "--corpus", str(manifest),
        "--ckpt", str(ckpt),
        "--refs", "human",
        "--out", str(report),
    )

    return {
        "root": root,
        "corpus": corpus,
        "manifest": manifest,
        "table_path": table_path,
        "triples_path": triples_path,
        "triples": triples,
        "store_dir": store_dir,
        "ckpt": ckpt,
        "report": report,
        "gen": gen,
        "finetune": finetune,
        "score": score,
    }


def read_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


class TestUsageErrors:
    def test_no_command(self):
        code, out, err = run()
        assert code == 1
        assert "a command is required" in err

    def test_unknown_command(self):
        code, out, err = run("frobnicate")
        assert code == 1
        assert "invalid choice" in err

    def test_missing_required_flag(self):
        code, out, err = run("gen-data", "--model", "human", "--out", "x.jsonl")
        assert code == 1
        assert "--corpus" in err

    def test_alpha_out_of_range(self, tmp_path):
        code, out, err = run("score", "--embeds", str(tmp_path), "--alpha", "1.5")
        assert code == 1
        assert "alpha must be in [0, 1]" in err

    def test_bad_val_fraction(self, tmp_path):
        code, out, err = run(
            "finetune", "--triples", "t", "--embeds", str(tmp_path),
            "--out", "o", "--val-fraction", "1.0",
        )
        assert code == 1
        assert "fraction in (0, 1)" in err

    def test_score_needs_a_caption_source(self, tmp_path):
        code, out, err = run("score", "--embeds", str(tmp_path))
        assert code == 1
        assert "--captions and/or --corpus" in err

    def test_agreement_needs_a_source(self):
        code, out, err = run("agreement")
        assert code == 1
        assert "--raw or --corpus" in err

    def test_empty_comma_list(self, tmp_path):
        code, out, err = run("score", "--embeds", str(tmp_path), "--refs", ",,")
        assert code == 1
        assert "comma-separated" in err

    def test_version(self):
        out = io.StringIO()
        with contextlib.redirect_stdout(out):
            with pytest.raises(SystemExit) as exc:
                cli.main(["--version"])
        assert exc.value.code == 0
        assert out.getvalue().startswith("factvc ")


class TestDataErrors:
    def test_missing_corpus_file(self, tmp_path):
        code, out, err = run(
            "gen-data", "--corpus", str(tmp_path / "nope.json"),
            "--model", "human", "--out", str(tmp_path / "t.jsonl"),
        )
        assert code == 2
        assert err.startswith("error:")

    def test_unknown_model(self, ws, tmp_path):
        code, out, err = run(
            "gen-data", "--corpus", str(ws["manifest"]),
            "--model", "zz", "--out", str(tmp_path / "t.jsonl"),
            "--no-paraphrase",
        )
        assert code == 2
        assert "zz" in err

    def test_missing_captions_file(self, ws, tmp_path):
        code, out, err = run(
            "score", "--embeds", str(ws["store_dir"]),
            "--captions", str(tmp_path / "nope.jsonl"),
        )
        assert code == 2

    def test_score_unknown_model_filter(self, ws):
        code, out, err = run(
            "score", "--embeds", str(ws["store_dir"]),
            "--corpus", str(ws["manifest"]), "--models", "zz",
        )
        assert code == 2
        assert "no captions for models" in err

    def test_serve_missing_corpus(self, tmp_path):
        code, out, err = run(
            "serve", "--corpus", str(tmp_path / "nope.json"),
            "--store", str(tmp_path / "store"), "--annotators", "a1,a2",
        )
        assert code == 2

    def test_foil_missing_frames(self, ws, tmp_path):
        rows = [
            {
                "video_id": "zz",
                "clip_index": None,
                "positive": "the man holds a red ball .",
                "negative": "the woman holds a red ball .",
                "positive_transforms": [],
                "negative_transform": "person_swap",
            }
        ]
        path = tmp_path / "bad.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        code, out, err = run(
            "foil", "--triples", str(path), "--embeds", str(ws["store_dir"])
        )
        assert code == 2
        assert "missing frame embeddings" in err
        assert "zz" in err


class TestGenData:
    def test_pipeline_run_succeeded(self, ws):
        code, out, err = ws["gen"]
        assert code == 0
        summary = json.loads(out)
        # 12 sentences x 5 families x (original + paraphrase) positives.
        assert summary["triples"] == 120
        assert summary["videos"] == 6
        assert summary["from_transformed_positives"] == 60
        assert set(summary["by_negative_family"].values()) == {24}

    def test_triples_cover_all_families(self, ws):
        families = {t.negative_transform for t in ws["triples"]}
        assert len(families) == 5

    def test_paraphrase_positives_marked(self, ws):
        variants = {tuple(t.positive_transforms) for t in ws["triples"]}
        assert variants == {(), ("paraphrase",)}

    def test_no_paraphrase_flag(self, ws, tmp_path):
        out_path = tmp_path / "plain.jsonl"
        code, out, err = run(
            "gen-data", "--corpus", str(ws["manifest"]), "--model", "human",
            "--out", str(out_path), "--seed", "11", "--no-paraphrase",
            "--action-mode", "insert", "--poor-mode", "unk",
        )
        assert code == 0
        assert json.loads(out)["triples"] == 60

    def test_same_seed_bytes_identical(self, ws, tmp_path):
        paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
        for path in paths:
            code, _, _ = run(
                "gen-data", "--corpus", str(ws["manifest"]), "--model", "human",
                "--out", str(path), "--seed", "11",
                "--translations", str(ws["table_path"]),
                "--action-mode", "insert", "--poor-mode", "unk",
            )
            assert code == 0
        assert paths[0].read_bytes() == ws["triples_path"].read_bytes()
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_different_seed_differs(self, ws, tmp_path):
        path = tmp_path / "other.jsonl"
        code, _, _ = run(
            "gen-data", "--corpus", str(ws["manifest"]), "--model", "human",
            "--out", str(path), "--seed", "12",
            "--translations", str(ws["table_path"]),
            "--action-mode", "insert", "--poor-mode", "unk",
        )
        assert code == 0
        assert path.read_bytes() != ws["triples_path"].read_bytes()

    def test_global_seed_fallback_and_override(self, ws, tmp_path):
        fallback = tmp_path / "fallback.jsonl"
        code, _, _ = run(
            "--seed", "11",
            "gen-data", "--corpus", str(ws["manifest"]), "--model", "human",
            "--out", str(fallback),
            "--translations", str(ws["table_path"]),
            "--action-mode", "insert", "--poor-mode", "unk",
        )
        assert code == 0
        assert fallback.read_bytes() == ws["triples_path"].read_bytes()
        override = tmp_path / "override.jsonl"
        code, _, _ = run(
            "--seed", "99",
            "gen-data", "--corpus", str(ws["manifest"]), "--model", "human",
            "--out", str(override), "--seed", "11",
            "--translations", str(ws["table_path"]),
            "--action-mode", "insert", "--poor-mode", "unk",
        )
        assert code == 0
        assert override.read_bytes() == ws["triples_path"].read_bytes()


class TestFinetune:
    def test_pipeline_run_succeeded(self, ws):
        code, out, err = ws["finetune"]
        assert code == 0
        assert ws["ckpt"].exists()
        assert Path(str(ws["ckpt"]) + ".meta.json").exists()
        assert "checkpoint written" in err
        lines = [json.loads(line) for line in out.splitlines() if line]
        # Initial snapshot plus one row per epoch.
        assert len(lines) == 3
        assert [row["epoch"] for row in lines] == [0, 1, 2]
        for row in lines:
            assert row["val_loss"] is not None
            assert 0.0 <= row["val_accuracy"] <= 1.0

    def test_same_seed_bytes_identical(self, ws, tmp_path):
        ckpt = tmp_path / "again.fvcw"
        code, _, _ = run(
            "finetune",
            "--triples", str(ws["triples_path"]),
            "--embeds", str(ws["store_dir"]),
            "--out", str(ckpt),
            "--epochs", "2", "--batch", "16", "--val-fraction", "0.25",
            "--seed", "0",
        )
        assert code == 0
        assert ckpt.read_bytes() == ws["ckpt"].read_bytes()
        assert (
            Path(str(ckpt) + ".meta.json").read_bytes()
            == Path(str(ws["ckpt"]) + ".meta.json").read_bytes()
        )

    def test_ce_form_alias(self, ws, tmp_path):
        ckpt = tmp_path / "alias.fvcw"
        code, _, _ = run(
            "finetune",
            "--triples", str(ws["triples_path"]),
            "--embeds", str(ws["store_dir"]),
            "--out", str(ckpt),
            "--epochs", "2", "--batch", "16", "--val-fraction", "0.25",
            "--seed", "0", "--ce-form", "log",
        )
        assert code == 0
        assert ckpt.read_bytes() == ws["ckpt"].read_bytes()

    def test_missing_triples_file(self, ws, tmp_path):
        code, out, err = run(
            "finetune", "--triples", str(tmp_path / "nope.jsonl"),
            "--embeds", str(ws["store_dir"]), "--out", str(tmp_path / "o.fvcw"),
        )
        assert code == 2


class TestScore:
    def test_pipeline_run_succeeded(self, ws):
        code, out, err = ws["score"]
        assert code == 0
        assert "12 captions scored" in out

    def test_report_rows(self, ws):
        rows = read_jsonl(ws["report"])
        assert len(rows) == 12
        assert {r["model_id"] for r in rows} == {"m1", "m2"}
        for row in rows:
            assert set(row) == {
                "video_id", "model_id", "mode", "alpha",
                "paragraph", "sentences", "coarse", "fine",
            }
            assert row["mode"] == "video_ref"
            assert len(row["sentences"]) == 2

    def test_copied_captions_beat_corrupted(self, ws):
        rows = {(r["video_id"], r["model_id"]): r["paragraph"] for r in read_jsonl(ws["report"])}
        for video_id in sorted(ws["corpus"].videos):
            assert rows[(video_id, "m1")] > rows[(video_id, "m2")] + 0.05

    def test_stdout_mode(self, ws):
        code, out, err = run(
            "score", "--embeds", str(ws["store_dir"]),
            "--corpus", str(ws["manifest"]),
            "--ckpt", str(ws["ckpt"]), "--refs", "human", "--models", "m1",
        )
        assert code == 0
        rows = [json.loads(line) for line in out.splitlines() if line]
        assert len(rows) == 6
        assert all(r["model_id"] == "m1" for r in rows)

    def test_threads_do_not_change_the_report(self, ws, tmp_path):
        report = tmp_path / "threaded.jsonl"
        code, _, _ = run(
            "--threads", "4",
            "score", "--embeds", str(ws["store_dir"]),
            "--corpus", str(ws["manifest"]),
            "--ckpt", str(ws["ckpt"]), "--refs", "human", "--out", str(report),
        )
        assert code == 0
        assert report.read_bytes() == ws["report"].read_bytes()

    def test_text_mode_against_references(self, ws):
        code, out, err = run(
            "score", "--embeds", str(ws["store_dir"]),
            "--corpus", str(ws["manifest"]),
            "--mode", "t", "--refs", "human", "--models", "m1,m2",
        )
        assert code == 0
        rows = [json.loads(line) for line in out.splitlines() if line]
        by_model = {}
        for row in rows:
            by_model.setdefault(row["model_id"], []).append(row["paragraph"])
        # m1 repeats the reference text, so text-mode scores stay high;
        # coarse pools both reference sentences, keeping it just under 1.
        assert min(by_model["m1"]) > 0.95
        assert max(by_model["m2"]) < min(by_model["m1"])


class TestEvalCorr:
    def test_report(self, ws, tmp_path):
        out_path = tmp_path / "corr.json"
        code, out, err = run(
            "eval-corr", "--gold", str(ws["manifest"]),
            "--scores", str(ws["report"]), "--out", str(out_path),
        )
        assert code == 0
        body = json.loads(out)
        assert list(body) == ["report"]
        corr = body["report"]
        assert corr["n_captions"] == 12
        # Planted separation makes every level strongly positive.
        for level in ("paragraph", "sentence", "word"):
            assert corr[level] > 0.9
        assert json.loads(out_path.read_text()) == body

    def test_duplicate_metric_names(self, ws, tmp_path):
        other = tmp_path / "report.jsonl"
        other.write_bytes(ws["report"].read_bytes())
        code, out, err = run(
            "eval-corr", "--gold", str(ws["manifest"]),
            "--scores", f"{ws['report']},{other}",
        )
        assert code == 2
        assert "duplicate metric name" in err

    def test_scores_without_gold(self, ws, tmp_path):
        rows = read_jsonl(ws["report"])
        rows.append({"video_id": "v0000", "model_id": "zz", "paragraph": 0.5})
        path = tmp_path / "extra.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        code, out, err = run(
            "eval-corr", "--gold", str(ws["manifest"]), "--scores", str(path)
        )
        assert code == 2
        assert "(v0000, zz)" in err


class TestAgreement:
    def test_from_corpus(self, ws):
        code, out, err = run("agreement", "--corpus", str(ws["manifest"]))
        assert code == 0
        body = json.loads(out)
        # Panels are unanimous, so every level is exactly 1.
        assert body == {
            "alpha_paragraph": 1.0,
            "alpha_sentence": 1.0,
            "alpha_word": 1.0,
        }

    def test_from_raw_files(self, ws):
        base = ws["manifest"].parent
        code, out, err = run(
            "agreement",
            "--raw", str(base / "annotations.jsonl"),
            "--captions", str(base / "captions.jsonl"),
        )
        assert code == 0
        assert json.loads(out)["alpha_word"] == 1.0

    def test_raw_without_captions_skips_word_level(self, ws):
        base = ws["manifest"].parent
        code, out, err = run("agreement", "--raw", str(base / "annotations.jsonl"))
        assert code == 0
        assert json.loads(out)["alpha_word"] is None

    def test_raw_referencing_missing_caption(self, ws, tmp_path):
        base = ws["manifest"].parent
        captions = tmp_path / "captions.jsonl"
        lines = (base / "captions.jsonl").read_text().splitlines()
        captions.write_text("\n".join(lines[:1]) + "\n")
        code, out, err = run(
            "agreement",
            "--raw", str(base / "annotations.jsonl"),
            "--captions", str(captions),
        )
        assert code == 2
        assert "missing caption" in err


class TestRank:
    def test_concordant_ranking(self, ws):
        code, out, err = run(
            "rank", "--scores", str(ws["report"]), "--gold", str(ws["manifest"])
        )
        assert code == 0
        assert "kendall_tau: 1.0000" in out
        lines = out.splitlines()
        assert lines[0].split() == [
            "model", "metric_mean", "gold_mean", "metric_rank", "gold_rank", "discordant",
        ]
        assert any("m1" in line and "no" in line for line in lines)

    def test_single_system_is_an_error(self, ws, tmp_path):
        rows = [r for r in read_jsonl(ws["report"]) if r["model_id"] == "m1"]
        path = tmp_path / "solo.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        code, out, err = run(
            "rank", "--scores", str(path), "--gold", str(ws["manifest"])
        )
        assert code == 2


class TestStats:
    def test_counts_and_error_types(self, ws):
        code, out, err = run("stats", "--corpus", str(ws["manifest"]))
        assert code == 0
        body = json.loads(out)
        assert body["paragraph_count"] == 12
        assert body["sentence_count"] == 24
        assert body["pct_paragraphs_with_errors"] == 50.0
        assert body["pct_sentences_with_errors"] == 50.0
        # Every planted span swaps the person token; the breakdown counts
        # raw annotator records, three per m2 caption over 12 sentences.
        assert body["error_types"]["Person"]["count"] == 36
        assert body["error_types"]["Person"]["ratio"] == 1.0

    def test_without_annotations(self, tmp_path):
        corpus = template_corpus(2)
        manifest = save_corpus(corpus, tmp_path / "bare")
        code, out, err = run("stats", "--corpus", str(manifest))
        assert code == 2
        assert "gold" in err


class TestFoil:
    def test_planted_pairs_separate(self, ws):
        code, out, err = run(
            "foil", "--triples", str(ws["triples_path"]),
            "--embeds", str(ws["store_dir"]), "--ckpt", str(ws["ckpt"]),
        )
        assert code == 0
        body = json.loads(out)
        assert body["pairs"] == 120
        assert body["accuracy"] >= 0.9

    def test_identity_weights_and_clip_restriction(self, ws):
        code, out, err = run(
            "foil", "--triples", str(ws["triples_path"]),
            "--embeds", str(ws["store_dir"]), "--clip-restriction",
        )
        assert code == 0
        assert json.loads(out)["accuracy"] >= 0.9
