"""Corpus model, tokenizer, and JSONL serialization tests."""

import json

import numpy as np
import pytest

from factvc.corpus import (
    AnnotationRecord,
    CaptionDoc,
    Corpus,
    CorpusError,
    GoldAnnotation,
    SentenceLabel,
    SentenceText,
    TripleRecord,
    VideoRef,
    annotation_from_json,
    annotation_to_json,
    corpus_stats,
    detokenize,
    load_annotations,
    load_captions,
    load_corpus,
    load_triples,
    save_corpus,
    save_triples,
    tokenize,
)

WORDS = ["the", "man", "holds", "a", "red", "ball", "dog", "runs", "two"]
PUNCT = [".", ",", "!", "?", ";", ":"]


class TestTokenize:
    def test_basic_sentence(self):
        assert tokenize("The man holds a red ball.") == [
            "The", "man", "holds", "a", "red", "ball", ".",
        ]

    def test_leading_and_trailing_punctuation_split(self):
        assert tokenize('"Stop!" he said.') == ['"', "Stop", "!", '"', "he", "said", "."]

    def test_internal_punctuation_kept(self):
        # Apostrophes and hyphens inside a word stay attached.
        assert tokenize("the dog's well-kept coat") == [
            "the", "dog's", "well-kept", "coat",
        ]

    def test_case_preserved(self):
        assert tokenize("The Man") == ["The", "Man"]

    def test_empty_and_whitespace(self):
        assert tokenize("") == []
        assert tokenize("   ") == []

    def test_detokenize_joins_with_spaces(self):
        assert detokenize(["a", "man", "."]) == "a man ."

    def test_canonical_fixpoint(self):
        # tokenize(detokenize(tokens)) == tokens for already-split tokens.
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(1, 10))
            toks = [WORDS[i] for i in rng.integers(0, len(WORDS), n)]
            if rng.random() < 0.7:
                toks.append(PUNCT[int(rng.integers(0, len(PUNCT)))])
            assert tokenize(detokenize(toks)) == toks


class TestSentenceText:
    def test_from_raw_tokenizes(self):
        sent = SentenceText.from_raw("A dog runs.")
        assert sent.tokens == ["A", "dog", "runs", "."]
        sent.validate()

    def test_validate_rejects_stale_tokens(self):
        sent = SentenceText(raw="A dog runs.", tokens=["wrong"])
        with pytest.raises(CorpusError, match="tokens"):
            sent.validate()


class TestVideoRef:
    def test_valid(self):
        VideoRef("v1", duration_s=20.0, clips=[(0.0, 10.0), (10.0, 20.0)]).validate()

    def test_empty_id(self):
        with pytest.raises(CorpusError, match="video_id"):
            VideoRef("").validate()

    def test_bad_clip_interval(self):
        with pytest.raises(CorpusError):
            VideoRef("v1", clips=[(5.0, 5.0)]).validate()


def make_caption(video_id="v1", model_id="m1", raws=("A man runs.",)):
    return CaptionDoc(
        video_id=video_id,
        model_id=model_id,
        sentences=[SentenceText.from_raw(r) for r in raws],
    )


class TestAnnotationRecord:
    def make(self, **kwargs):
        base = dict(
            annotator_id="a1",
            video_id="v1",
            model_id="m1",
            paragraph_score=4,
            sentence_labels=[SentenceLabel(factual=True)],
        )
        base.update(kwargs)
        return AnnotationRecord(**base)

    def test_valid(self):
        self.make().validate()

    def test_score_out_of_range(self):
        for score in (0, 6, -2):
            with pytest.raises(CorpusError, match="paragraph_score"):
                self.make(paragraph_score=score).validate()

    def test_factual_with_spans(self):
        rec = self.make(sentence_labels=[SentenceLabel(True, [(0, 1)])])
        with pytest.raises(CorpusError, match="no error spans"):
            rec.validate()

    def test_nonfactual_without_spans(self):
        rec = self.make(sentence_labels=[SentenceLabel(False, [])])
        with pytest.raises(CorpusError, match="at least one error span"):
            rec.validate()

    def test_empty_span(self):
        rec = self.make(sentence_labels=[SentenceLabel(False, [(2, 2)])])
        with pytest.raises(CorpusError, match="empty or negative"):
            rec.validate()

    def test_overlapping_spans(self):
        rec = self.make(sentence_labels=[SentenceLabel(False, [(0, 2), (1, 3)])])
        with pytest.raises(CorpusError, match="overlapping"):
            rec.validate()

    def test_adjacent_spans_allowed(self):
        self.make(sentence_labels=[SentenceLabel(False, [(0, 2), (2, 3)])]).validate()

    def test_label_count_vs_caption(self):
        cap = make_caption(raws=("A man runs.", "A dog sits."))
        with pytest.raises(CorpusError, match="sentence labels"):
            self.make().validate(cap)

    def test_span_beyond_tokens(self):
        cap = make_caption()  # 4 tokens
        rec = self.make(sentence_labels=[SentenceLabel(False, [(2, 9)])])
        with pytest.raises(CorpusError, match="exceeds"):
            rec.validate(cap)

    def test_json_round_trip(self):
        rec = self.make(
            paragraph_score=2,
            sentence_labels=[SentenceLabel(False, [(1, 3)]), SentenceLabel(True)],
        )
        obj = annotation_to_json(rec)
        # The wire uses a "sentences" list with explicit span pairs.
        assert obj["sentences"] == [
            {"factual": False, "error_spans": [[1, 3]]},
            {"factual": True, "error_spans": []},
        ]
        back = annotation_from_json(json.loads(json.dumps(obj)))
        assert back == rec


class TestTripleRecord:
    def make(self, **kwargs):
        base = dict(
            video_id="v1",
            positive="a man runs .",
            negative="a woman runs .",
            negative_transform="person_swap",
            clip_index=0,
        )
        base.update(kwargs)
        return TripleRecord(**base)

    def test_valid(self):
        self.make().validate()

    def test_families_listed(self):
        assert TripleRecord.NEGATIVE_FAMILIES == (
            "person_swap",
            "action_swap",
            "object_swap",
            "adjective_swap",
            "poor_generation",
        )

    def test_identical_texts(self):
        with pytest.raises(CorpusError, match="identical"):
            self.make(negative="a man runs .").validate()

    def test_unknown_family(self):
        with pytest.raises(CorpusError, match="unknown negative transform"):
            self.make(negative_transform="verb_swap").validate()

    def test_clip_index_range(self):
        video = VideoRef("v1", clips=[(0.0, 5.0)])
        self.make(clip_index=0).validate(video)
        with pytest.raises(CorpusError, match="clip_index"):
            self.make(clip_index=1).validate(video)


def build_corpus():
    corpus = Corpus()
    corpus.videos["v1"] = VideoRef("v1", duration_s=10.0, clips=[(0.0, 10.0)])
    corpus.videos["v2"] = VideoRef("v2", duration_s=10.0, clips=[(0.0, 10.0)])
    corpus.captions[("v1", "m1")] = make_caption("v1", "m1")
    corpus.captions[("v2", "m1")] = make_caption("v2", "m1", raws=("A dog sits.",))
    corpus.annotations.append(
        AnnotationRecord("a1", "v1", "m1", 5, [SentenceLabel(True)])
    )
    corpus.triples.append(
        TripleRecord("v1", "A man runs .", "A woman runs .", "person_swap", [], 0)
    )
    return corpus


class TestCorpusIO:
    def test_save_load_round_trip(self, tmp_path):
        corpus = build_corpus()
        manifest = save_corpus(corpus, tmp_path / "corpus")
        back = load_corpus(manifest)
        assert back.videos == corpus.videos
        assert back.captions == corpus.captions
        assert back.annotations == corpus.annotations
        assert back.triples == corpus.triples

    def test_malformed_line_reports_file_and_line(self, tmp_path):
        corpus = build_corpus()
        manifest = save_corpus(corpus, tmp_path / "corpus")
        captions = tmp_path / "corpus" / "captions.jsonl"
        lines = captions.read_text().splitlines()
        lines.insert(1, "{not json")
        captions.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorpusError) as err:
            load_corpus(manifest)
        assert "captions.jsonl:2" in str(err.value)

    def test_missing_field_names_it(self, tmp_path):
        path = tmp_path / "captions.jsonl"
        path.write_text(json.dumps({"video_id": "v1", "sentences": ["x ."]}) + "\n")
        with pytest.raises(CorpusError, match="model_id"):
            load_captions(path)

    def test_duplicate_caption_rejected(self, tmp_path):
        obj = {"video_id": "v1", "model_id": "m1", "sentences": ["A man runs ."]}
        path = tmp_path / "captions.jsonl"
        path.write_text(json.dumps(obj) + "\n" + json.dumps(obj) + "\n")
        with pytest.raises(CorpusError, match="duplicate"):
            load_captions(path)

    def test_caption_for_unknown_video(self, tmp_path):
        corpus = build_corpus()
        corpus.captions[("ghost", "m1")] = make_caption("ghost", "m1")
        manifest = save_corpus(corpus, tmp_path / "corpus")
        with pytest.raises(CorpusError, match="ghost"):
            load_corpus(manifest)

    def test_triples_round_trip(self, tmp_path):
        triples = [
            TripleRecord("v1", "a man runs .", "a woman runs .", "person_swap", [], 0),
            TripleRecord(
                "v1", "a man runs .", "a man UNK .", "poor_generation", ["paraphrase"], 1
            ),
        ]
        path = tmp_path / "triples.jsonl"
        save_triples(triples, path)
        assert load_triples(path) == triples

    def test_annotations_loader(self, tmp_path):
        rec = AnnotationRecord("a1", "v1", "m1", 3, [SentenceLabel(False, [(0, 1)])])
        path = tmp_path / "ann.jsonl"
        path.write_text(json.dumps(annotation_to_json(rec)) + "\n")
        assert load_annotations(path) == [rec]


class TestCorpusStats:
    def test_requires_gold(self):
        with pytest.raises(CorpusError, match="gold"):
            corpus_stats(Corpus())

    def test_hand_counts(self):
        corpus = Corpus()
        corpus.gold[("v1", "m1")] = GoldAnnotation(5, [True, True], [[True] * 3, [True] * 2])
        corpus.gold[("v2", "m1")] = GoldAnnotation(3, [True, False], [[True] * 3, [False, True]])
        corpus.gold[("v3", "m1")] = GoldAnnotation(4, [False], [[False, False, True]])
        stats = corpus_stats(corpus)
        assert stats.paragraph_count == 3
        assert stats.sentence_count == 5
        assert stats.word_count == 13
        # Exact rational percentages: 2/3, 2/5, 3/13.
        assert stats.pct_paragraphs_with_errors == float(100 * 2 / 3) or abs(
            stats.pct_paragraphs_with_errors - 200 / 3
        ) < 1e-12
        assert stats.pct_sentences_with_errors == 40.0
        assert abs(stats.pct_words_with_errors - 300 / 13) < 1e-12
        json_keys = set(stats.to_json())
        assert json_keys == {
            "paragraph_count",
            "sentence_count",
            "word_count",
            "pct_paragraphs_with_errors",
            "pct_sentences_with_errors",
            "pct_words_with_errors",
        }

    def test_paragraph_error_iff_below_five(self):
        corpus = Corpus()
        corpus.gold[("v1", "m1")] = GoldAnnotation(5, [True], [[True]])
        assert corpus_stats(corpus).pct_paragraphs_with_errors == 0.0
        corpus.gold[("v1", "m1")] = GoldAnnotation(4, [True], [[True]])
        assert corpus_stats(corpus).pct_paragraphs_with_errors == 100.0


class TestCorpusHelpers:
    def test_caption_lookup_error(self):
        with pytest.raises(CorpusError, match="no caption"):
            Corpus().caption("v1", "m1")

    def test_captions_for_model(self):
        corpus = build_corpus()
        docs = corpus.captions_for_model("m1")
        assert [d.video_id for d in docs] == ["v1", "v2"]

    def test_annotations_for(self):
        corpus = build_corpus()
        assert len(corpus.annotations_for("v1", "m1")) == 1
        assert corpus.annotations_for("v2", "m1") == []
