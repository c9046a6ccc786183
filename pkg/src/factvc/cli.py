"""Command-line interface.

Exit codes: 0 on success, 1 on usage errors (bad flags, malformed
invocations), 2 on data or validation errors (unreadable files, schema
violations, inconsistent inputs).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, augment, embeddings as emb, scoring, trainer
from .analysis import AnalysisError
from .augment import AugmentError
from .corpus import (
    Corpus,
    CorpusError,
    corpus_stats,
    load_annotations,
    load_captions,
    load_corpus,
    load_triples,
    save_triples,
)
from .scoring import ScoringError
from .service import ServiceError
from .trainer import TrainerError

DATA_ERRORS = (
    CorpusError,
    emb.EmbeddingError,
    ScoringError,
    TrainerError,
    AnalysisError,
    AugmentError,
    ServiceError,
    OSError,
    json.JSONDecodeError,
)

MODE_ALIASES = {
    "v": scoring.MODE_VIDEO,
    "t": scoring.MODE_TEXT,
    "vt": scoring.MODE_VIDEO_TEXT,
}

# "log" is accepted as shorthand for the log-softmax cross-entropy form.
CE_CHOICES = (*trainer.CE_FORMS, "log")

LOG_LEVELS = ("debug", "info", "warning", "error")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; we need status 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}".rstrip())


def _comma_list(raw: str) -> list[str]:
    items = [part.strip() for part in raw.split(",") if part.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def _alpha_value(raw: str) -> float:
    value = float(raw)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"alpha must be in [0, 1], got {raw}")
    return value


def _fraction(raw: str) -> float:
    value = float(raw)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"expected a fraction in (0, 1), got {raw}")
    return value


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _write_jsonl(path: str, rows: list[dict]):
    out = Path(path)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if args.global_seed is not None:
        return args.global_seed
    return 0


def _parallel_map(fn, items, threads):
    """Order-preserving map, fanned out over a thread pool when asked to."""
    if not threads or threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def build_parser() -> Parser:
    parser = Parser(prog="factvc", description="Factuality evaluation for video captions")
    parser.add_argument("--version", action="version", version=f"factvc {__version__}")
    parser.add_argument(
        "--seed", dest="global_seed", type=int, default=None,
        help="default seed for subcommands that accept one",
    )
    parser.add_argument(
        "--threads", type=int, default=None,
        help="worker threads for scoring; training is single-threaded",
    )
    parser.add_argument("--log-level", choices=LOG_LEVELS, default="warning")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate weak-supervision triples from captions")
    p.add_argument("--corpus", required=True, help="corpus manifest JSON")
    p.add_argument("--model", required=True, help="model id whose captions seed the triples")
    p.add_argument("--out", required=True, help="output triples JSONL")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--translations", help="stub translation table JSON (offline paraphrase)")
    p.add_argument("--no-paraphrase", action="store_true", help="skip the paraphrase family")
    p.add_argument("--pivot", type=_comma_list, default=["de", "fr"], help="pivot languages")
    p.add_argument("--action-mode", choices=["delete", "insert"], help="pin the action corruption")
    p.add_argument("--poor-mode", choices=["unk", "redundancy"], help="pin the noisy corruption")

    p = sub.add_parser("finetune", help="train the projection matrices on triples")
    p.add_argument("--triples", required=True, help="training triples JSONL")
    p.add_argument("--embeds", required=True, help="embedding store directory")
    p.add_argument("--out", required=True, help="output checkpoint path (.fvcw)")
    p.add_argument("--val-triples", help="validation triples JSONL (default: split by video)")
    p.add_argument("--val-fraction", type=_fraction, default=0.1)
    p.add_argument("--init", help="initial checkpoint (.fvcw); default identity")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch", dest="batch_size", type=int, default=256)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--margin", type=float, default=5.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--ce-form", choices=CE_CHOICES, default=trainer.CE_LOG_SOFTMAX)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--frames-per-clip", type=int, default=trainer.DEFAULT_FRAMES_PER_CLIP)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("score", help="score captions against videos and references")
    p.add_argument("--embeds", required=True, help="embedding store directory")
    p.add_argument("--captions", help="captions JSONL")
    p.add_argument("--corpus", help="corpus manifest JSON (alternative caption source)")
    p.add_argument("--ckpt", help="projection checkpoint (.fvcw); default identity")
    p.add_argument("--out", help="score report JSONL (default: stdout)")
    p.add_argument("--mode", choices=sorted(MODE_ALIASES), default="v")
    p.add_argument("--alpha", type=_alpha_value, default=scoring.DEFAULT_ALPHA)
    p.add_argument("--fine", choices=list(scoring.FINE_VARIANTS), default=scoring.FINE_PRECISION)
    p.add_argument("--multi-ref", choices=list(scoring.MULTI_REF_MODES), default="max")
    p.add_argument("--clip-restriction", action="store_true")
    p.add_argument("--refs", type=_comma_list, help="reference model ids (text modes)")
    p.add_argument("--models", type=_comma_list, help="only score these model ids")

    p = sub.add_parser("eval-corr", help="correlate score reports with gold annotations")
    p.add_argument("--gold", required=True, help="corpus manifest with annotations")
    p.add_argument("--scores", required=True, type=_comma_list,
                   help="score report JSONL paths, comma separated")
    p.add_argument("--out", help="write the correlation report JSON here too")
    p.add_argument("--min-annotators", type=int, default=1)

    p = sub.add_parser("agreement", help="inter-annotator agreement (interval alpha)")
    p.add_argument("--raw", help="annotations JSONL")
    p.add_argument("--captions", help="captions JSONL (enables word-level alpha)")
    p.add_argument("--corpus", help="corpus manifest with annotations")

    p = sub.add_parser("rank", help="rank captioning systems against gold labels")
    p.add_argument("--scores", required=True, help="score report JSONL")
    p.add_argument("--gold", required=True, help="corpus manifest with annotations")
    p.add_argument("--gold-level", choices=list(analysis.GOLD_LEVELS), default="paragraph")
    p.add_argument("--min-annotators", type=int, default=1)

    p = sub.add_parser("stats", help="corpus counts and error typology")
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-annotators", type=int, default=1)

    p = sub.add_parser("serve", help="run the annotation collection service")
    p.add_argument("--corpus", required=True)
    p.add_argument("--store", required=True, help="directory for assignments and annotations")
    p.add_argument("--annotators", required=True, type=_comma_list)
    p.add_argument("--annotators-per-caption", dest="per_caption", type=int, default=3)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--video-base-url")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    p = sub.add_parser("foil", help="paired true-versus-corrupted ranking accuracy")
    p.add_argument("--triples", required=True, help="triples JSONL with the pairs")
    p.add_argument("--embeds", required=True, help="embedding store directory")
    p.add_argument("--ckpt", help="projection checkpoint (.fvcw); default identity")
    p.add_argument("--alpha", type=_alpha_value, default=scoring.DEFAULT_ALPHA)
    p.add_argument("--fine", choices=list(scoring.FINE_VARIANTS), default=scoring.FINE_PRECISION)
    p.add_argument("--clip-restriction", action="store_true")

    return parser


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def _load_weights(path: str | None) -> emb.ProjectionWeights | None:
    return emb.read_fvcw(path) if path else None


def cmd_gen_data(args) -> int:
    corpus = load_corpus(args.corpus)
    translator = None
    if not args.no_paraphrase:
        if args.translations:
            translator = augment.StubTranslator.from_file(args.translations)
        elif os.environ.get("FACTVC_MT_URL"):
            translator = augment.HttpTranslator.from_env()
    config = augment.AugmentConfig(
        seed=_seed(args),
        pivots=tuple(args.pivot),
        action_mode=args.action_mode,
        poor_mode=args.poor_mode,
    )
    triples = augment.generate_triples(
        corpus, args.model, translator=translator, config=config
    )
    save_triples(triples, args.out)
    by_family = {family: 0 for family in augment.NEGATIVE_FAMILIES}
    with_positive = 0
    for t in triples:
        by_family[t.negative_transform] += 1
        if t.positive_transforms:
            with_positive += 1
    print(
        _dump_json(
            {
                "triples": len(triples),
                "videos": len({t.video_id for t in triples}),
                "from_transformed_positives": with_positive,
                "by_negative_family": by_family,
                "out": args.out,
            }
        )
    )
    return 0


def cmd_finetune(args) -> int:
    triples = load_triples(args.triples)
    store = emb.EmbedStore(args.embeds)
    val_triples = load_triples(args.val_triples) if args.val_triples else None
    ce_form = trainer.CE_LOG_SOFTMAX if args.ce_form == "log" else args.ce_form
    finetuner = trainer.ProjectionFinetuner(
        margin=args.margin,
        lam=args.lam,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        epochs=args.epochs,
        ce_form=ce_form,
        temperature=args.temperature,
        frames_per_clip=args.frames_per_clip,
        seed=_seed(args),
        val_fraction=args.val_fraction,
    )
    finetuner.fit(triples, store=store, init=_load_weights(args.init), val_triples=val_triples)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    finetuner.save(out)
    for stats in finetuner.history_:
        print(json.dumps(stats.to_json(), sort_keys=True))
    print(f"checkpoint written to {out}", file=sys.stderr)
    return 0


def _captions_corpus(args) -> Corpus:
    """Caption documents from --corpus and/or --captions (JSONL wins on clash)."""
    if not args.captions and not args.corpus:
        raise UsageError(f"factvc {args.command}: pass --captions and/or --corpus")
    corpus = load_corpus(args.corpus) if args.corpus else Corpus()
    if args.captions:
        for doc in load_captions(args.captions):
            corpus.captions[doc.key] = doc
    if not corpus.captions:
        raise CorpusError("no captions to score")
    return corpus


def cmd_score(args) -> int:
    corpus = _captions_corpus(args)
    store = emb.EmbedStore(args.embeds)
    config = scoring.ScoreConfig(
        alpha=args.alpha,
        mode=MODE_ALIASES[args.mode],
        fine_aggregation=args.fine,
        multi_ref_policy=args.multi_ref,
        clip_restriction=args.clip_restriction,
    )
    scorer = scoring.FactVCScorer(
        alpha=config.alpha,
        mode=config.mode,
        fine_aggregation=config.fine_aggregation,
        multi_ref_policy=config.multi_ref_policy,
        clip_restriction=config.clip_restriction,
        reference_model_ids=tuple(args.refs) if args.refs else None,
    )
    scorer.fit(corpus, store, weights=_load_weights(args.ckpt))
    keys = sorted(corpus.captions)
    if scorer.reference_model_ids:
        keys = [k for k in keys if k[1] not in scorer.reference_model_ids]
    if args.models:
        wanted = set(args.models)
        keys = [k for k in keys if k[1] in wanted]
        if not keys:
            raise ScoringError(f"no captions for models {sorted(wanted)}")

    def row(key: tuple[str, str]) -> dict:
        return scoring.report_row(key[0], key[1], scorer.score_caption(*key), config)

    rows = _parallel_map(row, keys, args.threads)
    if args.out:
        _write_jsonl(args.out, rows)
        table = [
            [r["video_id"], r["model_id"], r["paragraph"], r["coarse"], r["fine"]]
            for r in rows
        ]
        print(analysis.render_table(["video", "model", "score", "coarse", "fine"], table))
        print(f"{len(rows)} captions scored; report written to {args.out}")
    else:
        for r in rows:
            print(json.dumps(r, sort_keys=True))
    return 0


def _load_report(path: str) -> dict[tuple[str, str], float]:
    scores: dict[tuple[str, str], float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            try:
                scores[(row["video_id"], row["model_id"])] = float(row["paragraph"])
            except (KeyError, TypeError) as exc:
                raise CorpusError(
                    f"bad report row: {exc}", file=path, line=lineno
                ) from None
    if not scores:
        raise CorpusError("report holds no rows", file=path)
    return scores


def cmd_eval_corr(args) -> int:
    corpus = load_corpus(args.gold)
    gold = analysis.aggregate_all(corpus, min_annotators=args.min_annotators)
    report: dict[str, dict] = {}
    for path in args.scores:
        name = Path(path).stem
        if name in report:
            raise CorpusError(f"duplicate metric name '{name}' among --scores paths")
        report[name] = analysis.correlate(_load_report(path), gold).to_json()
    text = _dump_json(report)
    print(text)
    if args.out:
        out = Path(args.out)
        if out.parent != Path(""):
            out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_agreement(args) -> int:
    if args.corpus:
        corpus = load_corpus(args.corpus)
    elif args.raw:
        corpus = Corpus()
        if args.captions:
            for doc in load_captions(args.captions):
                corpus.captions[doc.key] = doc
        for record in load_annotations(args.raw):
            if record.key in corpus.captions:
                record.validate(corpus.captions[record.key])
            elif args.captions:
                raise CorpusError(
                    f"annotation references missing caption {record.key}", file=args.raw
                )
            corpus.annotations.append(record)
    else:
        raise UsageError("factvc agreement: pass --raw or --corpus")
    if not corpus.annotations:
        raise CorpusError("no annotations to measure agreement on")
    print(_dump_json(analysis.compute_agreement(corpus).to_json()))
    return 0


def cmd_rank(args) -> int:
    scores = _load_report(args.scores)
    corpus = load_corpus(args.gold)
    gold = analysis.aggregate_all(corpus, min_annotators=args.min_annotators)
    result = analysis.system_ranking(scores, gold, gold_level=args.gold_level)
    rows = [
        [
            r.model_id,
            r.metric_mean,
            r.gold_mean,
            int(r.metric_rank) if r.metric_rank.is_integer() else r.metric_rank,
            int(r.gold_rank) if r.gold_rank.is_integer() else r.gold_rank,
            r.discordant,
        ]
        for r in result.rows
    ]
    print(
        analysis.render_table(
            ["model", "metric_mean", "gold_mean", "metric_rank", "gold_rank", "discordant"],
            rows,
        )
    )
    print(f"kendall_tau: {result.kendall_tau:.4f}")
    return 0


def cmd_stats(args) -> int:
    corpus = load_corpus(args.corpus)
    analysis.aggregate_all(corpus, min_annotators=args.min_annotators)
    out = corpus_stats(corpus).to_json()
    out["error_types"] = analysis.error_breakdown(corpus)
    print(_dump_json(out))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    corpus = load_corpus(args.corpus)
    app = create_app(
        corpus,
        args.store,
        args.annotators,
        per_caption=args.per_caption,
        seed=_seed(args),
        video_base_url=args.video_base_url,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_foil(args) -> int:
    store = emb.EmbedStore(args.embeds)
    triples = load_triples(args.triples)
    weights = _load_weights(args.ckpt)
    config = scoring.ScoreConfig(
        alpha=args.alpha, mode=scoring.MODE_VIDEO, fine_aggregation=args.fine
    )
    missing = sorted({t.video_id for t in triples if not store.has_frames(t.video_id)})
    if missing:
        raise ScoringError(f"missing frame embeddings for videos: {', '.join(missing)}")

    def project(matrix: emb.EmbeddingMatrix) -> np.ndarray:
        if weights is None:
            return matrix.vectors.astype(np.float64)
        return emb.project(matrix, weights).vectors.astype(np.float64)

    def blended(text: str, frames: np.ndarray) -> float:
        sent = scoring.SentenceEmbedding(
            sentence=project(store.get_text_sentence(text))[0],
            tokens=project(store.get_text_tokens(text)),
        )
        return scoring.factvc_paragraph(
            [sent], frame_vectors=frames, config=config
        ).paragraph.blended

    def pair(triple) -> tuple[float, float]:
        frames = project(store.get_frames(triple.video_id))
        if args.clip_restriction and triple.clip_index is not None:
            ranges = store.get_clip_ranges(triple.video_id)
            if ranges is not None:
                if triple.clip_index >= len(ranges):
                    raise CorpusError(
                        f"triple clip_index {triple.clip_index} out of range for "
                        f"video '{triple.video_id}' ({len(ranges)} clips)"
                    )
                start, end = ranges[triple.clip_index]
                frames = frames[start:end]
        return blended(triple.positive, frames), blended(triple.negative, frames)

    pairs = _parallel_map(pair, triples, args.threads)
    accuracy = scoring.foil_accuracy(pairs)
    print(_dump_json({"pairs": len(pairs), "accuracy": accuracy}))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "finetune": cmd_finetune,
    "score": cmd_score,
    "eval-corr": cmd_eval_corr,
    "agreement": cmd_agreement,
    "rank": cmd_rank,
    "stats": cmd_stats,
    "serve": cmd_serve,
    "foil": cmd_foil,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level.upper()))
        if args.command is None:
            raise UsageError(f"factvc: a command is required\n{parser.format_usage()}".rstrip())
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
