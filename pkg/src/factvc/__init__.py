"""Factuality evaluation toolkit for video captioning.

The package covers the full loop: generating weak-supervision triples from
captions (:mod:`factvc.augment`), finetuning the two projection matrices
contrastively (:mod:`factvc.trainer`), scoring captions against videos and
reference texts (:mod:`factvc.scoring`), collecting human annotations over
HTTP (:mod:`factvc.service`), and relating metric scores to those
annotations (:mod:`factvc.analysis`).
"""

__version__ = "0.1.0"

from .analysis import (
    AgreementReport,
    CorrelationReport,
    aggregate,
    aggregate_all,
    classify_error_span,
    compute_agreement,
    correlate,
    error_breakdown,
    krippendorff_alpha_interval,
    pearson,
    system_ranking,
)
from .augment import AugmentConfig, Lexicons, StubTranslator, generate_triples, split_train_val
from .corpus import (
    AnnotationRecord,
    CaptionDoc,
    Corpus,
    CorpusError,
    GoldAnnotation,
    SentenceLabel,
    SentenceText,
    TripleRecord,
    VideoRef,
    corpus_stats,
    detokenize,
    load_corpus,
    save_corpus,
    tokenize,
)
from .embeddings import (
    EmbeddingMatrix,
    EmbedStore,
    EncoderClient,
    ProjectionWeights,
    SyntheticWorld,
    encode_remote,
    identity_weights,
    project,
    read_fvce,
    read_fvcw,
    synth_embeddings,
    write_fvce,
    write_fvcw,
)
from .scoring import (
    FactVCScorer,
    ScoreBreakdown,
    ScoreConfig,
    coarse_score,
    factvc_paragraph,
    factvc_sentence,
    fine_f_value_score,
    fine_precision_score,
    foil_accuracy,
)
from .trainer import (
    LossConfig,
    ProjectionFinetuner,
    TripleBatch,
    batch_similarities,
    gradients,
    loss_coarse,
    loss_fine,
    loss_total,
    train,
)

__all__ = [
    "AgreementReport",
    "AnnotationRecord",
    "AugmentConfig",
    "CaptionDoc",
    "Corpus",
    "CorpusError",
    "CorrelationReport",
    "EmbedStore",
    "EmbeddingMatrix",
    "EncoderClient",
    "FactVCScorer",
    "GoldAnnotation",
    "Lexicons",
    "LossConfig",
    "ProjectionFinetuner",
    "ProjectionWeights",
    "ScoreBreakdown",
    "ScoreConfig",
    "SentenceLabel",
    "SentenceText",
    "StubTranslator",
    "SyntheticWorld",
    "TripleBatch",
    "TripleRecord",
    "VideoRef",
    "__version__",
    "aggregate",
    "aggregate_all",
    "batch_similarities",
    "classify_error_span",
    "coarse_score",
    "compute_agreement",
    "corpus_stats",
    "correlate",
    "detokenize",
    "encode_remote",
    "error_breakdown",
    "factvc_paragraph",
    "factvc_sentence",
    "fine_f_value_score",
    "fine_precision_score",
    "foil_accuracy",
    "generate_triples",
    "gradients",
    "identity_weights",
    "krippendorff_alpha_interval",
    "load_corpus",
    "loss_coarse",
    "loss_fine",
    "loss_total",
    "pearson",
    "project",
    "read_fvce",
    "read_fvcw",
    "save_corpus",
    "split_train_val",
    "synth_embeddings",
    "system_ranking",
    "tokenize",
    "train",
    "write_fvce",
    "write_fvcw",
]
