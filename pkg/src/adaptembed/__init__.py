"""Target-corpus word embeddings with selective import from a source corpus.

The library trains CBOW embeddings on a target corpus and offers several ways
of borrowing from a larger source corpus: fine-tuning, drift-aware
regularization, and retrieval-based selection of source documents that are
jointly trained with per-snippet weights.
"""

from adaptembed.corpus import (
    Corpus,
    Vocabulary,
    WindowSample,
    build_vocabulary,
    encode,
    iter_windows,
    permute_vocabulary,
    tokenize,
)
from adaptembed.trainer import (
    EmbeddingModel,
    NegativeSampler,
    Regularizer,
    Reg,
    SrcTune,
    Tgt,
    TrainConfig,
    cbow_step,
    frequency_score,
    init_model,
    train,
)
from adaptembed.drift import StabilityReport, build_report, knn, stability, wscore
from adaptembed.select import (
    InvertedIndex,
    SelectionResult,
    SnippetWeighting,
    index_source,
    joint_train,
    retain,
    retrieve,
    sscore,
)
from adaptembed.calibrate import CalibrationResult, calibrate
from adaptembed.evaluate import (
    AwppConfig,
    ClassifierModel,
    awpp,
    classifier_metrics,
    neighbor_table,
    train_classifier,
)
from adaptembed.manifest import Manifest, load_manifest, parse_manifest, save_manifest
from adaptembed.pipeline import ComparisonTable, compare, run

__version__ = "0.1.0"
