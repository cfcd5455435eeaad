"""Funniness scoring for micro-edited news headlines.

Contrastive sentence-pair regression: the edited headline's span embedding
is contrasted against its masked context or against the original span, and
a small head regresses the 0-3 funniness grade. Pairwise funnier-headline
classification reuses the same scorer.
"""

from .corpus import (
    HeadlineInstance,
    PairInstance,
    ParseError,
    SentenceTriple,
    build_triple,
    merge_extra,
    parse_task1,
    parse_task2,
)
from .encoders import (
    EmbeddingTable,
    ScalarMix,
    ScalarMixParams,
    SpanEmbeddings,
    cbow_encode,
    contextual_encode,
    load_embeddings,
    max_pool,
    mean_pool,
    scalar_mix,
)
from .engine import ExperimentConfig, RunRecord, evaluate, export_predictions, train
from .metrics import (
    CorrelationMatrix,
    MetricsReport,
    accuracy,
    correlation_matrix,
    reward,
    rmse,
    spearman,
)
from .model import FusionFeature, fuse, loss_task1, loss_task2, predict_label, score
from .spans import Span, SubwordSpan, word_tokenize

__version__ = "0.1.0"
