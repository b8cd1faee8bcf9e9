"""Mention normalization to HPO ids: sparse + dense scoring trained by synonym marginalization."""

from .dense import DenseEncoder, NgramBagEncoder, build_dense_encoder
from .model import TrainedNormalizer, load_normalizer, normalize, save_normalizer
from .scoring import (
    CandidateSet,
    DictionaryIndex,
    NormalizerConfig,
    ScoredCandidate,
    SkipCounter,
    marginal_loss,
    retrieve_candidates,
    score_pair,
)
from .sparse import SparseEncoder, fit_sparse
from .training import (
    NenInstance,
    PreFinetuneConfig,
    alignment_metric,
    pre_finetune,
    run_ablation,
    train_normalizer,
)

__all__ = [
    "CandidateSet",
    "DenseEncoder",
    "DictionaryIndex",
    "NenInstance",
    "NgramBagEncoder",
    "NormalizerConfig",
    "PreFinetuneConfig",
    "ScoredCandidate",
    "SkipCounter",
    "SparseEncoder",
    "TrainedNormalizer",
    "alignment_metric",
    "build_dense_encoder",
    "fit_sparse",
    "load_normalizer",
    "marginal_loss",
    "normalize",
    "pre_finetune",
    "retrieve_candidates",
    "run_ablation",
    "save_normalizer",
    "score_pair",
    "train_normalizer",
]
