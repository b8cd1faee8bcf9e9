"""Candidate scoring, retrieval and the synonym-marginalization objective."""

import logging
import threading
from dataclasses import dataclass, field, fields
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.special import logsumexp

from ..exceptions import ConfigurationError, DataError
from ..ontology import FlatDictionary
from .dense import DenseEncoder
from .sparse import SparseEncoder

logger = logging.getLogger(__name__)

ADDITIVE_CHOICES = (0, 1, 3, 5)


@dataclass
class NormalizerConfig:
    top_k: int = 20
    additive_k: int = 1
    sparse_weight: float = 1.0
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 5e-3
    refresh_every: int = 1
    exclude_normal_findings: bool = False

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigurationError("nen.top_k must be at least 1")
        if self.additive_k not in ADDITIVE_CHOICES:
            raise ConfigurationError(f"nen.additive_k must be one of {ADDITIVE_CHOICES}")
        if self.additive_k >= self.top_k:
            raise ConfigurationError("nen.additive_k must be smaller than nen.top_k")
        if self.epochs < 0:
            raise ConfigurationError("nen.epochs must be non-negative")
        if self.batch_size < 1 or self.refresh_every < 1:
            raise ConfigurationError("nen.batch_size and nen.refresh_every must be positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("nen.learning_rate must be positive")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "NormalizerConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (data or {}).items() if k in known})


@dataclass(frozen=True)
class ScoredCandidate:
    surface: str
    hpo_id: str
    s_sparse: float
    s_dense: float
    score: float
    is_positive: bool = False

    @property
    def rank_key(self) -> Tuple[float, str, str]:
        return (-self.score, self.hpo_id, self.surface)


@dataclass(frozen=True)
class CandidateSet:
    mention_surface: str
    gold_id: Optional[str]
    candidates: Tuple[ScoredCandidate, ...]
    entry_indices: Tuple[int, ...] = ()

    @property
    def positives(self) -> int:
        return sum(1 for c in self.candidates if c.is_positive)

    @property
    def scores(self) -> np.ndarray:
        return np.array([c.score for c in self.candidates], dtype=np.float64)


@dataclass
class SkipCounter:
    """Instances whose candidate set held no positive (loss 0, not trained on)."""

    skipped: int = 0
    seen: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, skipped: bool) -> None:
        with self._lock:
            self.seen += 1
            self.skipped += int(skipped)


def score_pair(
    mention_surface: str,
    entry: Tuple[str, str],
    dense: DenseEncoder,
    sparse: SparseEncoder,
    sparse_weight: float,
    gold_id: Optional[str] = None,
) -> ScoredCandidate:
    """Score one (surface, hpo_id) dictionary entry against a mention surface."""
    surface, hpo_id = entry
    vectors = dense.embed([mention_surface, surface]).double()
    s_dense = float(vectors[0] @ vectors[1])
    s_sparse = sparse.similarity(mention_surface, surface)
    return ScoredCandidate(
        surface,
        hpo_id,
        s_sparse,
        s_dense,
        s_dense + sparse_weight * s_sparse,
        gold_id is not None and hpo_id == gold_id,
    )


class DictionaryIndex:
    """Sparse and dense dictionary matrices for exact exhaustive scoring.

    The dense matrix is swapped whole by `refresh`; between refreshes the
    index is read-only and safe to share across threads.
    """

    def __init__(self, dictionary: FlatDictionary, sparse: SparseEncoder, dense: DenseEncoder):
        if len(dictionary) == 0:
            raise DataError("Cannot score against an empty dictionary")
        self.dictionary = dictionary
        self.sparse = sparse
        self.dense = dense
        self.surfaces = dictionary.surfaces
        self.ids = dictionary.ids
        self.sparse_matrix = sparse.encode(self.surfaces)
        tie_order = sorted(range(len(dictionary)), key=lambda i: (self.ids[i], self.surfaces[i]))
        self.tie_rank = np.empty(len(dictionary), dtype=np.int64)
        self.tie_rank[tie_order] = np.arange(len(dictionary))
        self.dense_matrix = np.zeros((len(dictionary), dense.output_dim))
        self.refresh()

    def refresh(self) -> None:
        self.dense_matrix = self.dense.embed(self.surfaces).double().cpu().numpy()

    def component_scores(self, mention_surface: str) -> Tuple[np.ndarray, np.ndarray]:
        query = self.dense.embed([mention_surface]).double().cpu().numpy()[0]
        return self.dense_matrix @ query, self.sparse.scores(mention_surface, self.sparse_matrix)

    def rank(self, scores: np.ndarray) -> np.ndarray:
        """Entry indices by (-score, hpo_id, surface)."""
        return np.lexsort((self.tie_rank, -scores))


def retrieve_candidates(
    mention_surface: str,
    index: DictionaryIndex,
    config: NormalizerConfig,
    sparse_weight: Optional[float] = None,
    gold_id: Optional[str] = None,
) -> CandidateSet:
    """Exact top-k; with a gold id, inject missing gold synonyms at the tail."""
    weight = config.sparse_weight if sparse_weight is None else sparse_weight
    s_dense, s_sparse = index.component_scores(mention_surface)
    scores = s_dense + weight * s_sparse
    order = index.rank(scores)
    chosen = [int(i) for i in order[: config.top_k]]

    if gold_id is not None and config.additive_k > 0:
        gold_ranked = [int(i) for i in order if index.ids[i] == gold_id]
        present = sum(1 for i in chosen if index.ids[i] == gold_id)
        needed = min(config.additive_k, len(gold_ranked)) - present
        if needed > 0:
            in_set = set(chosen)
            additions = [i for i in gold_ranked if i not in in_set][:needed]
            drop = [i for i in reversed(chosen) if index.ids[i] != gold_id][: len(additions)]
            chosen = [i for i in chosen if i not in set(drop)] + additions

    candidates = tuple(
        ScoredCandidate(
            index.surfaces[i],
            index.ids[i],
            float(s_sparse[i]),
            float(s_dense[i]),
            float(scores[i]),
            gold_id is not None and index.ids[i] == gold_id,
        )
        for i in chosen
    )
    return CandidateSet(mention_surface, gold_id, candidates, tuple(chosen))


def marginal_loss(candidate_set: CandidateSet, counter: Optional[SkipCounter] = None) -> float:
    """-log of the softmax mass on positive candidates; 0 when none is positive."""
    positive = np.array([c.is_positive for c in candidate_set.candidates], dtype=bool)
    if not positive.any():
        if counter is not None:
            counter.record(True)
        return 0.0
    if counter is not None:
        counter.record(False)
    scores = candidate_set.scores
    return max(0.0, float(logsumexp(scores) - logsumexp(scores[positive])))


def marginal_nll(scores: torch.Tensor, positive: torch.Tensor) -> torch.Tensor:
    """Per-row marginal negative log-likelihood over (batch, k) candidate scores.

    Rows without a positive get loss exactly 0 and a zero gradient.
    """
    has_positive = positive.any(dim=-1, keepdim=True)
    mask = positive | ~has_positive
    log_total = torch.logsumexp(scores, dim=-1)
    log_positive = torch.logsumexp(scores.masked_fill(~mask, float("-inf")), dim=-1)
    return log_total - log_positive
