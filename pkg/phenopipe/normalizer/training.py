"""Dictionary pre-finetuning, marginal-likelihood training and the NEN ablation."""

import copy
import itertools
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..exceptions import DataError
from ..ontology import FlatDictionary
from .dense import DenseEncoder, build_dense_encoder
from .model import TrainedNormalizer
from .scoring import (
    CandidateSet,
    DictionaryIndex,
    NormalizerConfig,
    SkipCounter,
    marginal_nll,
    retrieve_candidates,
)
from .sparse import SparseEncoder, fit_sparse

logger = logging.getLogger(__name__)


class NenInstance(NamedTuple):
    surface: str
    hpo_id: str
    group: str = ""


@dataclass
class PreFinetuneConfig:
    enabled: bool = True
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 5e-3
    temperature: float = 0.1


# ---------------------------------------------------------------------------
# Pre-finetuning on dictionary synonyms


def synonym_holdout(dictionary: FlatDictionary, seed: int = 13) -> Dict[str, str]:
    """One held-out synonym for every id that has at least three."""
    rng = random.Random(seed)
    held = {}
    for hpo_id in sorted(dictionary.hpo_ids()):
        synonyms = dictionary.synonyms_of(hpo_id)
        if len(synonyms) >= 3:
            held[hpo_id] = rng.choice(synonyms)
    return held


def synonym_groups(
    dictionary: FlatDictionary, exclude: Optional[Dict[str, str]] = None
) -> Dict[str, List[str]]:
    exclude = exclude or {}
    groups = {}
    for hpo_id in sorted(dictionary.hpo_ids()):
        synonyms = [s for s in dictionary.synonyms_of(hpo_id) if s != exclude.get(hpo_id)]
        if len(synonyms) >= 2:
            groups[hpo_id] = synonyms
    return groups


def alignment_metric(
    dense: DenseEncoder, dictionary: FlatDictionary, holdout: Optional[Dict[str, str]] = None
) -> float:
    """Mean cosine of same-id pairs minus mean cosine of different-id pairs.

    With a holdout, each pair joins a held-out synonym to a kept synonym, so
    the measure covers surfaces that pre-finetuning never trained on.
    """
    groups = synonym_groups(dictionary)
    if not groups:
        raise DataError("No id has two or more synonyms")
    held = holdout or {}
    surfaces = sorted({s for synonyms in groups.values() for s in synonyms})
    position = {s: i for i, s in enumerate(surfaces)}
    vectors = F.normalize(dense.embed(surfaces).double(), dim=-1)
    similarity = (vectors @ vectors.T).numpy()

    positive, negative = [], []
    ids = sorted(groups)
    for hpo_id in ids:
        anchors = [held[hpo_id]] if hpo_id in held else groups[hpo_id]
        for anchor in anchors:
            a = position[anchor]
            for other_id in ids:
                for other in groups[other_id]:
                    if other == anchor:
                        continue
                    target = positive if other_id == hpo_id else negative
                    target.append(similarity[a, position[other]])
    if not positive or not negative:
        raise DataError("Alignment needs at least two ids with synonyms")
    return float(np.mean(positive) - np.mean(negative))


def contrastive_loss(
    anchors: torch.Tensor, positives: torch.Tensor, temperature: float
) -> torch.Tensor:
    """Symmetric in-batch InfoNCE; row i of each side is the matching pair."""
    logits = F.normalize(anchors, dim=-1) @ F.normalize(positives, dim=-1).T / temperature
    labels = torch.arange(logits.size(0), device=logits.device)
    return (F.cross_entropy(logits, labels) + F.cross_entropy(logits.T, labels)) / 2


def pre_finetune(
    dense: DenseEncoder,
    dictionary: FlatDictionary,
    epochs: int,
    config: Optional[PreFinetuneConfig] = None,
    seed: int = 13,
) -> DenseEncoder:
    """Pull synonyms of one id together against in-batch negatives.

    Each batch holds at most one pair per id, so no in-batch negative is a
    hidden positive. One synonym per id is held out for `alignment_metric`.
    """
    config = config or PreFinetuneConfig()
    holdout = synonym_holdout(dictionary, seed)
    groups = synonym_groups(dictionary, holdout)
    if not groups:
        raise DataError("No id has two or more synonyms; nothing to pre-finetune on")
    if epochs <= 0:
        return dense

    torch.manual_seed(seed)
    rng = random.Random(seed)
    pairs = {hpo_id: list(itertools.combinations(s, 2)) for hpo_id, s in groups.items()}
    before = alignment_metric(dense, dictionary, holdout)
    optimizer = torch.optim.Adam(dense.parameters(), lr=config.learning_rate)
    dense.train()
    for epoch in range(epochs):
        chosen = [rng.choice(pairs[hpo_id]) for hpo_id in sorted(pairs)]
        rng.shuffle(chosen)
        total = 0.0
        for offset in range(0, len(chosen), config.batch_size):
            batch = chosen[offset : offset + config.batch_size]
            if len(batch) < 2:
                continue
            loss = contrastive_loss(
                dense([a for a, _ in batch]), dense([b for _, b in batch]), config.temperature
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item()
        logger.debug("pre-finetune epoch %d/%d loss %.4f", epoch + 1, epochs, total)
    dense.eval()
    after = alignment_metric(dense, dictionary, holdout)
    logger.info("Pre-finetune alignment %.4f -> %.4f", before, after)
    return dense


# ---------------------------------------------------------------------------
# Synonym-marginalization training


def batch_loss(
    dense: DenseEncoder,
    sparse_weight: torch.Tensor,
    candidate_sets: Sequence[CandidateSet],
) -> torch.Tensor:
    """Mean marginal NLL with live dense scores and fixed sparse scores."""
    queries = dense([cs.mention_surface for cs in candidate_sets])
    width = len(candidate_sets[0].candidates)
    surfaces = [c.surface for cs in candidate_sets for c in cs.candidates]
    candidates = dense(surfaces).view(len(candidate_sets), width, -1)
    s_dense = (queries.unsqueeze(1) * candidates).sum(dim=-1)
    s_sparse = torch.tensor(
        [[c.s_sparse for c in cs.candidates] for cs in candidate_sets],
        dtype=s_dense.dtype,
        device=s_dense.device,
    )
    positive = torch.tensor(
        [[c.is_positive for c in cs.candidates] for cs in candidate_sets],
        dtype=torch.bool,
        device=s_dense.device,
    )
    return marginal_nll(s_dense + sparse_weight * s_sparse, positive).mean()


def check_gold_ids(instances: Iterable[NenInstance], dictionary: FlatDictionary) -> None:
    known = dictionary.hpo_ids()
    missing = {instance.hpo_id for instance in instances if instance.hpo_id not in known}
    if missing:
        raise DataError("Gold ids absent from the dictionary", missing)


def train_normalizer(
    train: Sequence[Tuple[str, ...]],
    dictionary: FlatDictionary,
    config: Optional[NormalizerConfig] = None,
    dense: Optional[DenseEncoder] = None,
    sparse: Optional[SparseEncoder] = None,
    seed: int = 13,
) -> TrainedNormalizer:
    """Train dense parameters and the sparse weight on (surface, gold id) pairs."""
    config = config or NormalizerConfig()
    instances = [NenInstance(*item) for item in train]
    check_gold_ids(instances, dictionary)

    torch.manual_seed(seed)
    rng = random.Random(seed)
    sparse = sparse or fit_sparse(dictionary)
    dense = dense or build_dense_encoder()
    dtype = next(dense.parameters()).dtype
    sparse_weight = nn.Parameter(torch.tensor(float(config.sparse_weight), dtype=dtype))
    index = DictionaryIndex(dictionary, sparse, dense)
    counter = SkipCounter()
    history: List[float] = []

    if not instances:
        logger.warning("No normalization instances; returning the initial encoders")
    elif config.epochs > 0:
        optimizer = torch.optim.Adam(
            list(dense.parameters()) + [sparse_weight], lr=config.learning_rate
        )
        candidate_sets: List[CandidateSet] = []
        for epoch in range(config.epochs):
            if epoch % config.refresh_every == 0:
                index.refresh()
                weight = float(sparse_weight.detach())
                candidate_sets = [
                    retrieve_candidates(i.surface, index, config, weight, i.hpo_id)
                    for i in instances
                ]
                skipped = sum(1 for cs in candidate_sets if cs.positives == 0)
                for cs in candidate_sets:
                    counter.record(cs.positives == 0)
                if skipped:
                    logger.warning(
                        "%d/%d instances without a positive candidate", skipped, len(instances)
                    )

            dense.train()
            order = list(range(len(candidate_sets)))
            rng.shuffle(order)
            total = 0.0
            for offset in range(0, len(order), config.batch_size):
                batch = [candidate_sets[i] for i in order[offset : offset + config.batch_size]]
                loss = batch_loss(dense, sparse_weight, batch)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += loss.item() * len(batch)
            history.append(total / len(order))
            logger.info(
                "nen epoch %d/%d loss %.5f lambda %.4f",
                epoch + 1,
                config.epochs,
                history[-1],
                float(sparse_weight.detach()),
            )

    dense.eval()
    index.refresh()
    return TrainedNormalizer(
        dictionary=dictionary,
        sparse=sparse,
        dense=dense,
        sparse_weight=float(sparse_weight.detach()),
        config=config,
        index=index,
        skip_counter=counter,
        loss_history=history,
    )


# ---------------------------------------------------------------------------
# Ablation


ABLATION_VARIANTS = ("full", "no-additive", "no-prefinetune", "no-finetune")


@dataclass
class AblationRow:
    variant: str
    top1_accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass
class AblationReport:
    rows: List[AblationRow] = field(default_factory=list)

    def by_variant(self) -> Dict[str, AblationRow]:
        return {row.variant: row for row in self.rows}

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {
            row.variant: {
                "top1_accuracy": row.top1_accuracy,
                "precision": row.precision,
                "recall": row.recall,
                "f1": row.f1,
            }
            for row in self.rows
        }


def evaluate_normalizer(trained: TrainedNormalizer, test: Sequence[NenInstance]) -> AblationRow:
    """Top-1 accuracy plus NormOnly-style set scores grouped by `group`."""
    gold_sets: Dict[str, set] = defaultdict(set)
    pred_sets: Dict[str, set] = defaultdict(set)
    correct = 0
    for instance in test:
        predicted, _ = trained.normalize_text(instance.surface)
        correct += int(predicted == instance.hpo_id)
        gold_sets[instance.group].add(instance.hpo_id)
        pred_sets[instance.group].add(predicted)
    tp = sum(len(gold_sets[g] & pred_sets[g]) for g in gold_sets)
    n_pred = sum(len(s) for s in pred_sets.values())
    n_gold = sum(len(s) for s in gold_sets.values())
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return AblationRow("", correct / len(test) if test else 0.0, precision, recall, f1)


def run_ablation(
    train: Sequence[Tuple[str, ...]],
    test: Sequence[Tuple[str, ...]],
    dictionary: FlatDictionary,
    config: Optional[NormalizerConfig] = None,
    pre_config: Optional[PreFinetuneConfig] = None,
    dense_settings: Optional[Dict] = None,
    seed: int = 13,
) -> AblationReport:
    """Train and score full / no-additive / no-prefinetune / no-finetune."""
    config = config or NormalizerConfig()
    pre_config = pre_config or PreFinetuneConfig()
    dense_settings = dict(dense_settings or {})
    encoder_id = dense_settings.pop("encoder", "ngram_bag")
    test_instances = [NenInstance(*item) for item in test]
    sparse = fit_sparse(dictionary)

    def fresh_encoder() -> DenseEncoder:
        torch.manual_seed(seed)
        return build_dense_encoder(encoder_id, **dense_settings)

    additive = config.additive_k or 1
    prefinetuned = pre_finetune(fresh_encoder(), dictionary, pre_config.epochs, pre_config, seed)
    variants = {
        "full": (copy.deepcopy(prefinetuned), replace(config, additive_k=additive)),
        "no-additive": (copy.deepcopy(prefinetuned), replace(config, additive_k=0)),
        "no-prefinetune": (fresh_encoder(), replace(config, additive_k=additive)),
        "no-finetune": (fresh_encoder(), replace(config, epochs=0)),
    }

    report = AblationReport()
    for name in ABLATION_VARIANTS:
        dense, variant_config = variants[name]
        trained = train_normalizer(train, dictionary, variant_config, dense, sparse, seed)
        row = evaluate_normalizer(trained, test_instances)
        row.variant = name
        report.rows.append(row)
        logger.info("ablation %s top-1 %.4f", name, row.top1_accuracy)
    return report
