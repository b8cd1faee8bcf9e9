"""Trained normalizer: inference and artifact persistence."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import torch

from ..documents import Mention, mention_text
from ..exceptions import DataError, MissingArtifactError
from ..ontology import FlatDictionary
from .dense import DenseEncoder, build_dense_encoder, encoder_id_of
from .scoring import (
    CandidateSet,
    DictionaryIndex,
    NormalizerConfig,
    SkipCounter,
    retrieve_candidates,
)
from .sparse import SparseEncoder, load_sparse, save_sparse

logger = logging.getLogger(__name__)


@dataclass
class TrainedNormalizer:
    dictionary: FlatDictionary
    sparse: SparseEncoder
    dense: DenseEncoder
    sparse_weight: float
    config: NormalizerConfig = field(default_factory=NormalizerConfig)
    index: Optional[DictionaryIndex] = None
    skip_counter: SkipCounter = field(default_factory=SkipCounter)
    loss_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.dictionary) == 0:
            raise DataError("Cannot normalize against an empty dictionary")
        if self.index is None:
            self.dense.eval()
            self.index = DictionaryIndex(self.dictionary, self.sparse, self.dense)

    def candidates(self, surface: str, top_k: Optional[int] = None) -> CandidateSet:
        config = self.config
        if top_k is not None and top_k != config.top_k:
            config = NormalizerConfig(top_k=top_k, additive_k=0)
        return retrieve_candidates(surface, self.index, config, self.sparse_weight)

    def normalize_text(self, surface: str) -> Tuple[str, float]:
        best = self.candidates(surface, top_k=1).candidates[0]
        return best.hpo_id, best.score


def normalize(mention: Mention, text: str, trained: TrainedNormalizer) -> Tuple[str, float]:
    """HPO id and score of the best dictionary entry for a mention."""
    return trained.normalize_text(mention_text(mention, text))


# ---------------------------------------------------------------------------
# Persistence: config.json + dense.pt + sparse_idf.tsv + state.json


def save_normalizer(trained: TrainedNormalizer, directory: Union[str, Path]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    config = {
        "normalizer": asdict(trained.config),
        "dense": {"encoder": encoder_id_of(trained.dense), **trained.dense.settings()},
        "sparse": {"ngram_range": list(trained.sparse.ngram_range)},
    }
    with open(directory / "config.json", "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2, sort_keys=True)
    torch.save(trained.dense.state_dict(), directory / "dense.pt")
    save_sparse(trained.sparse, directory / "sparse_idf.tsv")
    state = {
        "sparse_weight": trained.sparse_weight,
        "dictionary_checksum": trained.dictionary.checksum(),
        "dictionary_version": trained.dictionary.version_tag,
        "skipped_instances": trained.skip_counter.skipped,
        "loss_history": trained.loss_history,
    }
    with open(directory / "state.json", "w", encoding="utf-8") as f:
        json.dump(state, f, indent=2, sort_keys=True)
    logger.info("Saved normalizer to %s", directory)


def load_normalizer(directory: Union[str, Path], dictionary: FlatDictionary) -> TrainedNormalizer:
    """Load a normalizer; refuses a dictionary other than the one it was trained on."""
    directory = Path(directory)
    for name in ("config.json", "dense.pt", "sparse_idf.tsv", "state.json"):
        if not (directory / name).exists():
            raise MissingArtifactError(str(directory / name), "train-nen")
    with open(directory / "state.json", encoding="utf-8") as f:
        state = json.load(f)
    if state["dictionary_checksum"] != dictionary.checksum():
        raise DataError(
            f"Normalizer in {directory} was trained on a different dictionary "
            f"({state.get('dictionary_version')}); rerun 'phenopipe train-nen'"
        )
    with open(directory / "config.json", encoding="utf-8") as f:
        config = json.load(f)
    dense_settings = dict(config["dense"])
    dense = build_dense_encoder(dense_settings.pop("encoder"), **dense_settings)
    dense.load_state_dict(torch.load(directory / "dense.pt", map_location="cpu"))
    dense.eval()
    sparse = load_sparse(directory / "sparse_idf.tsv", tuple(config["sparse"]["ngram_range"]))
    return TrainedNormalizer(
        dictionary=dictionary,
        sparse=sparse,
        dense=dense,
        sparse_weight=float(state["sparse_weight"]),
        config=NormalizerConfig.from_dict(config["normalizer"]),
        loss_history=list(state.get("loss_history", [])),
    )
