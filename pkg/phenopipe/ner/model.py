"""Trainable word-pair grid model: training, prediction and persistence."""

import json
import logging
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn

from ..documents import AnnotationSet, Category, Consultation, Mention, Sentence
from ..exceptions import ConfigurationError, DataError, MissingArtifactError
from ..preprocess import project_many
from .encoders import TokenBatch, TokenEncoder, Vocabulary, build_token_encoder, make_batch
from .grid import DEFAULT_MAX_PATHS, GridLabel, WordPairGrid, decode_grid, encode_entities

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100
NUM_LABELS = len(GridLabel)
MAX_DISTANCE = 9


@dataclass
class GridModelConfig:
    epochs: int = 15
    batch_size: int = 8
    learning_rate: float = 1e-3
    encoder_learning_rate: float = 5e-5
    dropout: float = 0.3
    token_encoder: str = "bilstm"
    pretrained_model: Optional[str] = None
    embedding_dim: int = 64
    hidden_dim: int = 64
    use_distance_embeddings: bool = False
    key_only: bool = True
    max_paths: int = DEFAULT_MAX_PATHS
    grad_clip: float = 5.0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "embedding_dim", "hidden_dim", "max_paths"):
            if int(getattr(self, name)) <= 0:
                raise ConfigurationError(f"GridModelConfig.{name} must be positive")
        for name in ("learning_rate", "encoder_learning_rate", "grad_clip"):
            if float(getattr(self, name)) <= 0:
                raise ConfigurationError(f"GridModelConfig.{name} must be positive")
        if not 0.0 <= float(self.dropout) < 1.0:
            raise ConfigurationError("GridModelConfig.dropout must be in [0, 1)")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "GridModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (data or {}).items() if k in known})


class PairScorer(nn.Module):
    """Scores every ordered word pair from head/tail projections."""

    def __init__(self, input_dim: int, hidden_dim: int, dropout: float, use_distance: bool):
        super().__init__()
        self.head = nn.Linear(input_dim, hidden_dim)
        self.tail = nn.Linear(input_dim, hidden_dim)
        extra = 0
        self.distance = None
        self.region = None
        if use_distance:
            self.distance = nn.Embedding(2 * MAX_DISTANCE + 1, 16)
            self.region = nn.Embedding(3, 8)
            extra = 24
        self.mlp = nn.Sequential(
            nn.Linear(3 * hidden_dim + extra, hidden_dim),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(hidden_dim, NUM_LABELS),
        )

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        batch, n, _ = hidden.shape
        rows = self.head(hidden).unsqueeze(2).expand(-1, -1, n, -1)
        cols = self.tail(hidden).unsqueeze(1).expand(-1, n, -1, -1)
        features = [rows, cols, rows * cols]
        if self.distance is not None:
            index = torch.arange(n, device=hidden.device)
            offset = (index.unsqueeze(0) - index.unsqueeze(1)).clamp(-MAX_DISTANCE, MAX_DISTANCE)
            region = torch.sign(offset) + 1
            features.append(self.distance(offset + MAX_DISTANCE).expand(batch, -1, -1, -1))
            features.append(self.region(region).expand(batch, -1, -1, -1))
        return self.mlp(torch.cat(features, dim=-1))


class GridModel(nn.Module):
    def __init__(self, config: GridModelConfig, vocab: Vocabulary):
        super().__init__()
        self.config = config
        self.vocab = vocab
        self.encoder: TokenEncoder = build_token_encoder(
            config.token_encoder,
            len(vocab),
            config.embedding_dim,
            config.hidden_dim,
            config.dropout,
            config.pretrained_model,
        )
        self.scorer = PairScorer(
            self.encoder.output_dim,
            config.hidden_dim,
            config.dropout,
            config.use_distance_embeddings,
        )
        self.loss_history: List[float] = []

    def forward(self, batch: TokenBatch) -> torch.Tensor:
        """Per-cell label logits, shape (batch, n, n, labels)."""
        return self.scorer(self.encoder(batch))

    def batch_for(self, sentences: Sequence[Sentence]) -> TokenBatch:
        return make_batch([[t.surface for t in s.tokens] for s in sentences], self.vocab)

    def predict_grids(self, sentences: Sequence[Sentence]) -> List[WordPairGrid]:
        if not sentences:
            return []
        with torch.no_grad():
            logits = self(self.batch_for(sentences))
        labels = logits.argmax(dim=-1).cpu().numpy()
        grids = []
        for row, sentence in enumerate(sentences):
            n = len(sentence.tokens)
            grids.append(WordPairGrid(n, labels[row, :n, :n]).repaired())
        return grids


def grid_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean per-cell cross-entropy; padded cells carry IGNORE_INDEX."""
    return F.cross_entropy(
        logits.reshape(-1, NUM_LABELS), targets.reshape(-1), ignore_index=IGNORE_INDEX
    )


def target_tensor(grids: Sequence[WordPairGrid]) -> torch.Tensor:
    width = max(grid.n for grid in grids)
    targets = torch.full((len(grids), width, width), IGNORE_INDEX, dtype=torch.long)
    for row, grid in enumerate(grids):
        targets[row, : grid.n, : grid.n] = torch.as_tensor(grid.labels, dtype=torch.long)
    return targets


def training_grids(
    corpus: Sequence[Tuple[Sentence, Sequence[Mention]]], key_only: bool
) -> List[Tuple[Sentence, WordPairGrid]]:
    examples = []
    for sentence, mentions in corpus:
        if key_only:
            mentions = [m for m in mentions if m.category == Category.KEY_FINDING]
        examples.append((sentence, encode_entities(sentence, mentions)))
    return examples


def train_grid_model(
    corpus: Sequence[Tuple[Sentence, Sequence[Mention]]],
    config: Optional[GridModelConfig] = None,
    seed: int = 13,
) -> GridModel:
    """Fit a grid model by minimizing per-cell cross-entropy against encoded gold."""
    config = config or GridModelConfig()
    if not corpus:
        raise DataError("Cannot train a grid model on an empty corpus")
    examples = training_grids(corpus, config.key_only)

    torch.manual_seed(seed)
    rng = random.Random(seed)
    vocab = Vocabulary(t.surface for sentence, _ in examples for t in sentence.tokens)
    model = GridModel(config, vocab)

    encoder_params = list(model.encoder.parameters())
    encoder_lr = config.encoder_learning_rate if model.encoder.pretrained else config.learning_rate
    optimizer = torch.optim.AdamW(
        [
            {"params": encoder_params, "lr": encoder_lr},
            {"params": model.scorer.parameters(), "lr": config.learning_rate},
        ]
    )

    order = list(range(len(examples)))
    for epoch in range(config.epochs):
        model.train()
        rng.shuffle(order)
        total, batches = 0.0, 0
        for offset in range(0, len(order), config.batch_size):
            chunk = [examples[i] for i in order[offset : offset + config.batch_size]]
            logits = model(model.batch_for([sentence for sentence, _ in chunk]))
            loss = grid_loss(logits, target_tensor([grid for _, grid in chunk]))
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            optimizer.step()
            total += loss.item()
            batches += 1
        model.loss_history.append(total / batches)
        logger.info("grid epoch %d/%d loss %.5f", epoch + 1, config.epochs, total / batches)

    model.eval()
    return model


def predict(model: GridModel, consultation: Consultation) -> AnnotationSet:
    """Decode every sentence and project mentions to raw-text offsets."""
    sentences = [s for s in consultation.sentences if s.tokens]
    mentions: List[Mention] = []
    for sentence, grid in zip(sentences, model.predict_grids(sentences)):
        mentions.extend(decode_grid(grid, sentence, model.config.max_paths))
    return AnnotationSet.build(consultation.id, project_many(mentions, consultation.trace))


# ---------------------------------------------------------------------------
# Persistence: config.json + parameters.pt + vocab.txt


def save_grid_model(model: GridModel, directory: Union[str, Path]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "config.json", "w", encoding="utf-8") as f:
        json.dump(asdict(model.config), f, indent=2, sort_keys=True)
    (directory / "vocab.txt").write_text(model.vocab.to_text(), encoding="utf-8")
    torch.save(model.state_dict(), directory / "parameters.pt")
    logger.info("Saved grid model to %s", directory)


def load_grid_model(directory: Union[str, Path]) -> GridModel:
    directory = Path(directory)
    if not (directory / "parameters.pt").exists():
        raise MissingArtifactError(str(directory / "parameters.pt"), "train-ner")
    with open(directory / "config.json", encoding="utf-8") as f:
        config = GridModelConfig.from_dict(json.load(f))
    vocab = Vocabulary.from_text((directory / "vocab.txt").read_text(encoding="utf-8"))
    model = GridModel(config, vocab)
    model.load_state_dict(torch.load(directory / "parameters.pt", map_location="cpu"))
    model.eval()
    return model
