"""Dense surface encoders for the normalizer.

`NgramBagEncoder` is the default: hashed word and character n-grams pooled
by an EmbeddingBag and projected linearly. It trains in seconds on a CPU.
`TransformerDenseEncoder` wraps a pretrained checkpoint (e.g. SapBERT) when
`transformers` is installed.
"""

import inspect
import zlib
from typing import Any, Dict, List, Sequence, Tuple, Type

import torch
import torch.nn.functional as F
from torch import nn

from ..exceptions import ConfigurationError
from ..preprocess import TOKEN_PATTERN


class DenseEncoder(nn.Module):
    """Maps surface strings to vectors of size `output_dim`."""

    output_dim: int

    def forward(self, texts: Sequence[str]) -> torch.Tensor:
        raise NotImplementedError

    def settings(self) -> Dict[str, Any]:
        """Constructor keyword arguments, persisted next to the parameters."""
        raise NotImplementedError

    @torch.no_grad()
    def embed(self, texts: Sequence[str], batch_size: int = 256) -> torch.Tensor:
        """Eval-mode embeddings without gradient, restoring the previous mode."""
        was_training = self.training
        self.eval()
        chunks = [self(texts[i : i + batch_size]) for i in range(0, len(texts), batch_size)]
        self.train(was_training)
        if not chunks:
            return torch.zeros((0, self.output_dim))
        return torch.cat(chunks)


def hashed_features(
    text: str, buckets: int, ngram_range: Tuple[int, int] = (2, 4)
) -> List[int]:
    """Bucket ids of the lowercased words and boundary-marked char n-grams."""
    lowered = " ".join(text.lower().split())
    features = [f"w:{word}" for word in TOKEN_PATTERN.findall(lowered)]
    marked = f"<{lowered}>"
    low, high = ngram_range
    for n in range(low, high + 1):
        features.extend(f"c:{marked[i:i + n]}" for i in range(len(marked) - n + 1))
    return [zlib.crc32(feature.encode("utf-8")) % buckets for feature in features]


class NgramBagEncoder(DenseEncoder):
    def __init__(
        self,
        dim: int = 64,
        buckets: int = 8192,
        embedding_dim: int = 64,
        ngram_range: Tuple[int, int] = (2, 4),
        normalize: bool = False,
    ):
        super().__init__()
        if dim <= 0 or buckets <= 0 or embedding_dim <= 0:
            raise ConfigurationError("Dense encoder sizes must be positive")
        self.dim = dim
        self.buckets = buckets
        self.embedding_dim = embedding_dim
        self.ngram_range = tuple(ngram_range)
        self.normalize = normalize
        self.bag = nn.EmbeddingBag(buckets, embedding_dim, mode="mean")
        nn.init.normal_(self.bag.weight, std=0.1)
        self.projection = nn.Linear(embedding_dim, dim)
        self.output_dim = dim

    def settings(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "buckets": self.buckets,
            "embedding_dim": self.embedding_dim,
            "ngram_range": list(self.ngram_range),
            "normalize": self.normalize,
        }

    def forward(self, texts: Sequence[str]) -> torch.Tensor:
        indices: List[int] = []
        offsets: List[int] = []
        for text in texts:
            offsets.append(len(indices))
            indices.extend(hashed_features(text, self.buckets, self.ngram_range))
        device = self.bag.weight.device
        vectors = self.projection(
            self.bag(
                torch.tensor(indices, dtype=torch.long, device=device),
                torch.tensor(offsets, dtype=torch.long, device=device),
            )
        )
        if self.normalize:
            vectors = F.normalize(vectors, dim=-1)
        return vectors


class TransformerDenseEncoder(DenseEncoder):
    """[CLS] pooling over a pretrained transformer."""

    def __init__(self, model_name: str, max_length: int = 25, normalize: bool = False):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError:
            raise ConfigurationError(
                "transformers package not installed. Run: pip install 'phenopipe[transformers]'"
            )
        self.model_name = model_name
        self.max_length = max_length
        self.normalize = normalize
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name)
        self.output_dim = self.model.config.hidden_size

    def settings(self) -> Dict[str, Any]:
        return {
            "model_name": self.model_name,
            "max_length": self.max_length,
            "normalize": self.normalize,
        }

    def forward(self, texts: Sequence[str]) -> torch.Tensor:
        encoded = self.tokenizer(
            list(texts),
            padding=True,
            truncation=True,
            max_length=self.max_length,
            return_tensors="pt",
        ).to(self.model.device)
        vectors = self.model(**encoded).last_hidden_state[:, 0]
        if self.normalize:
            vectors = F.normalize(vectors, dim=-1)
        return vectors


DENSE_ENCODERS: Dict[str, Type[DenseEncoder]] = {
    "ngram_bag": NgramBagEncoder,
    "transformer": TransformerDenseEncoder,
}


def build_dense_encoder(encoder_id: str = "ngram_bag", **settings: Any) -> DenseEncoder:
    if encoder_id not in DENSE_ENCODERS:
        raise ConfigurationError(
            f"Unknown dense encoder {encoder_id!r}; choose from {sorted(DENSE_ENCODERS)}"
        )
    cls = DENSE_ENCODERS[encoder_id]
    accepted = inspect.signature(cls.__init__).parameters
    kwargs = {k: v for k, v in settings.items() if k in accepted and v is not None}
    if "ngram_range" in kwargs:
        kwargs["ngram_range"] = tuple(kwargs["ngram_range"])
    return cls(**kwargs)


def encoder_id_of(encoder: DenseEncoder) -> str:
    for encoder_id, cls in DENSE_ENCODERS.items():
        if type(encoder) is cls:
            return encoder_id
    raise ConfigurationError(f"Unregistered dense encoder type {type(encoder).__name__}")
