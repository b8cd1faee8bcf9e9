"""Token encoders for the grid model.

The default is a small trainable embedding + BiLSTM that needs no checkpoint.
A pretrained transformer can be plugged in when `transformers` is installed.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Type

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from ..exceptions import ConfigurationError

PAD, UNK = "<pad>", "<unk>"


class Vocabulary:
    """Lowercased token vocabulary; index 0 is padding, 1 is unknown."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: List[str] = [PAD, UNK]
        self.stoi: Dict[str, int] = {PAD: 0, UNK: 1}
        for token in tokens:
            self.add(token)

    def add(self, token: str) -> int:
        token = token.lower()
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def encode(self, words: Sequence[str]) -> List[int]:
        return [self.stoi.get(word.lower(), 1) for word in words]

    def __len__(self) -> int:
        return len(self.itos)

    def to_text(self) -> str:
        return "".join(f"{token}\n" for token in self.itos)

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        vocab = cls()
        for token in text.split("\n"):
            if token and token not in (PAD, UNK):
                vocab.add(token)
        return vocab


@dataclass
class TokenBatch:
    ids: torch.Tensor  # (batch, n)
    mask: torch.Tensor  # (batch, n) bool
    words: List[List[str]]

    @property
    def lengths(self) -> torch.Tensor:
        return self.mask.sum(dim=1)


def make_batch(sentences_words: Sequence[Sequence[str]], vocab: Vocabulary) -> TokenBatch:
    width = max(len(words) for words in sentences_words)
    ids = torch.zeros((len(sentences_words), width), dtype=torch.long)
    mask = torch.zeros((len(sentences_words), width), dtype=torch.bool)
    for row, words in enumerate(sentences_words):
        ids[row, : len(words)] = torch.tensor(vocab.encode(words), dtype=torch.long)
        mask[row, : len(words)] = True
    return TokenBatch(ids, mask, [list(words) for words in sentences_words])


class TokenEncoder(nn.Module):
    """Maps a TokenBatch to per-word vectors of size `output_dim`."""

    pretrained = False
    output_dim: int

    def forward(self, batch: TokenBatch) -> torch.Tensor:
        raise NotImplementedError


class BiLSTMTokenEncoder(TokenEncoder):
    def __init__(
        self, vocab_size: int, embedding_dim: int = 64, hidden_dim: int = 64, dropout: float = 0.3
    ):
        super().__init__()
        if hidden_dim % 2:
            raise ConfigurationError("hidden_dim must be even for a bidirectional LSTM")
        self.embedding = nn.Embedding(vocab_size, embedding_dim, padding_idx=0)
        self.dropout = nn.Dropout(dropout)
        self.lstm = nn.LSTM(
            embedding_dim, hidden_dim // 2, batch_first=True, bidirectional=True
        )
        self.output_dim = hidden_dim

    def forward(self, batch: TokenBatch) -> torch.Tensor:
        embedded = self.dropout(self.embedding(batch.ids))
        packed = pack_padded_sequence(
            embedded, batch.lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        output, _ = self.lstm(packed)
        output, _ = pad_packed_sequence(
            output, batch_first=True, total_length=batch.ids.size(1)
        )
        return self.dropout(output)


class TransformerTokenEncoder(TokenEncoder):
    """First-subword pooling over a pretrained transformer (e.g. ClinicalBERT)."""

    pretrained = True

    def __init__(self, model_name: str, dropout: float = 0.3, **_):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError:
            raise ConfigurationError(
                "transformers package not installed. Run: pip install 'phenopipe[transformers]'"
            )
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name)
        self.dropout = nn.Dropout(dropout)
        self.output_dim = self.model.config.hidden_size

    def forward(self, batch: TokenBatch) -> torch.Tensor:
        encoded = self.tokenizer(
            batch.words,
            is_split_into_words=True,
            return_tensors="pt",
            padding=True,
            truncation=True,
        )
        hidden = self.model(**encoded.to(self.model.device)).last_hidden_state
        width = batch.ids.size(1)
        pooled = hidden.new_zeros((len(batch.words), width, hidden.size(-1)))
        for row in range(len(batch.words)):
            seen = set()
            for position, word_id in enumerate(encoded.word_ids(row)):
                if word_id is not None and word_id not in seen and word_id < width:
                    seen.add(word_id)
                    pooled[row, word_id] = hidden[row, position]
        return self.dropout(pooled)


TOKEN_ENCODERS: Dict[str, Type[TokenEncoder]] = {
    "bilstm": BiLSTMTokenEncoder,
    "transformer": TransformerTokenEncoder,
}


def build_token_encoder(
    encoder_id: str,
    vocab_size: int,
    embedding_dim: int,
    hidden_dim: int,
    dropout: float,
    pretrained_model: Optional[str] = None,
) -> TokenEncoder:
    if encoder_id not in TOKEN_ENCODERS:
        raise ConfigurationError(
            f"Unknown token encoder {encoder_id!r}; choose from {sorted(TOKEN_ENCODERS)}"
        )
    if encoder_id == "transformer":
        if not pretrained_model:
            raise ConfigurationError("ner.grid.pretrained_model is required for 'transformer'")
        return TransformerTokenEncoder(pretrained_model, dropout=dropout)
    return BiLSTMTokenEncoder(vocab_size, embedding_dim, hidden_dim, dropout)
