"""Character n-gram tf-idf arm of the candidate scorer."""

import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy import sparse as sp
from sklearn.feature_extraction.text import CountVectorizer, TfidfVectorizer
from sklearn.preprocessing import normalize

from ..exceptions import DataError, FormatError, MissingArtifactError
from ..ontology import FlatDictionary

logger = logging.getLogger(__name__)

DEFAULT_NGRAM_RANGE = (2, 3)


class SparseEncoder:
    """tf-idf over character n-grams; rows are L2-normalized when encoded."""

    def __init__(
        self,
        ngrams: Sequence[str],
        idf: Sequence[float],
        ngram_range: Tuple[int, int] = DEFAULT_NGRAM_RANGE,
    ):
        if len(ngrams) != len(idf):
            raise ValueError("n-gram inventory and idf weights differ in length")
        idf = np.asarray(idf, dtype=np.float64)
        if (idf < 0).any():
            raise ValueError("idf weights must be non-negative")
        self.ngram_range = tuple(ngram_range)
        self.ngrams: List[str] = list(ngrams)
        self.idf = idf
        self._counter = CountVectorizer(
            analyzer="char",
            ngram_range=self.ngram_range,
            lowercase=True,
            vocabulary={ngram: index for index, ngram in enumerate(self.ngrams)},
        )

    @property
    def fitted(self) -> bool:
        return bool(self.ngrams)

    def encode(self, texts: Sequence[str]) -> sp.csr_matrix:
        counts = self._counter.transform(list(texts)).astype(np.float64)
        weighted = sp.csr_matrix(counts.multiply(self.idf[np.newaxis, :]))
        return normalize(weighted, norm="l2", copy=False)

    def similarity(self, a: str, b: str) -> float:
        vectors = self.encode([a, b])
        return float(vectors[0].multiply(vectors[1]).sum())

    def scores(self, query: str, matrix: sp.csr_matrix) -> np.ndarray:
        """Cosine of `query` against every row of an encoded matrix."""
        return np.asarray((matrix @ self.encode([query]).T).todense()).ravel()

    def to_tsv(self) -> str:
        return "".join(
            f"{ngram}\t{float(weight)!r}\n" for ngram, weight in zip(self.ngrams, self.idf)
        )


def fit_sparse(
    dictionary: FlatDictionary, ngram_range: Tuple[int, int] = DEFAULT_NGRAM_RANGE
) -> SparseEncoder:
    """Compute the n-gram inventory and idf over dictionary surfaces."""
    if len(dictionary) == 0:
        raise DataError("Cannot fit the sparse encoder on an empty dictionary")
    vectorizer = TfidfVectorizer(analyzer="char", ngram_range=tuple(ngram_range), lowercase=True)
    vectorizer.fit(dictionary.surfaces)
    ngrams = vectorizer.get_feature_names_out().tolist()
    logger.debug("Sparse inventory: %d n-grams", len(ngrams))
    return SparseEncoder(ngrams, vectorizer.idf_, ngram_range)


def save_sparse(encoder: SparseEncoder, path: Union[str, Path]) -> None:
    """Write n-gram<TAB>idf lines."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(encoder.to_tsv())


def load_sparse(
    path: Union[str, Path], ngram_range: Tuple[int, int] = DEFAULT_NGRAM_RANGE
) -> SparseEncoder:
    if not Path(path).exists():
        raise MissingArtifactError(str(path), "train-nen")
    ngrams, idf = [], []
    with open(path, encoding="utf-8", newline="\n") as f:
        for number, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            # n-grams may themselves contain spaces but never tabs
            ngram, sep, weight = line.rpartition("\t")
            try:
                if not sep:
                    raise ValueError(line)
                idf.append(float(weight))
            except ValueError:
                raise FormatError(str(path), number, "expected n-gram<TAB>idf")
            ngrams.append(ngram)
    return SparseEncoder(ngrams, idf, ngram_range)
