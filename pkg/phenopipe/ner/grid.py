"""Word-pair label grid: encoding mentions into cells and decoding them back.

Cell (i, j) with i < j carries NNW when word j directly follows word i inside
an entity. Cell (t, h) with t >= h carries THW_KEY / THW_NORMAL when an entity
starts at word h and ends at word t.
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..documents import Category, Mention, Sentence, spans_to_tokens
from ..exceptions import AlignmentError

logger = logging.getLogger(__name__)

DEFAULT_MAX_PATHS = 64


class GridLabel(IntEnum):
    NONE = 0
    NNW = 1
    THW_KEY = 2
    THW_NORMAL = 3


THW_LABELS = {
    GridLabel.THW_KEY: Category.KEY_FINDING,
    GridLabel.THW_NORMAL: Category.NORMAL_FINDING,
}
CATEGORY_TO_THW = {category: label for label, category in THW_LABELS.items()}


@dataclass
class WordPairGrid:
    n: int
    labels: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "WordPairGrid":
        return cls(n, np.zeros((n, n), dtype=np.int64))

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.n, self.n):
            raise ValueError(f"Grid labels must be {self.n}x{self.n}")

    def is_valid(self) -> bool:
        upper = np.triu(np.ones((self.n, self.n), dtype=bool), k=1)
        nnw = self.labels == GridLabel.NNW
        thw = self.labels >= GridLabel.THW_KEY
        return not (nnw & ~upper).any() and not (thw & upper).any()

    def repaired(self) -> "WordPairGrid":
        """Zero NNW on or below the diagonal and THW above it."""
        labels = self.labels.copy()
        upper = np.triu(np.ones((self.n, self.n), dtype=bool), k=1)
        labels[(labels == GridLabel.NNW) & ~upper] = GridLabel.NONE
        labels[(labels >= GridLabel.THW_KEY) & upper] = GridLabel.NONE
        return WordPairGrid(self.n, labels)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, WordPairGrid)
            and self.n == other.n
            and np.array_equal(self.labels, other.labels)
        )


def _mention_token_indices(sentence: Sentence, mention: Mention) -> List[int]:
    indices = spans_to_tokens(sentence, mention)
    if indices is None:
        bad = next(
            (
                fragment
                for fragment in mention.fragments
                if spans_to_tokens(sentence, Mention((fragment,))) is None
            ),
            mention.fragments[0],
        )
        raise AlignmentError(f"Fragment {bad} is not aligned to token boundaries", bad)
    return indices


def encode_entities(sentence: Sentence, mentions: Sequence[Mention]) -> WordPairGrid:
    grid = WordPairGrid.empty(len(sentence.tokens))
    labels = grid.labels
    for mention in mentions:
        indices = _mention_token_indices(sentence, mention)
        for current, following in zip(indices, indices[1:]):
            if labels[current, following] == GridLabel.NONE:
                labels[current, following] = GridLabel.NNW
        tail, head = indices[-1], indices[0]
        thw = CATEGORY_TO_THW[mention.category]
        existing = labels[tail, head]
        if existing == GridLabel.NONE:
            labels[tail, head] = thw
        elif existing != thw:
            raise AlignmentError(
                f"Conflicting THW labels at cell ({tail}, {head})", mention.fragments[0]
            )
    return grid


def _indices_to_fragments(sentence: Sentence, path: Sequence[int]) -> Tuple:
    fragments = []
    run_start = previous = path[0]
    for index in path[1:]:
        if index != previous + 1:
            fragments.append((sentence.tokens[run_start].start, sentence.tokens[previous].end))
            run_start = index
        previous = index
    fragments.append((sentence.tokens[run_start].start, sentence.tokens[previous].end))
    return tuple(fragments)


def enumerate_paths(
    labels: np.ndarray, head: int, tail: int, max_paths: Optional[int] = None
) -> List[List[int]]:
    """All strictly increasing NNW paths head -> ... -> tail (depth-first)."""
    if head == tail:
        return [[head]]
    successors: Dict[int, List[int]] = {}
    paths: List[List[int]] = []
    stack: List[Tuple[int, List[int]]] = [(head, [head])]
    while stack:
        node, path = stack.pop()
        if node not in successors:
            successors[node] = [
                j for j in range(node + 1, tail + 1) if labels[node, j] == GridLabel.NNW
            ]
        for following in reversed(successors[node]):
            if following == tail:
                paths.append(path + [tail])
                if max_paths is not None and len(paths) >= max_paths:
                    return paths
            else:
                stack.append((following, path + [following]))
    return paths


def decode_grid(
    grid: WordPairGrid, sentence: Sentence, max_paths: int = DEFAULT_MAX_PATHS
) -> List[Mention]:
    labels = grid.labels
    found: Dict[Tuple, Mention] = {}
    tails, heads = np.nonzero(labels >= GridLabel.THW_KEY)
    for tail, head in sorted(zip(tails.tolist(), heads.tolist())):
        if tail < head:
            continue
        paths = enumerate_paths(labels, head, tail, max_paths)
        if len(paths) >= max_paths:
            logger.warning(
                "Path enumeration for THW cell (%d, %d) capped at %d", tail, head, max_paths
            )
        category = THW_LABELS[GridLabel(int(labels[tail, head]))]
        for path in paths:
            fragments = _indices_to_fragments(sentence, path)
            key = (fragments, category)
            if key not in found:
                found[key] = Mention(fragments, category)
    return sorted(found.values(), key=lambda m: (m.fragments, m.category.value))
