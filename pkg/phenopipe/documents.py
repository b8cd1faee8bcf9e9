"""Shared document vocabulary: consultations, tokens, mentions and annotations.

All offsets are 0-based, half-open and counted in unicode code points.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Iterable, List, Optional, Sequence, Tuple

from .exceptions import OffsetError

if TYPE_CHECKING:
    from .preprocess import RewriteTrace

Fragment = Tuple[int, int]


class Category(str, Enum):
    """Finding category carried by a mention."""

    KEY_FINDING = "key"
    NORMAL_FINDING = "normal"

    @classmethod
    def parse(cls, value: str) -> "Category":
        value = (value or "").strip().lower()
        aliases = {
            "key": cls.KEY_FINDING,
            "key_finding": cls.KEY_FINDING,
            "normal": cls.NORMAL_FINDING,
            "normal_finding": cls.NORMAL_FINDING,
        }
        if value not in aliases:
            raise ValueError(f"Unknown category: {value!r}")
        return aliases[value]


@dataclass(frozen=True)
class Token:
    start: int
    end: int
    surface: str

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise OffsetError(f"Invalid token span ({self.start}, {self.end})")
        if len(self.surface) != self.end - self.start:
            raise OffsetError(
                f"Token surface {self.surface!r} does not match span "
                f"({self.start}, {self.end})"
            )


@dataclass(frozen=True)
class Sentence:
    """A run of tokens; `start` is the sentence offset in the consultation text."""

    start: int
    tokens: Tuple[Token, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        previous_end = self.start
        for token in self.tokens:
            if token.start < previous_end:
                raise OffsetError(
                    f"Tokens overlap or precede sentence start at {token.start}"
                )
            previous_end = token.end

    @property
    def end(self) -> int:
        return self.tokens[-1].end if self.tokens else self.start

    def token_index_by_start(self) -> dict:
        return {token.start: index for index, token in enumerate(self.tokens)}

    def token_index_by_end(self) -> dict:
        return {token.end: index for index, token in enumerate(self.tokens)}


@dataclass(frozen=True)
class Consultation:
    """One dysmorphology observation record.

    `text` is the text the sentences were tokenized from. When the record was
    preprocessed, `trace` maps it back to the raw text (`trace.original`).
    """

    id: str
    text: str
    sentences: Tuple[Sentence, ...] = ()
    trace: Optional["RewriteTrace"] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.id:
            raise OffsetError("Consultation id must be nonempty")
        object.__setattr__(self, "sentences", tuple(self.sentences))
        previous_end = 0
        for sentence in self.sentences:
            if sentence.start < previous_end or sentence.end > len(self.text):
                raise OffsetError(
                    f"Sentence at {sentence.start} overlaps its predecessor or "
                    f"leaves the text of consultation {self.id}"
                )
            previous_end = sentence.end

    @property
    def original_text(self) -> str:
        return self.trace.original if self.trace is not None else self.text


@dataclass(frozen=True)
class Mention:
    """A possibly discontinuous entity.

    Equality and hashing use (fragments, hpo_id) only; category is ignored.
    """

    fragments: Tuple[Fragment, ...]
    category: Category = field(default=Category.KEY_FINDING, compare=False)
    hpo_id: Optional[str] = None

    def __post_init__(self):
        fragments = tuple(sorted((int(s), int(e)) for s, e in self.fragments))
        if not fragments:
            raise OffsetError("A mention needs at least one fragment")
        for start, end in fragments:
            if start < 0 or end <= start:
                raise OffsetError(f"Empty or negative fragment ({start}, {end})")
        for (_, previous_end), (start, end) in zip(fragments, fragments[1:]):
            if start < previous_end:
                raise OffsetError(f"Overlapping fragments in mention: {fragments}")
        object.__setattr__(self, "fragments", fragments)
        if not isinstance(self.category, Category):
            object.__setattr__(self, "category", Category.parse(self.category))

    @property
    def is_discontinuous(self) -> bool:
        return len(self.fragments) >= 2

    @property
    def start(self) -> int:
        return self.fragments[0][0]

    @property
    def end(self) -> int:
        return self.fragments[-1][1]

    def with_hpo_id(self, hpo_id: Optional[str]) -> "Mention":
        return Mention(self.fragments, self.category, hpo_id)

    def with_category(self, category: Category) -> "Mention":
        return Mention(self.fragments, category, self.hpo_id)

    def shifted(self, offset: int) -> "Mention":
        return Mention(
            tuple((s + offset, e + offset) for s, e in self.fragments),
            self.category,
            self.hpo_id,
        )


def sort_key(mention: Mention):
    return (mention.fragments, mention.hpo_id or "", mention.category.value)


def mention_text(mention: Mention, text: str) -> str:
    """Fragment substrings joined by a single space, in fragment order."""
    for start, end in mention.fragments:
        if end > len(text):
            raise OffsetError(
                f"Fragment ({start}, {end}) exceeds text length {len(text)}"
            )
    return " ".join(text[start:end] for start, end in mention.fragments)


def overlap_length(a: Mention, b: Mention) -> int:
    """Total number of characters shared by the fragments of two mentions."""
    total = 0
    for a_start, a_end in a.fragments:
        for b_start, b_end in b.fragments:
            total += max(0, min(a_end, b_end) - max(a_start, b_start))
    return total


def fragments_overlap(a: Mention, b: Mention) -> bool:
    return overlap_length(a, b) > 0


@dataclass(frozen=True)
class AnnotationSet:
    consultation_id: str
    mentions: Tuple[Mention, ...] = ()

    def __post_init__(self):
        mentions = tuple(self.mentions)
        if len(set(mentions)) != len(mentions):
            raise OffsetError(
                f"Duplicate (fragments, hpo_id) mention in {self.consultation_id}"
            )
        object.__setattr__(self, "mentions", mentions)

    @classmethod
    def build(cls, consultation_id: str, mentions: Iterable[Mention]) -> "AnnotationSet":
        """Deduplicate (first occurrence wins) and sort by position."""
        unique = list(dict.fromkeys(mentions))
        return cls(consultation_id, tuple(sorted(unique, key=sort_key)))

    def validate_against(self, text: str) -> None:
        for mention in self.mentions:
            mention_text(mention, text)

    def key_findings(self) -> List[Mention]:
        return [m for m in self.mentions if m.category == Category.KEY_FINDING]

    def __len__(self) -> int:
        return len(self.mentions)


def spans_to_tokens(
    sentence: Sentence, mention: Mention
) -> Optional[List[int]]:
    """Token indices covered by a mention, or None if it is not token-aligned."""
    by_start = sentence.token_index_by_start()
    by_end = sentence.token_index_by_end()
    indices: List[int] = []
    for start, end in mention.fragments:
        if start not in by_start or end not in by_end:
            return None
        first, last = by_start[start], by_end[end]
        if last < first:
            return None
        indices.extend(range(first, last + 1))
    return indices


def merge_fragments(fragments: Sequence[Fragment]) -> Tuple[Fragment, ...]:
    """Sort fragments and merge the ones that overlap."""
    merged: List[List[int]] = []
    for start, end in sorted(fragments):
        if merged and start < merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return tuple((s, e) for s, e in merged)
