"""Clinical text preprocessing with offset tracking.

Abbreviations and percentile comparisons are rewritten into plain prose.
Every rewrite is recorded in a RewriteTrace so that spans predicted on the
rewritten text can be projected back onto the raw text for scoring.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .documents import Consultation, Mention, Sentence, Token, merge_fragments
from .exceptions import ConfigurationError, FormatError, InputError

logger = logging.getLogger(__name__)

DEFAULT_LEXICON_PATH = Path(__file__).parent / "data" / "abbreviations.tsv"

TOKEN_PATTERN = re.compile(r"[^\W_]+|\S")
_SENTENCE_FINAL = {".", "!", "?"}
_COMPARATORS = {
    "<": "below",
    ">": "above",
    "≤": "at or below",
    "<=": "at or below",
    "≥": "at or above",
    ">=": "at or above",
    "=": "at",
}
_STATISTIC_PATTERN = re.compile(
    r"(?<=[^\W\d_])\s*(?P<cmp><=|>=|≤|≥|<|>|=)\s*"
    r"(?P<num>\d+(?:\.\d+)?)\s*%\s*(?P<tail>for\s+age)",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class Edit:
    orig_start: int
    orig_end: int
    new_start: int
    new_end: int
    rule_id: str

    @property
    def orig_span(self) -> Tuple[int, int]:
        return (self.orig_start, self.orig_end)

    @property
    def new_span(self) -> Tuple[int, int]:
        return (self.new_start, self.new_end)

    @property
    def delta(self) -> int:
        return (self.new_end - self.new_start) - (self.orig_end - self.orig_start)


@dataclass(frozen=True)
class RewriteTrace:
    original: str
    rewritten: str
    edits: Tuple[Edit, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "edits", tuple(self.edits))
        shift, cursor = 0, 0
        for edit in self.edits:
            if edit.orig_start < cursor or edit.orig_end < edit.orig_start:
                raise ValueError("Edit spans must be disjoint and sorted")
            if edit.new_start != edit.orig_start + shift:
                raise ValueError("Edit new_start is inconsistent with prior edits")
            segment = self.original[cursor : edit.orig_start]
            if self.rewritten[cursor + shift : edit.new_start] != segment:
                raise ValueError("Unedited text differs between original and rewrite")
            shift += edit.delta
            cursor = edit.orig_end
        if self.rewritten[cursor + shift :] != self.original[cursor:]:
            raise ValueError("Unedited tail differs between original and rewrite")

    @classmethod
    def identity(cls, text: str) -> "RewriteTrace":
        return cls(text, text, ())

    @property
    def is_identity(self) -> bool:
        return not self.edits

    # Rewritten -> original

    def _shift_back(self, position: int) -> int:
        return position - sum(e.delta for e in self.edits if e.new_end <= position)

    def to_original_start(self, position: int) -> int:
        for edit in self.edits:
            if edit.new_start <= position < edit.new_end:
                return edit.orig_start
        return self._shift_back(position)

    def to_original_end(self, position: int) -> int:
        for edit in self.edits:
            if edit.new_start < position <= edit.new_end:
                return edit.orig_end
        return self._shift_back(position)

    # Original -> rewritten

    def _shift_forward(self, position: int) -> int:
        return position + sum(e.delta for e in self.edits if e.orig_end <= position)

    def to_rewritten_start(self, position: int) -> int:
        for edit in self.edits:
            if edit.orig_start <= position < edit.orig_end:
                return edit.new_start
        return self._shift_forward(position)

    def to_rewritten_end(self, position: int) -> int:
        for edit in self.edits:
            if edit.orig_start < position <= edit.orig_end:
                return edit.new_end
        return self._shift_forward(position)


def rewrite(
    text: str, replacements: Iterable[Tuple[int, int, str, str]]
) -> RewriteTrace:
    """Apply sorted, disjoint (start, end, new_text, rule_id) replacements."""
    pieces: List[str] = []
    edits: List[Edit] = []
    cursor, shift = 0, 0
    for start, end, new_text, rule_id in sorted(replacements):
        if start < cursor:
            raise ValueError("Replacements overlap")
        pieces.append(text[cursor:start])
        new_start = start + shift
        pieces.append(new_text)
        edits.append(Edit(start, end, new_start, new_start + len(new_text), rule_id))
        shift += len(new_text) - (end - start)
        cursor = end
    pieces.append(text[cursor:])
    return RewriteTrace(text, "".join(pieces), tuple(edits))


def compose_traces(first: RewriteTrace, second: RewriteTrace) -> RewriteTrace:
    """Trace from first.original to second.rewritten."""
    if second.original != first.rewritten:
        raise ValueError("Traces do not chain")
    if first.is_identity:
        return RewriteTrace(first.original, second.rewritten, second.edits)
    if second.is_identity:
        return RewriteTrace(first.original, second.rewritten, first.edits)

    # Regions in the intermediate text touched by either rewrite.
    regions = sorted(
        [(e.new_start, e.new_end, e.rule_id) for e in first.edits]
        + [(e.orig_start, e.orig_end, e.rule_id) for e in second.edits]
    )
    clusters: List[List] = []
    for start, end, rule_id in regions:
        if clusters and start < clusters[-1][1]:
            clusters[-1][1] = max(clusters[-1][1], end)
            if rule_id not in clusters[-1][2]:
                clusters[-1][2].append(rule_id)
        else:
            clusters.append([start, end, [rule_id]])

    edits = []
    for start, end, rule_ids in clusters:
        edits.append(
            Edit(
                first.to_original_start(start),
                first.to_original_end(end),
                second.to_rewritten_start(start),
                second.to_rewritten_end(end),
                "+".join(rule_ids),
            )
        )
    return RewriteTrace(first.original, second.rewritten, tuple(edits))


# ---------------------------------------------------------------------------
# Abbreviations


@dataclass(frozen=True)
class AbbreviationLexicon:
    entries: Mapping[str, str]
    case_sensitive: bool = True
    _pattern: Optional[re.Pattern] = field(
        default=None, init=False, compare=False, repr=False
    )

    def __post_init__(self):
        entries = dict(self.entries)
        for abbreviation, expansion in entries.items():
            if not abbreviation.strip():
                raise ConfigurationError("Empty abbreviation in lexicon")
            if not expansion.strip():
                raise ConfigurationError(f"Empty expansion for {abbreviation!r}")
        object.__setattr__(self, "entries", entries)
        if entries:
            flags = 0 if self.case_sensitive else re.IGNORECASE
            alternation = "|".join(
                re.escape(a) for a in sorted(entries, key=lambda a: (-len(a), a))
            )
            pattern = re.compile(rf"(?<![^\W_])(?:{alternation})(?![^\W_])", flags)
            object.__setattr__(self, "_pattern", pattern)
            # No expansion may itself contain a key, otherwise rewrites cascade.
            for abbreviation, expansion in entries.items():
                if pattern.search(expansion):
                    raise ConfigurationError(
                        f"Expansion of {abbreviation!r} contains an abbreviation: "
                        f"{expansion!r}"
                    )

    def lookup(self, surface: str) -> Optional[str]:
        if self.case_sensitive:
            return self.entries.get(surface)
        folded = surface.lower()
        for abbreviation, expansion in self.entries.items():
            if abbreviation.lower() == folded:
                return expansion
        return None

    @property
    def pattern(self) -> Optional[re.Pattern]:
        return self._pattern


def load_lexicon(
    path: Union[str, Path], case_sensitive: bool = True
) -> AbbreviationLexicon:
    """Read an abbreviation<TAB>expansion TSV; '#' starts a comment line."""
    entries: Dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(str(path), number, "expected abbreviation<TAB>expansion")
            entries[parts[0].strip()] = parts[1].strip()
    return AbbreviationLexicon(entries, case_sensitive)


def default_lexicon() -> AbbreviationLexicon:
    return load_lexicon(DEFAULT_LEXICON_PATH)


def expand_abbreviations(text: str, lexicon: AbbreviationLexicon) -> RewriteTrace:
    if lexicon.pattern is None:
        return RewriteTrace.identity(text)
    replacements = []
    for match in lexicon.pattern.finditer(text):
        expansion = lexicon.lookup(match.group(0))
        if expansion is not None:
            replacements.append(
                (match.start(), match.end(), expansion, f"abbrev:{match.group(0)}")
            )
    return rewrite(text, replacements)


# ---------------------------------------------------------------------------
# Statistical expressions


def ordinal(number: str) -> str:
    """English ordinal of a numeric string: 1st, 2nd, 3rd, 11th, 97th."""
    if not number.isdigit():
        return f"{number}th"
    value = int(number)
    if 10 <= value % 100 <= 20:
        suffix = "th"
    else:
        suffix = {1: "st", 2: "nd", 3: "rd"}.get(value % 10, "th")
    return f"{number}{suffix}"


def expand_statistical_expressions(text: str) -> RewriteTrace:
    replacements = []
    for match in _STATISTIC_PATTERN.finditer(text):
        relation = _COMPARATORS[match.group("cmp")]
        phrase = (
            f" is {relation} the {ordinal(match.group('num'))} percentile "
            f"{' '.join(match.group('tail').split())}"
        )
        replacements.append((match.start(), match.end(), phrase, "stat:percentile"))
    return rewrite(text, replacements)


def preprocess_text(
    text: str,
    lexicon: Optional[AbbreviationLexicon] = None,
    expand_statistics: bool = True,
) -> RewriteTrace:
    """Abbreviation expansion followed by statistical expansion, as one trace."""
    trace = RewriteTrace.identity(text)
    if lexicon is not None:
        trace = expand_abbreviations(text, lexicon)
    if expand_statistics:
        trace = compose_traces(trace, expand_statistical_expressions(trace.rewritten))
    if trace.edits:
        logger.debug("Preprocessing applied %d edits", len(trace.edits))
    return trace


# ---------------------------------------------------------------------------
# Sentence splitting and tokenization


def sentence_split_and_tokenize(
    trace: RewriteTrace, consultation_id: str = "consultation"
) -> Consultation:
    """Split the rewritten text into sentences of letter/digit and punctuation tokens."""
    text = trace.rewritten
    if not text.strip():
        raise InputError(f"Consultation {consultation_id} has no text")

    sentences: List[Sentence] = []
    current: List[Token] = []
    for match in TOKEN_PATTERN.finditer(text):
        token = Token(match.start(), match.end(), match.group(0))
        if current and "\n" in text[current[-1].end : token.start]:
            sentences.append(Sentence(current[0].start, tuple(current)))
            current = []
        current.append(token)
        follows = text[token.end : token.end + 1]
        if token.surface in _SENTENCE_FINAL and (not follows or follows.isspace()):
            sentences.append(Sentence(current[0].start, tuple(current)))
            current = []
    if current:
        sentences.append(Sentence(current[0].start, tuple(current)))
    return Consultation(consultation_id, text, tuple(sentences), trace)


def tokenize(
    text: str,
    consultation_id: str = "consultation",
    lexicon: Optional[AbbreviationLexicon] = None,
    expand_statistics: bool = False,
) -> Consultation:
    """Preprocess (optionally) and tokenize raw consultation text."""
    if lexicon is None and not expand_statistics:
        trace = RewriteTrace.identity(text)
    else:
        trace = preprocess_text(text, lexicon, expand_statistics)
    return sentence_split_and_tokenize(trace, consultation_id)


def project_to_original(mention: Mention, trace: RewriteTrace) -> Mention:
    if trace.is_identity:
        return mention
    fragments = [
        (trace.to_original_start(start), trace.to_original_end(end))
        for start, end in mention.fragments
    ]
    return Mention(merge_fragments(fragments), mention.category, mention.hpo_id)


def project_many(mentions: Sequence[Mention], trace: Optional[RewriteTrace]) -> List[Mention]:
    if trace is None:
        return list(mentions)
    return [project_to_original(m, trace) for m in mentions]
