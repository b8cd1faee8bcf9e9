"""Corpus and annotation file formats.

- Corpus JSONL: one consultation per line,
  ``{"id", "text", "mentions": [{"fragments": [[s, e]], "category", "hpo_id"}]}``.
- Annotation TSV (gold and predictions):
  ``consultation_id<TAB>start-end;start-end<TAB>mention_text<TAB>category<TAB>hpo_id``.
- Challenge TSV: ``ObservationID<TAB>Text<TAB>HPO Term<TAB>Spans``.
"""

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .documents import AnnotationSet, Category, Mention, mention_text
from .exceptions import FormatError, InputError, OffsetError
from .ontology import HPO_ID_PATTERN, remap_id

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class CorpusDocument:
    """A consultation's raw text with its gold annotations."""

    id: str
    text: str
    gold: AnnotationSet

    def __post_init__(self):
        if self.gold.consultation_id != self.id:
            raise InputError(f"Gold annotations of {self.id} carry id {self.gold.consultation_id}")
        self.gold.validate_against(self.text)


def _parse_fragments(value: str) -> Tuple[Tuple[int, int], ...]:
    fragments = []
    for piece in value.split(";"):
        start, sep, end = piece.strip().partition("-")
        if not sep:
            raise ValueError(piece)
        fragments.append((int(start), int(end)))
    return tuple(fragments)


def _format_fragments(mention: Mention) -> str:
    return ";".join(f"{s}-{e}" for s, e in mention.fragments)


def remap_annotations(annotations: AnnotationSet, remap: Mapping[str, str]) -> AnnotationSet:
    if not remap:
        return annotations
    return AnnotationSet.build(
        annotations.consultation_id,
        (m.with_hpo_id(remap_id(m.hpo_id, remap)) for m in annotations.mentions),
    )


# ---------------------------------------------------------------------------
# JSONL corpus


def read_corpus_jsonl(
    path: PathLike, remap: Optional[Mapping[str, str]] = None
) -> List[CorpusDocument]:
    documents: List[CorpusDocument] = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                mentions = [
                    Mention(
                        tuple(tuple(fragment) for fragment in m["fragments"]),
                        Category.parse(m.get("category", "key")),
                        m.get("hpo_id"),
                    )
                    for m in record.get("mentions", [])
                ]
                gold = AnnotationSet.build(str(record["id"]), mentions)
                document = CorpusDocument(str(record["id"]), record["text"], gold)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, OffsetError) as e:
                raise FormatError(str(path), number, f"invalid corpus record: {e}")
            if document.id in seen:
                raise InputError(f"Duplicate consultation id {document.id} in {path}")
            seen.add(document.id)
            if remap:
                gold = remap_annotations(gold, remap)
                document = CorpusDocument(document.id, document.text, gold)
            documents.append(document)
    logger.info("Read %d consultations from %s", len(documents), path)
    return documents


def document_record(document: CorpusDocument) -> Dict:
    return {
        "id": document.id,
        "text": document.text,
        "mentions": [
            {
                "fragments": [list(f) for f in m.fragments],
                "category": m.category.value,
                "hpo_id": m.hpo_id,
            }
            for m in document.gold.mentions
        ],
    }


def write_corpus_jsonl(documents: Iterable[CorpusDocument], path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for document in documents:
            record = document_record(document)
            f.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Annotation TSV


def annotation_rows(annotations: AnnotationSet, text: Optional[str]) -> List[str]:
    rows = []
    for mention in annotations.mentions:
        surface = mention_text(mention, text) if text is not None else ""
        surface = " ".join(surface.split())
        rows.append(
            "\t".join(
                [
                    annotations.consultation_id,
                    _format_fragments(mention),
                    surface,
                    mention.category.value,
                    mention.hpo_id or "",
                ]
            )
        )
    return rows


def write_annotation_tsv(
    sets: Sequence[AnnotationSet], path: PathLike, texts: Optional[Mapping[str, str]] = None
) -> None:
    """Write sets sorted by consultation id; mention order is the set's order."""
    texts = texts or {}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for annotations in sorted(sets, key=lambda s: s.consultation_id):
            for row in annotation_rows(annotations, texts.get(annotations.consultation_id)):
                f.write(row + "\n")


def read_annotation_tsv(
    path: PathLike, include_ids: Optional[Iterable[str]] = None
) -> List[AnnotationSet]:
    """Parse an annotation TSV; `include_ids` adds empty sets for finding-free consultations."""
    grouped: "OrderedDict[str, List[Mention]]" = OrderedDict()
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            columns = line.split("\t")
            if number == 1 and columns[0] == "consultation_id":
                continue
            if len(columns) != 5:
                raise FormatError(
                    str(path), number, f"expected 5 tab-separated columns, got {len(columns)}"
                )
            consultation_id, fragments, _, category, hpo_id = columns
            if not consultation_id:
                raise FormatError(str(path), number, "empty consultation id")
            if hpo_id and not HPO_ID_PATTERN.match(hpo_id):
                raise FormatError(str(path), number, f"invalid HPO id {hpo_id!r}")
            try:
                mention = Mention(
                    _parse_fragments(fragments), Category.parse(category), hpo_id or None
                )
            except ValueError as e:
                raise FormatError(str(path), number, f"invalid fragments or category: {e}")
            except OffsetError as e:
                raise FormatError(str(path), number, e.message)
            grouped.setdefault(consultation_id, []).append(mention)
    for consultation_id in include_ids or ():
        grouped.setdefault(consultation_id, [])
    return [AnnotationSet.build(cid, mentions) for cid, mentions in sorted(grouped.items())]


# ---------------------------------------------------------------------------
# Challenge observation TSV


def load_challenge_tsv(
    path: PathLike, remap: Optional[Mapping[str, str]] = None
) -> List[CorpusDocument]:
    """Group observation rows by ObservationID; every mention is a key finding."""
    texts: "OrderedDict[str, str]" = OrderedDict()
    mentions: Dict[str, List[Mention]] = {}
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            columns = line.split("\t")
            if number == 1 and columns[0].strip().lower() == "observationid":
                continue
            if len(columns) != 4:
                raise FormatError(
                    str(path), number, "expected ObservationID, Text, HPO Term, Spans"
                )
            observation_id, text, hpo_id, spans = columns
            observation_id, hpo_id, spans = observation_id.strip(), hpo_id.strip(), spans.strip()
            if observation_id in texts and texts[observation_id] != text:
                raise FormatError(
                    str(path), number, f"text differs across rows of {observation_id}"
                )
            texts[observation_id] = text
            mentions.setdefault(observation_id, [])
            if hpo_id == "NA" or spans == "NA":
                continue
            if not HPO_ID_PATTERN.match(hpo_id):
                raise FormatError(str(path), number, f"invalid HPO id {hpo_id!r}")
            try:
                fragments = _parse_fragments(spans.replace(",", ";"))
                mention = Mention(fragments, Category.KEY_FINDING, remap_id(hpo_id, remap or {}))
                mention_text(mention, text)
            except (ValueError, OffsetError) as e:
                raise FormatError(str(path), number, f"invalid spans {spans!r}: {e}")
            mentions[observation_id].append(mention)
    return [
        CorpusDocument(oid, text, AnnotationSet.build(oid, mentions[oid]))
        for oid, text in texts.items()
    ]


def load_corpus(
    path: PathLike, corpus_format: str = "jsonl", remap: Optional[Mapping[str, str]] = None
) -> List[CorpusDocument]:
    if corpus_format == "challenge":
        return load_challenge_tsv(path, remap)
    return read_corpus_jsonl(path, remap)
