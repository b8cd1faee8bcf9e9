"""Merge predictions of two extraction backends."""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Sequence

from .documents import AnnotationSet, Mention, fragments_overlap
from .exceptions import InputError


class MergeRule(str, Enum):
    UNION_DEDUP = "union_dedup"


@dataclass(frozen=True)
class MergePolicy:
    rule: MergeRule = MergeRule.UNION_DEDUP
    overlap_same_id_collapse: bool = True


def merge(a: AnnotationSet, b: AnnotationSet, policy: MergePolicy = MergePolicy()) -> AnnotationSet:
    """Union of both sets; on conflicts the mention from `a` wins."""
    if a.consultation_id != b.consultation_id:
        raise InputError(
            f"Cannot merge predictions for {a.consultation_id} and {b.consultation_id}"
        )
    kept: List[Mention] = list(a.mentions)
    seen = set(kept)
    for mention in b.mentions:
        if mention in seen:
            continue
        if policy.overlap_same_id_collapse and mention.hpo_id is not None:
            if any(
                other.hpo_id == mention.hpo_id and fragments_overlap(other, mention)
                for other in a.mentions
            ):
                continue
        kept.append(mention)
        seen.add(mention)
    return AnnotationSet.build(a.consultation_id, kept)


def merge_runs(
    a: Sequence[AnnotationSet], b: Sequence[AnnotationSet], policy: MergePolicy = MergePolicy()
) -> List[AnnotationSet]:
    """Merge two prediction runs document by document; documents present in one run pass through."""
    by_id_a: Dict[str, AnnotationSet] = {s.consultation_id: s for s in a}
    by_id_b: Dict[str, AnnotationSet] = {s.consultation_id: s for s in b}
    if len(by_id_a) != len(a) or len(by_id_b) != len(b):
        raise InputError("Duplicate consultation id within one prediction run")
    merged = []
    for consultation_id in sorted(set(by_id_a) | set(by_id_b)):
        empty = AnnotationSet(consultation_id, ())
        merged.append(
            merge(by_id_a.get(consultation_id, empty), by_id_b.get(consultation_id, empty), policy)
        )
    return merged
