"""Challenge metrics: NormOnly, ExactExtNorm and OverExtNorm micro P/R/F1.

Only key findings carrying an HPO id are scored. Span families solve an
assignment problem (`scipy.optimize.linear_sum_assignment`) that maximizes the
number of matched gold/predicted pairs first and their total overlap second.
A greedy largest-overlap-first pass can match fewer pairs than this; both agree
whenever each prediction overlaps at most one gold mention.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from tabulate import tabulate

from .corpus import read_annotation_tsv, remap_annotations
from .documents import AnnotationSet, Category, Mention, overlap_length
from .exceptions import InputError

logger = logging.getLogger(__name__)

_MATCH_BONUS = 1_000_000.0


class MatchMode(str, Enum):
    EXACT = "exact"
    OVERLAP = "overlap"


@dataclass
class FamilyScores:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, tp: int, fp: int, fn: int) -> None:
        self.tp += tp
        self.fp += fp
        self.fn += fn

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> Dict[str, float]:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


FAMILIES = ("NormOnly", "ExactExtNorm", "OverExtNorm")


@dataclass
class EvalReport:
    families: Dict[str, FamilyScores] = field(default_factory=dict)
    skipped_documents: List[str] = field(default_factory=list)
    per_term: Optional[Dict[str, FamilyScores]] = None

    def to_dict(self) -> Dict:
        data = {
            "families": {name: self.families[name].to_dict() for name in FAMILIES},
            "skipped_documents": list(self.skipped_documents),
        }
        if self.per_term is not None:
            data["per_term"] = {k: asdict(v) for k, v in sorted(self.per_term.items())}
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [
            [name, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.f1:.4f}", s.tp, s.fp, s.fn]
            for name, s in ((n, self.families[n]) for n in FAMILIES)
        ]
        table = tabulate(
            rows, headers=["Family", "Precision", "Recall", "F1", "TP", "FP", "FN"], tablefmt="grid"
        )
        if self.skipped_documents:
            table += "\nPredicted-only documents (scored against empty gold): "
            table += ", ".join(self.skipped_documents)
        if self.per_term:
            term_rows = [
                [hpo_id, s.tp, s.fp, s.fn] for hpo_id, s in sorted(self.per_term.items())
            ]
            table += "\n" + tabulate(
                term_rows, headers=["HPO id", "TP", "FP", "FN"], tablefmt="grid"
            )
        return table


def scored_mentions(annotations: AnnotationSet) -> List[Mention]:
    return [
        m
        for m in annotations.mentions
        if m.category == Category.KEY_FINDING and m.hpo_id is not None
    ]


def index_by_id(sets: Sequence[AnnotationSet], side: str) -> Dict[str, AnnotationSet]:
    indexed: Dict[str, AnnotationSet] = {}
    for annotations in sets:
        if annotations.consultation_id in indexed:
            raise InputError(f"Duplicate consultation id {annotations.consultation_id} in {side}")
        indexed[annotations.consultation_id] = annotations
    return indexed


def _aligned(
    gold: Sequence[AnnotationSet], pred: Sequence[AnnotationSet]
) -> List[Tuple[str, List[Mention], List[Mention]]]:
    gold_by_id = index_by_id(gold, "gold")
    pred_by_id = index_by_id(pred, "predictions")
    documents = []
    for consultation_id in sorted(set(gold_by_id) | set(pred_by_id)):
        g = gold_by_id.get(consultation_id)
        p = pred_by_id.get(consultation_id)
        documents.append(
            (
                consultation_id,
                scored_mentions(g) if g else [],
                scored_mentions(p) if p else [],
            )
        )
    return documents


def count_norm_only(gold: Sequence[Mention], pred: Sequence[Mention]) -> Tuple[int, int, int]:
    gold_ids = {m.hpo_id for m in gold}
    pred_ids = {m.hpo_id for m in pred}
    return len(gold_ids & pred_ids), len(pred_ids - gold_ids), len(gold_ids - pred_ids)


def compatible(gold: Mention, pred: Mention, mode: MatchMode) -> bool:
    if gold.hpo_id != pred.hpo_id:
        return False
    if mode == MatchMode.EXACT:
        return gold.fragments == pred.fragments
    return overlap_length(gold, pred) > 0


def match_mentions(
    gold: Sequence[Mention], pred: Sequence[Mention], mode: MatchMode
) -> List[Tuple[int, int]]:
    """Maximum one-to-one matching; ties go to the larger total overlap."""
    if not gold or not pred:
        return []
    weights = np.zeros((len(gold), len(pred)))
    for i, g in enumerate(gold):
        for j, p in enumerate(pred):
            if compatible(g, p, mode):
                weights[i, j] = _MATCH_BONUS + overlap_length(g, p)
    if not weights.any():
        return []
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if weights[i, j] > 0]


def count_ext_norm(
    gold: Sequence[Mention], pred: Sequence[Mention], mode: MatchMode
) -> Tuple[int, int, int]:
    tp = len(match_mentions(gold, pred, mode))
    return tp, len(pred) - tp, len(gold) - tp


def eval_norm_only(gold: Sequence[AnnotationSet], pred: Sequence[AnnotationSet]) -> FamilyScores:
    scores = FamilyScores()
    for _, g, p in _aligned(gold, pred):
        scores.add(*count_norm_only(g, p))
    return scores


def eval_ext_norm(
    gold: Sequence[AnnotationSet], pred: Sequence[AnnotationSet], mode: MatchMode
) -> FamilyScores:
    scores = FamilyScores()
    for _, g, p in _aligned(gold, pred):
        scores.add(*count_ext_norm(g, p, mode))
    return scores


def per_term_breakdown(
    gold: Sequence[AnnotationSet], pred: Sequence[AnnotationSet]
) -> Dict[str, FamilyScores]:
    """NormOnly tp/fp/fn per HPO id."""
    breakdown: Dict[str, FamilyScores] = {}
    for _, g, p in _aligned(gold, pred):
        gold_ids = {m.hpo_id for m in g}
        pred_ids = {m.hpo_id for m in p}
        for hpo_id in gold_ids | pred_ids:
            breakdown.setdefault(hpo_id, FamilyScores()).add(
                int(hpo_id in gold_ids and hpo_id in pred_ids),
                int(hpo_id in pred_ids and hpo_id not in gold_ids),
                int(hpo_id in gold_ids and hpo_id not in pred_ids),
            )
    return breakdown


def evaluate(
    gold: Sequence[AnnotationSet], pred: Sequence[AnnotationSet], per_term: bool = False
) -> EvalReport:
    gold_ids = set(index_by_id(gold, "gold"))
    skipped = sorted(s.consultation_id for s in pred if s.consultation_id not in gold_ids)
    if skipped:
        logger.warning("%d predicted documents have no gold entry", len(skipped))
    report = EvalReport(
        families={
            "NormOnly": eval_norm_only(gold, pred),
            "ExactExtNorm": eval_ext_norm(gold, pred, MatchMode.EXACT),
            "OverExtNorm": eval_ext_norm(gold, pred, MatchMode.OVERLAP),
        },
        skipped_documents=skipped,
    )
    if per_term:
        report.per_term = per_term_breakdown(gold, pred)
    return report


def score_run(
    gold_path: Union[str, Path],
    pred_path: Union[str, Path],
    per_term: bool = False,
    gold_ids: Optional[Sequence[str]] = None,
    remap: Optional[Mapping[str, str]] = None,
) -> EvalReport:
    """Score two annotation TSV files.

    Consultations in `gold_ids` with no row in the gold TSV have no findings
    and are scored against empty gold rather than listed as predicted-only.
    Obsolete gold ids are replaced through `remap` before matching.
    """
    gold = [
        remap_annotations(s, remap or {})
        for s in read_annotation_tsv(gold_path, include_ids=gold_ids)
    ]
    pred = read_annotation_tsv(pred_path)
    return evaluate(gold, pred, per_term)


def write_report(report: EvalReport, directory: Union[str, Path]) -> Tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    json_path = directory / "report.json"
    text_path = directory / "report.txt"
    json_path.write_text(report.to_json(), encoding="utf-8")
    text_path.write_text(report.to_table() + "\n", encoding="utf-8")
    return json_path, text_path
