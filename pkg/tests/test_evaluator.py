"""NormOnly / ExactExtNorm / OverExtNorm scoring."""

import json
import random

import pytest

from phenopipe.corpus import write_annotation_tsv
from phenopipe.documents import AnnotationSet, Category, Mention
from phenopipe.evaluator import (
    FamilyScores,
    MatchMode,
    compatible,
    count_ext_norm,
    eval_ext_norm,
    eval_norm_only,
    evaluate,
    match_mentions,
    score_run,
    write_report,
)
from phenopipe.exceptions import InputError

LONG_FINGERS = "HP:0100807"
LONG_TOE = "HP:0010511"


def _set(consultation_id, *mentions):
    return AnnotationSet.build(consultation_id, mentions)


def _families(report):
    return {name: (s.tp, s.fp, s.fn) for name, s in report.families.items()}


def test_perfect_prediction(long_fingers_and_toes):
    _, gold = long_fingers_and_toes

    report = evaluate([gold], [gold])

    assert _families(report) == {
        "NormOnly": (2, 0, 0),
        "ExactExtNorm": (2, 0, 0),
        "OverExtNorm": (2, 0, 0),
    }
    assert report.families["ExactExtNorm"].f1 == 1.0


def test_partial_span_counts_only_for_overlap(long_fingers_and_toes):
    _, gold = long_fingers_and_toes
    pred = _set(
        "C1",
        Mention(((16, 28),), hpo_id=LONG_FINGERS),
        Mention(((33, 37),), hpo_id=LONG_TOE),
    )

    report = evaluate([gold], [pred])

    assert _families(report) == {
        "NormOnly": (2, 0, 0),
        "ExactExtNorm": (1, 1, 1),
        "OverExtNorm": (2, 0, 0),
    }


def test_wrong_id_is_a_false_positive_and_negative(long_fingers_and_toes):
    _, gold = long_fingers_and_toes
    pred = _set("C1", Mention(((16, 28),), hpo_id=LONG_TOE))

    report = evaluate([gold], [pred])

    assert _families(report)["ExactExtNorm"] == (0, 1, 2)
    assert _families(report)["NormOnly"] == (1, 0, 1)


def test_normal_findings_and_missing_ids_are_not_scored():
    gold = _set("C1", Mention(((0, 4),), Category.NORMAL_FINDING, LONG_TOE))
    pred = _set("C1", Mention(((0, 4),), Category.KEY_FINDING, None))

    report = evaluate([gold], [pred])

    assert all(counts == (0, 0, 0) for counts in _families(report).values())
    assert report.families["NormOnly"].precision == 0.0


def test_predicted_only_documents_count_as_false_positives():
    pred = _set("C7", Mention(((0, 4),), hpo_id=LONG_TOE))

    report = evaluate([_set("C1")], [pred])

    assert report.skipped_documents == ["C7"]
    assert _families(report)["OverExtNorm"] == (0, 1, 0)
    assert "C7" in report.to_table()


def test_duplicate_consultation_ids_are_rejected():
    with pytest.raises(InputError, match="Duplicate"):
        evaluate([_set("C1"), _set("C1")], [])


def test_matching_is_one_to_one():
    gold = [Mention(((0, 10),), hpo_id=LONG_TOE)]
    pred = [Mention(((0, 4),), hpo_id=LONG_TOE), Mention(((5, 10),), hpo_id=LONG_TOE)]

    assert count_ext_norm(gold, pred, MatchMode.OVERLAP) == (1, 1, 0)


def test_matching_prefers_larger_overlap_among_maximum_matchings():
    gold = [Mention(((0, 10),), hpo_id=LONG_TOE)]
    pred = [Mention(((0, 2),), hpo_id=LONG_TOE), Mention(((0, 9),), hpo_id=LONG_TOE)]

    assert match_mentions(gold, pred, MatchMode.OVERLAP) == [(0, 1)]


def test_matching_finds_pairs_a_greedy_overlap_pass_would_miss():
    gold = [Mention(((0, 10),), hpo_id=LONG_TOE), Mention(((8, 12),), hpo_id=LONG_TOE)]
    pred = [Mention(((5, 12),), hpo_id=LONG_TOE), Mention(((0, 3),), hpo_id=LONG_TOE)]

    assert sorted(match_mentions(gold, pred, MatchMode.OVERLAP)) == [(0, 1), (1, 0)]
    assert count_ext_norm(gold, pred, MatchMode.OVERLAP) == (2, 0, 0)


def test_exact_mode_compares_all_fragments():
    gold = Mention(((16, 20), (33, 37)), hpo_id=LONG_TOE)

    assert compatible(gold, Mention(((16, 20), (33, 37)), hpo_id=LONG_TOE), MatchMode.EXACT)
    assert not compatible(gold, Mention(((16, 20),), hpo_id=LONG_TOE), MatchMode.EXACT)
    assert compatible(gold, Mention(((16, 20),), hpo_id=LONG_TOE), MatchMode.OVERLAP)


def _random_mentions(rng, count):
    mentions = []
    for _ in range(count):
        start = rng.randrange(0, 30)
        mentions.append(Mention(((start, start + rng.randint(1, 8)),), hpo_id=rng.choice("AB")))
    return mentions


def _brute_force_matching(gold, pred, mode):
    best = 0

    def search(i, used, size):
        nonlocal best
        if i == len(gold):
            best = max(best, size)
            return
        search(i + 1, used, size)
        for j, p in enumerate(pred):
            if j not in used and compatible(gold[i], p, mode):
                search(i + 1, used | {j}, size + 1)

    search(0, frozenset(), 0)
    return best


@pytest.mark.parametrize("seed", range(5))
def test_matching_size_equals_brute_force_maximum(seed):
    rng = random.Random(seed)
    for _ in range(100):
        gold = _random_mentions(rng, rng.randint(0, 5))
        pred = _random_mentions(rng, rng.randint(0, 5))
        for mode in MatchMode:
            tp, fp, fn = count_ext_norm(gold, pred, mode)
            assert tp == _brute_force_matching(gold, pred, mode)
            assert (tp + fp, tp + fn) == (len(pred), len(gold))
        assert count_ext_norm(gold, pred, MatchMode.EXACT)[0] <= count_ext_norm(
            gold, pred, MatchMode.OVERLAP
        )[0]


def test_family_scores_arithmetic():
    scores = FamilyScores(tp=3, fp=1, fn=2)

    assert scores.precision == pytest.approx(0.75)
    assert scores.recall == pytest.approx(0.6)
    assert scores.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35)
    assert FamilyScores().f1 == 0.0


def test_score_run_and_write_report(long_fingers_and_toes, tmp_path):
    _, gold = long_fingers_and_toes
    write_annotation_tsv([gold], tmp_path / "gold.tsv")
    write_annotation_tsv([gold], tmp_path / "pred.tsv")

    report = score_run(tmp_path / "gold.tsv", tmp_path / "pred.tsv", per_term=True, gold_ids=["C2"])
    json_path, text_path = write_report(report, tmp_path / "reports")

    data = json.loads(json_path.read_text())
    assert data["families"]["OverExtNorm"]["f1"] == 1.0
    assert sorted(data["per_term"]) == [LONG_TOE, LONG_FINGERS]
    assert report.skipped_documents == []
    assert "ExactExtNorm" in text_path.read_text()


def test_family_counts_are_micro_summed_over_consultations():
    gold = [
        _set("C1", Mention(((16, 28),), hpo_id=LONG_FINGERS)),
        _set("C2", Mention(((0, 9),), hpo_id=LONG_TOE)),
    ]
    pred = [
        _set("C1", Mention(((16, 28),), hpo_id=LONG_FINGERS)),
        _set("C2", Mention(((0, 9),), hpo_id=LONG_FINGERS)),
    ]

    norm_only = eval_norm_only(gold, pred)
    exact = eval_ext_norm(gold, pred, MatchMode.EXACT)

    assert (norm_only.tp, norm_only.fp, norm_only.fn) == (1, 1, 1)
    assert (exact.tp, exact.fp, exact.fn) == (1, 1, 1)
    assert exact.precision == pytest.approx(0.5)


def test_score_run_replaces_obsolete_gold_ids(tmp_path):
    write_annotation_tsv([_set("C1", Mention(((0, 4),), hpo_id="HP:0000002"))], tmp_path / "g.tsv")
    write_annotation_tsv([_set("C1", Mention(((0, 4),), hpo_id="HP:0000001"))], tmp_path / "p.tsv")

    stale = score_run(tmp_path / "g.tsv", tmp_path / "p.tsv")
    remapped = score_run(
        tmp_path / "g.tsv", tmp_path / "p.tsv", remap={"HP:0000002": "HP:0000001"}
    )

    assert _families(stale)["NormOnly"] == (0, 1, 1)
    assert _families(remapped)["NormOnly"] == (1, 0, 0)
