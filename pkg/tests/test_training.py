"""Pre-finetuning, marginal-likelihood training and the NEN ablation."""

import copy

import pytest
import torch

from phenopipe.exceptions import DataError
from phenopipe.normalizer.dense import NgramBagEncoder
from phenopipe.normalizer.scoring import CandidateSet, NormalizerConfig, ScoredCandidate
from phenopipe.normalizer.training import (
    ABLATION_VARIANTS,
    NenInstance,
    PreFinetuneConfig,
    alignment_metric,
    batch_loss,
    contrastive_loss,
    evaluate_normalizer,
    pre_finetune,
    run_ablation,
    synonym_holdout,
    train_normalizer,
)
from phenopipe.ontology import FlatDictionary
from phenopipe.synthetic import nen_benchmark

TOY_TRAIN = [
    ("elongated finger", "HP:0100807"),
    ("long toes", "HP:0010511"),
    ("small head", "HP:0000252"),
    ("arachnodactyly", "HP:0100807"),
]


def _encoder(seed=0):
    torch.manual_seed(seed)
    return NgramBagEncoder(dim=32)


def test_synonym_holdout_picks_one_per_rich_id(synthetic_dictionary):
    holdout = synonym_holdout(synthetic_dictionary, seed=3)

    assert holdout == synonym_holdout(synthetic_dictionary, seed=3)
    for hpo_id, surface in holdout.items():
        assert len(synthetic_dictionary.synonyms_of(hpo_id)) >= 3
        assert surface in synthetic_dictionary.synonyms_of(hpo_id)


def test_pre_finetune_increases_alignment_on_held_out_synonyms(synthetic_dictionary):
    dense = _encoder()
    holdout = synonym_holdout(synthetic_dictionary, seed=13)
    before = alignment_metric(copy.deepcopy(dense), synthetic_dictionary, holdout)

    tuned = pre_finetune(dense, synthetic_dictionary, epochs=20, seed=13)

    assert alignment_metric(tuned, synthetic_dictionary, holdout) > before


def test_pre_finetune_needs_synonym_groups():
    dictionary = FlatDictionary((("long toe", "HP:0010511"), ("microcephaly", "HP:0000252")))

    with pytest.raises(DataError):
        pre_finetune(_encoder(), dictionary, epochs=1)


def test_pre_finetune_with_zero_epochs_returns_encoder_unchanged(toy_dictionary):
    dense = _encoder()
    state = copy.deepcopy(dense.state_dict())

    pre_finetune(dense, toy_dictionary, epochs=0)

    assert all(torch.equal(state[k], v) for k, v in dense.state_dict().items())


SURFACES = ["long fingers", "arachnodactyly", "long toes", "small head", "microcephaly", "tall"]


@pytest.mark.parametrize("seed", range(20))
def test_batch_loss_gradients_match_finite_differences(seed):
    generator = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    dense = NgramBagEncoder(dim=3, buckets=32, embedding_dim=3, normalize=seed % 2 == 1).double()
    sparse_weight = torch.tensor(0.5 + seed / 20, dtype=torch.float64, requires_grad=True)
    candidate_sets = []
    for row in range(2):
        order = torch.randperm(len(SURFACES), generator=generator).tolist()
        sparse = torch.rand(4, generator=generator).tolist()
        candidates = tuple(
            ScoredCandidate(SURFACES[i], f"HP:{i:07d}", s, 0.0, s, is_positive=k == row)
            for k, (i, s) in enumerate(zip(order[:4], sparse))
        )
        candidate_sets.append(CandidateSet(SURFACES[order[4]], None, candidates))
    weights = (sparse_weight,) + tuple(dense.parameters())

    # gradcheck perturbs each weight tensor in place
    assert torch.autograd.gradcheck(
        lambda *_: batch_loss(dense, sparse_weight, candidate_sets),
        weights,
        eps=1e-6,
        atol=1e-5,
        rtol=1e-4,
    )


def test_contrastive_loss_prefers_matching_pairs():
    anchors = torch.eye(4)

    aligned = contrastive_loss(anchors, anchors.clone(), temperature=0.1)
    shuffled = contrastive_loss(anchors, anchors.roll(1, dims=0), temperature=0.1)

    assert aligned < shuffled


def test_train_normalizer_records_history_and_no_skips(toy_dictionary):
    config = NormalizerConfig(top_k=3, additive_k=1, epochs=3, batch_size=2)

    trained = train_normalizer(TOY_TRAIN, toy_dictionary, config, _encoder(), seed=5)

    assert len(trained.loss_history) == 3
    assert trained.skip_counter.skipped == 0
    assert trained.skip_counter.seen == 3 * len(TOY_TRAIN)
    assert trained.normalize_text("long fingers")[0] in toy_dictionary.hpo_ids()


def test_single_instance_is_fitted_to_rank_one(toy_dictionary):
    config = NormalizerConfig(top_k=3, additive_k=1, epochs=100, batch_size=1, learning_rate=0.05)

    trained = train_normalizer(
        [("elongated finger", "HP:0100807")], toy_dictionary, config, _encoder(), seed=5
    )

    assert trained.loss_history[-1] < 0.1
    assert trained.normalize_text("elongated finger")[0] == "HP:0100807"


def test_train_normalizer_is_deterministic(toy_dictionary):
    config = NormalizerConfig(top_k=3, additive_k=1, epochs=2, batch_size=2)

    first = train_normalizer(TOY_TRAIN, toy_dictionary, config, _encoder(), seed=5)
    second = train_normalizer(TOY_TRAIN, toy_dictionary, config, _encoder(), seed=5)

    assert first.loss_history == second.loss_history
    assert first.sparse_weight == second.sparse_weight


def test_zero_epochs_keeps_initial_sparse_weight(toy_dictionary):
    config = NormalizerConfig(top_k=3, epochs=0, sparse_weight=0.7)

    trained = train_normalizer(TOY_TRAIN, toy_dictionary, config, _encoder())

    assert trained.sparse_weight == pytest.approx(0.7)
    assert trained.loss_history == []


def test_unknown_gold_id_is_rejected(toy_dictionary):
    with pytest.raises(DataError, match="HP:0000999"):
        train_normalizer([("odd", "HP:0000999")], toy_dictionary, NormalizerConfig(top_k=3))


def test_evaluate_normalizer_scores_groups():
    class Constant:
        def normalize_text(self, surface):
            return "HP:0000001", 1.0

    row = evaluate_normalizer(
        Constant(),
        [NenInstance("a", "HP:0000001", "q1"), NenInstance("b", "HP:0000002", "q2")],
    )

    assert row.top1_accuracy == 0.5
    assert (row.precision, row.recall, row.f1) == (0.5, 0.5, 0.5)


@pytest.mark.slow
def test_training_beats_untrained_encoder_on_benchmark(tmp_path):
    benchmark = nen_benchmark(tmp_path, seed=13)
    test = [NenInstance(*q) for q in benchmark.test]
    config = NormalizerConfig(epochs=20, learning_rate=0.01)

    untrained = train_normalizer(
        benchmark.train, benchmark.dictionary, NormalizerConfig(epochs=0), _encoder(13)
    )
    trained = train_normalizer(benchmark.train, benchmark.dictionary, config, _encoder(13), seed=13)

    assert trained.skip_counter.skipped == 0
    baseline = evaluate_normalizer(untrained, test).top1_accuracy
    assert evaluate_normalizer(trained, test).top1_accuracy >= baseline + 0.20


@pytest.mark.slow
def test_ablation_variants_are_ordered_by_top1(tmp_path):
    benchmark = nen_benchmark(tmp_path, seed=13)

    report = run_ablation(
        benchmark.train,
        benchmark.test,
        benchmark.dictionary,
        NormalizerConfig(epochs=20, learning_rate=0.01),
        PreFinetuneConfig(epochs=10),
        {"dim": 32},
        seed=13,
    )

    rows = report.by_variant()
    assert [row.variant for row in report.rows] == list(ABLATION_VARIANTS)
    top1 = [rows[name].top1_accuracy for name in ABLATION_VARIANTS]
    assert top1 == sorted(top1, reverse=True)
    assert rows["full"].top1_accuracy >= rows["no-finetune"].top1_accuracy + 0.05
    assert set(report.to_dict()["full"]) == {"top1_accuracy", "precision", "recall", "f1"}
