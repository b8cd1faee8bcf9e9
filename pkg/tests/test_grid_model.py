"""Grid model training, prediction and persistence."""

from dataclasses import replace

import pytest
import torch

from phenopipe.documents import Category
from phenopipe.exceptions import ConfigurationError, DataError, MissingArtifactError
from phenopipe.ner.encoders import Vocabulary, make_batch
from phenopipe.ner.grid import GridLabel, WordPairGrid, encode_entities
from phenopipe.ner.model import (
    IGNORE_INDEX,
    NUM_LABELS,
    GridModel,
    GridModelConfig,
    PairScorer,
    grid_loss,
    load_grid_model,
    predict,
    save_grid_model,
    target_tensor,
    train_grid_model,
    training_grids,
)

TINY = dict(epochs=200, batch_size=1, learning_rate=0.01, dropout=0.0, hidden_dim=32)
TOLERANCES = dict(eps=1e-6, atol=1e-5, rtol=1e-4)


@pytest.fixture
def overfit_model(long_fingers_and_toes):
    consultation, gold = long_fingers_and_toes
    corpus = [(consultation.sentences[0], gold.mentions)]
    return train_grid_model(corpus, GridModelConfig(**TINY), seed=7)


def test_overfits_a_single_sentence(overfit_model, long_fingers_and_toes):
    consultation, gold = long_fingers_and_toes

    predicted = predict(overfit_model, consultation)

    assert [m.fragments for m in predicted.mentions] == [m.fragments for m in gold.mentions]
    assert overfit_model.loss_history[-1] < overfit_model.loss_history[0]


def test_save_and_load_reproduce_predictions(overfit_model, long_fingers_and_toes, tmp_path):
    consultation, _ = long_fingers_and_toes
    save_grid_model(overfit_model, tmp_path / "grid")

    loaded = load_grid_model(tmp_path / "grid")

    assert sorted(p.name for p in (tmp_path / "grid").iterdir()) == [
        "config.json",
        "parameters.pt",
        "vocab.txt",
    ]
    assert loaded.config == overfit_model.config
    assert predict(loaded, consultation) == predict(overfit_model, consultation)


def test_load_without_parameters_names_the_producing_command(tmp_path):
    with pytest.raises(MissingArtifactError) as excinfo:
        load_grid_model(tmp_path / "grid")

    assert excinfo.value.producer == "train-ner"
    assert "phenopipe train-ner" in str(excinfo.value)


def test_empty_corpus_is_rejected():
    with pytest.raises(DataError):
        train_grid_model([], GridModelConfig(epochs=1))


@pytest.mark.parametrize("field, value", [("epochs", 0), ("dropout", 1.0), ("learning_rate", 0)])
def test_invalid_config_values(field, value):
    with pytest.raises(ConfigurationError):
        GridModelConfig(**{field: value})


def test_config_from_dict_ignores_unknown_keys():
    config = GridModelConfig.from_dict({"epochs": 3, "unknown": True})

    assert config.epochs == 3


def test_target_tensor_pads_with_ignore_index(long_fingers_and_toes):
    consultation, gold = long_fingers_and_toes
    sentence = consultation.sentences[0]
    grid = encode_entities(sentence, gold.mentions)
    short = WordPairGrid.empty(2)

    targets = target_tensor([grid, short])

    assert targets.shape == (2, 8, 8)
    assert targets[0, 4, 3] == GridLabel.THW_KEY
    assert targets[1, 5, 5] == IGNORE_INDEX


def test_grid_loss_gradient_matches_finite_differences():
    torch.manual_seed(0)
    logits = torch.randn(1, 3, 3, NUM_LABELS, dtype=torch.float64, requires_grad=True)
    targets = torch.tensor([[[0, 1, 0], [2, 0, 1], [IGNORE_INDEX] * 3]])

    assert torch.autograd.gradcheck(lambda x: grid_loss(x, targets), (logits,), **TOLERANCES)


def test_pair_scorer_output_shape():
    scorer = PairScorer(4, 3, dropout=0.0, use_distance=True)

    assert scorer(torch.randn(2, 5, 4)).shape == (2, 5, 5, NUM_LABELS)


@pytest.mark.parametrize("seed", range(20))
def test_grid_model_weight_gradients_match_finite_differences(seed):
    torch.manual_seed(seed)
    words = ["long", "fingers", "and", "toes", "normal"]
    config = GridModelConfig(
        embedding_dim=2, hidden_dim=2, dropout=0.0, use_distance_embeddings=seed % 4 == 0
    )
    model = GridModel(config, Vocabulary(words)).double()
    n = 2 + seed % 4
    batch = make_batch([[words[(seed + i) % len(words)] for i in range(n)]], model.vocab)
    targets = torch.randint(0, NUM_LABELS, (1, n, n))
    weights = tuple(model.parameters())

    # gradcheck perturbs each weight tensor in place
    assert torch.autograd.gradcheck(
        lambda *_: grid_loss(model(batch), targets), weights, **TOLERANCES
    )


def test_key_only_training_on_normal_findings_decodes_nothing(long_fingers_and_toes):
    consultation, gold = long_fingers_and_toes
    normal = [replace(m, category=Category.NORMAL_FINDING) for m in gold.mentions]
    corpus = [(consultation.sentences[0], normal)]

    model = train_grid_model(corpus, GridModelConfig(**{**TINY, "epochs": 60}), seed=7)

    [(_, grid)] = training_grids(corpus, key_only=True)
    assert (grid.labels == GridLabel.NONE).all()
    assert predict(model, consultation).mentions == ()
