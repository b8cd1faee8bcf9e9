"""Trained normalizer inference and persistence."""

import json

import pytest
import torch

from phenopipe.documents import Mention
from phenopipe.exceptions import ConfigurationError, DataError, MissingArtifactError
from phenopipe.normalizer import (
    NgramBagEncoder,
    NormalizerConfig,
    TrainedNormalizer,
    build_dense_encoder,
    fit_sparse,
    load_normalizer,
    normalize,
    save_normalizer,
    train_normalizer,
)
from phenopipe.ontology import FlatDictionary


@pytest.fixture
def trained(toy_dictionary):
    torch.manual_seed(0)
    return train_normalizer(
        [("elongated finger", "HP:0100807"), ("small head", "HP:0000252")],
        toy_dictionary,
        NormalizerConfig(top_k=3, epochs=2, batch_size=2),
        NgramBagEncoder(dim=16),
        seed=3,
    )


def test_normalize_reads_mention_text(trained):
    text = "The patient has arachnodactyly."

    hpo_id, score = normalize(Mention(((16, 30),)), text, trained)

    assert hpo_id == trained.normalize_text("arachnodactyly")[0]
    assert isinstance(score, float)


def test_exact_synonym_wins_with_normalized_dense(toy_dictionary):
    normalizer = TrainedNormalizer(
        toy_dictionary,
        fit_sparse(toy_dictionary),
        NgramBagEncoder(dim=16, normalize=True),
        sparse_weight=5.0,
    )

    assert normalizer.normalize_text("Microcephaly")[0] == "HP:0000252"
    assert len(normalizer.candidates("long toe", top_k=4).candidates) == 4


def test_save_and_load_preserve_predictions(trained, toy_dictionary, tmp_path):
    save_normalizer(trained, tmp_path / "nen")

    loaded = load_normalizer(tmp_path / "nen", toy_dictionary)

    assert sorted(p.name for p in (tmp_path / "nen").iterdir()) == [
        "config.json",
        "dense.pt",
        "sparse_idf.tsv",
        "state.json",
    ]
    assert loaded.sparse_weight == pytest.approx(trained.sparse_weight)
    assert loaded.config == trained.config
    for surface in ["long fingers", "small head", "long toes"]:
        loaded_id, loaded_score = loaded.normalize_text(surface)
        trained_id, trained_score = trained.normalize_text(surface)
        assert loaded_id == trained_id
        assert loaded_score == pytest.approx(trained_score)
    state = json.loads((tmp_path / "nen" / "state.json").read_text())
    assert state["dictionary_checksum"] == toy_dictionary.checksum()


def test_load_refuses_a_different_dictionary(trained, tmp_path):
    save_normalizer(trained, tmp_path / "nen")
    other = FlatDictionary((("long toe", "HP:0010511"),))

    with pytest.raises(DataError, match="different dictionary"):
        load_normalizer(tmp_path / "nen", other)


def test_load_missing_artifact_names_train_nen(toy_dictionary, tmp_path):
    with pytest.raises(MissingArtifactError) as excinfo:
        load_normalizer(tmp_path / "nen", toy_dictionary)

    assert excinfo.value.producer == "train-nen"


def test_build_dense_encoder_filters_settings():
    encoder = build_dense_encoder("ngram_bag", dim=8, ngram_range=[2, 3], max_length=10)

    assert encoder.output_dim == 8
    assert encoder.settings()["ngram_range"] == [2, 3]
    with pytest.raises(ConfigurationError, match="Unknown dense encoder"):
        build_dense_encoder("word2vec")
