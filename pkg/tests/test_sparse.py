"""Character n-gram tf-idf encoder."""

import numpy as np
import pytest
from sklearn.feature_extraction.text import TfidfVectorizer

from phenopipe.exceptions import DataError, FormatError, MissingArtifactError
from phenopipe.normalizer.sparse import SparseEncoder, fit_sparse, load_sparse, save_sparse
from phenopipe.ontology import FlatDictionary


def test_encoding_matches_a_fitted_tfidf_vectorizer(toy_dictionary):
    encoder = fit_sparse(toy_dictionary)
    reference = TfidfVectorizer(analyzer="char", ngram_range=(2, 3)).fit(toy_dictionary.surfaces)
    texts = ["Long fingers", "arachnodactyly", "small head size"]

    np.testing.assert_allclose(
        encoder.encode(texts).toarray(), reference.transform(texts).toarray(), atol=1e-12
    )


def test_similarity_is_cosine(toy_dictionary):
    encoder = fit_sparse(toy_dictionary)

    assert encoder.similarity("long fingers", "Long Fingers") == pytest.approx(1.0)
    assert 0.0 < encoder.similarity("long fingers", "long toes") < 1.0
    assert encoder.similarity("long fingers", "zzz") == 0.0


def test_scores_against_encoded_matrix(toy_dictionary):
    encoder = fit_sparse(toy_dictionary)
    matrix = encoder.encode(toy_dictionary.surfaces)

    scores = encoder.scores("microcephaly", matrix)

    assert scores.shape == (len(toy_dictionary),)
    assert toy_dictionary.surfaces[int(np.argmax(scores))] == "microcephaly"


def test_save_and_load_round_trip(toy_dictionary, tmp_path):
    encoder = fit_sparse(toy_dictionary)
    save_sparse(encoder, tmp_path / "sparse_idf.tsv")

    loaded = load_sparse(tmp_path / "sparse_idf.tsv")

    assert loaded.ngrams == encoder.ngrams
    np.testing.assert_array_equal(loaded.idf, encoder.idf)
    assert " f" in loaded.ngrams


def test_saved_weights_are_plain_floats_and_reload_scores_identically(toy_dictionary, tmp_path):
    encoder = fit_sparse(toy_dictionary)
    path = tmp_path / "sparse_idf.tsv"
    save_sparse(encoder, path)

    for line in path.read_text(encoding="utf-8").splitlines():
        weight = line.rpartition("\t")[2]
        assert float(weight) >= 0.0
        assert "np." not in weight

    loaded = load_sparse(path)
    matrix = encoder.encode(toy_dictionary.surfaces)
    loaded_matrix = loaded.encode(toy_dictionary.surfaces)
    for query in ["long fingers", "arachnodactyly", "small head"]:
        np.testing.assert_array_equal(
            loaded.scores(query, loaded_matrix), encoder.scores(query, matrix)
        )


def test_load_errors(tmp_path):
    with pytest.raises(MissingArtifactError) as excinfo:
        load_sparse(tmp_path / "missing.tsv")
    assert excinfo.value.producer == "train-nen"

    path = tmp_path / "sparse_idf.tsv"
    path.write_text("ab\t1.5\nno-tab-here\n", encoding="utf-8")
    with pytest.raises(FormatError) as excinfo:
        load_sparse(path)
    assert excinfo.value.line == 2


def test_invalid_inventories_are_rejected():
    with pytest.raises(ValueError):
        SparseEncoder(["ab", "bc"], [1.0])
    with pytest.raises(ValueError):
        SparseEncoder(["ab"], [-1.0])
    with pytest.raises(DataError):
        fit_sparse(FlatDictionary(()))
