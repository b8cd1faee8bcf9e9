import threading
from pathlib import Path

import pytest

from phenopipe.documents import AnnotationSet, Category, Mention
from phenopipe.exceptions import BackendError
from phenopipe.ontology import build_dictionary, serialize_obo
from phenopipe.preprocess import tokenize
from phenopipe.synthetic import synthetic_corpus, toy_ontology

TOY_OBO = """format-version: 1.2

[Term]
id: HP:0000001
name: All

[Term]
id: HP:0000118
name: Phenotypic abnormality
is_a: HP:0000001 ! All

[Term]
id: HP:0000005
name: Mode of inheritance
is_a: HP:0000001

[Term]
id: HP:0000006
name: Autosomal dominant inheritance
synonym: "Autosomal dominant" EXACT []
is_a: HP:0000005

[Term]
id: HP:0001155
name: Abnormality of the hand
is_a: HP:0000118

[Term]
id: HP:0100807
name: Long fingers
synonym: "Arachnodactyly" EXACT []
synonym: "Elongated fingers" EXACT []
is_a: HP:0001155

[Term]
id: HP:0010511
name: Long toe
synonym: "Long toes" EXACT []
is_a: HP:0000118

[Term]
id: HP:0000252
name: Microcephaly
synonym: "Decreased head circumference" EXACT []
synonym: "Small head" EXACT []
is_a: HP:0000118

[Term]
id: HP:0009999
name: obsolete Long digits
is_obsolete: true
replaced_by: HP:0100807

[Typedef]
id: part_of
name: part of
"""


@pytest.fixture
def toy_obo_text() -> str:
    return TOY_OBO


@pytest.fixture
def toy_obo_path(tmp_path) -> Path:
    """Small hand-written OBO with an inheritance branch and an obsolete term"""
    path = tmp_path / "toy.obo"
    path.write_text(TOY_OBO, encoding="utf-8")
    return path


@pytest.fixture
def toy_dictionary(toy_obo_path):
    dictionary, _ = build_dictionary(toy_obo_path)
    return dictionary


@pytest.fixture(scope="session")
def synthetic_dictionary(tmp_path_factory):
    """Dictionary flattened from the 50-term synthetic ontology"""
    path = tmp_path_factory.mktemp("ontology") / "toy_hpo.obo"
    path.write_text(serialize_obo(toy_ontology()), encoding="utf-8")
    dictionary, _ = build_dictionary(path)
    return dictionary


@pytest.fixture(scope="session")
def synthetic_documents():
    return synthetic_corpus()


@pytest.fixture
def long_fingers_and_toes():
    """'Long fingers and toes' with gold 'long fingers' and discontinuous 'long ... toes'"""
    text = "The patient has long fingers and toes."
    consultation = tokenize(text, "C1")
    gold = AnnotationSet.build(
        "C1",
        [
            Mention(((16, 28),), Category.KEY_FINDING, "HP:0100807"),
            Mention(((16, 20), (33, 37)), Category.KEY_FINDING, "HP:0010511"),
        ],
    )
    return consultation, gold


class FakeExtractionClient:
    """Scripted two-step client: step -> items, or an exception to raise"""

    name = "fake"

    def __init__(self, extract_items=None, classify_items=None, error=None):
        self.extract_items = extract_items or []
        self.classify_items = classify_items or []
        self.error = error
        self.requests = []
        self.lock = threading.Lock()

    def request(self, step, text, items=None):
        with self.lock:
            self.requests.append((step, text, items))
        if self.error is not None:
            raise self.error
        if step == 1:
            return [{"text": t} for t in self.extract_items]
        return list(self.classify_items)


@pytest.fixture
def fake_client_factory():
    return FakeExtractionClient


class StaticBackend:
    """Extraction backend returning canned annotation sets by consultation id"""

    def __init__(self, name, results=None, error=None):
        self.name = name
        self.results = results or {}
        self.error = error
        self.calls = []

    def extract(self, consultation_id, text):
        self.calls.append(consultation_id)
        if self.error is not None:
            raise self.error
        return self.results.get(consultation_id, AnnotationSet(consultation_id, ()))


@pytest.fixture
def static_backend_factory():
    return StaticBackend


@pytest.fixture
def backend_failure():
    return BackendError("fake", "service unavailable", error_type="http", status_code=503)
