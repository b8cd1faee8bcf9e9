"""Corpus JSONL, annotation TSV and challenge TSV formats."""

import json

import pytest

from phenopipe.corpus import (
    CorpusDocument,
    load_challenge_tsv,
    load_corpus,
    read_annotation_tsv,
    read_corpus_jsonl,
    write_annotation_tsv,
    write_corpus_jsonl,
)
from phenopipe.documents import AnnotationSet, Category, Mention
from phenopipe.exceptions import FormatError, InputError, OffsetError

TEXT = "The patient has long fingers and toes."


def _document(long_fingers_and_toes):
    _, gold = long_fingers_and_toes
    return CorpusDocument("C1", TEXT, gold)


def test_corpus_jsonl_round_trip(long_fingers_and_toes, tmp_path):
    document = _document(long_fingers_and_toes)
    path = tmp_path / "corpus.jsonl"

    write_corpus_jsonl([document], path)

    assert read_corpus_jsonl(path) == [document]
    record = json.loads(path.read_text())
    assert record["mentions"][0]["fragments"] == [[16, 20], [33, 37]]


def test_corpus_jsonl_applies_obsolete_remap(tmp_path):
    path = tmp_path / "corpus.jsonl"
    record = {
        "id": "C1",
        "text": TEXT,
        "mentions": [{"fragments": [[16, 28]], "category": "key", "hpo_id": "HP:0009999"}],
    }
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")

    documents = read_corpus_jsonl(path, {"HP:0009999": "HP:0100807"})

    assert documents[0].gold.mentions[0].hpo_id == "HP:0100807"


def test_corpus_jsonl_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "corpus.jsonl"
    good = json.dumps({"id": "C1", "text": "abc", "mentions": []})
    out_of_range = json.dumps({"id": "C2", "text": "abc", "mentions": [{"fragments": [[0, 9]]}]})
    path.write_text(good + "\n" + out_of_range + "\n", encoding="utf-8")

    with pytest.raises(FormatError) as excinfo:
        read_corpus_jsonl(path)
    assert excinfo.value.line == 2

    path.write_text(good + "\n" + good + "\n", encoding="utf-8")
    with pytest.raises(InputError, match="Duplicate"):
        read_corpus_jsonl(path)


def test_annotation_tsv_round_trip_with_texts(long_fingers_and_toes, tmp_path):
    _, gold = long_fingers_and_toes
    path = tmp_path / "gold.tsv"

    write_annotation_tsv([gold], path, {"C1": TEXT})

    lines = path.read_text().splitlines()
    assert lines[0] == "C1\t16-20;33-37\tlong toes\tkey\tHP:0010511"
    assert read_annotation_tsv(path) == [gold]


def test_annotation_tsv_include_ids_adds_empty_sets(tmp_path):
    path = tmp_path / "gold.tsv"
    path.write_text("consultation_id\tfragments\ttext\tcategory\thpo_id\n", encoding="utf-8")

    sets = read_annotation_tsv(path, include_ids=["C2", "C1"])

    assert sets == [AnnotationSet("C1", ()), AnnotationSet("C2", ())]


@pytest.mark.parametrize(
    "row",
    [
        "C1\t16-20\tlong",
        "C1\t16:20\tlong\tkey\tHP:0010511",
        "C1\t16-20\tlong\tsevere\tHP:0010511",
        "C1\t16-20\tlong\tkey\tHP:12",
        "C1\t20-16\tlong\tkey\tHP:0010511",
        "\t16-20\tlong\tkey\tHP:0010511",
    ],
)
def test_malformed_annotation_rows_report_the_line(row, tmp_path):
    path = tmp_path / "pred.tsv"
    path.write_text("C1\t0-3\tThe\tnormal\t\n" + row + "\n", encoding="utf-8")

    with pytest.raises(FormatError) as excinfo:
        read_annotation_tsv(path)

    assert excinfo.value.line == 2


def test_challenge_tsv_groups_rows_by_observation(tmp_path):
    path = tmp_path / "challenge.tsv"
    path.write_text(
        "ObservationID\tText\tHPO Term\tSpans\n"
        f"C1\t{TEXT}\tHP:0100807\t16-28\n"
        f"C1\t{TEXT}\tHP:0010511\t16-20,33-37\n"
        "C2\tNormal ears.\tNA\tNA\n",
        encoding="utf-8",
    )

    documents = load_corpus(path, "challenge")

    assert [d.id for d in documents] == ["C1", "C2"]
    assert [m.fragments for m in documents[0].gold.mentions] == [((16, 20), (33, 37)), ((16, 28),)]
    assert all(m.category == Category.KEY_FINDING for m in documents[0].gold.mentions)
    assert documents[1].gold.mentions == ()


def test_challenge_tsv_rejects_inconsistent_text(tmp_path):
    path = tmp_path / "challenge.tsv"
    path.write_text("C1\tabc\tNA\tNA\nC1\tabd\tNA\tNA\n", encoding="utf-8")

    with pytest.raises(FormatError, match="text differs"):
        load_challenge_tsv(path)


def test_corpus_document_validates_offsets():
    with pytest.raises(OffsetError):
        CorpusDocument("C1", "short", AnnotationSet("C1", (Mention(((0, 50),)),)))
    with pytest.raises(InputError):
        CorpusDocument("C1", "short", AnnotationSet("C2", ()))
