"""HPO parsing, observable subset and dictionary flattening."""

import json
from dataclasses import replace

import pytest

from phenopipe.exceptions import (
    ConfigurationError,
    DataError,
    FormatError,
    OntologyParseError,
    OntologyValidationError,
)
from phenopipe.ontology import (
    FlatDictionary,
    HpoTerm,
    build_dictionary,
    flatten,
    normalize_surface,
    obsolete_remap,
    observable_subset,
    parse_obo,
    parse_obographs,
    parse_ontology,
    read_dictionary,
    read_remap,
    remap_id,
    serialize_obo,
    write_dictionary,
    write_remap,
)


def test_parse_obo_skips_typedef_and_strips_comments(toy_obo_text):
    terms = parse_obo(toy_obo_text)

    assert "part_of" not in terms
    assert terms["HP:0000118"].parents == ("HP:0000001",)
    assert terms["HP:0100807"].synonyms == ("Arachnodactyly", "Elongated fingers")
    assert terms["HP:0009999"].obsolete
    assert terms["HP:0009999"].replaced_by == "HP:0100807"


def test_parse_obo_reports_line_of_malformed_tag():
    text = "[Term]\nid: HP:0000001\nname: All\nnot a tag line\n"

    with pytest.raises(OntologyParseError) as excinfo:
        parse_obo(text)

    assert excinfo.value.line == 4


def test_parse_obo_rejects_term_without_name():
    with pytest.raises(OntologyParseError, match="no name"):
        parse_obo("[Term]\nid: HP:0000001\n")


def test_observable_subset_excludes_inheritance_obsolete_and_root(toy_obo_text):
    terms = parse_obo(toy_obo_text)

    assert observable_subset(terms) == {"HP:0001155", "HP:0100807", "HP:0010511", "HP:0000252"}


def test_observable_subset_only_grows_with_new_edges_and_wider_roots(toy_obo_text):
    terms = parse_obo(toy_obo_text)
    before = observable_subset(terms)
    grafted = dict(terms)
    grafted["HP:0000005"] = replace(terms["HP:0000005"], parents=("HP:0000001", "HP:0001155"))

    after = observable_subset(grafted)

    assert before <= after
    assert after - before == {"HP:0000005", "HP:0000006"}
    assert observable_subset(terms, "HP:0001155") <= observable_subset(terms, "HP:0000118")


def test_missing_root_is_a_configuration_error(toy_obo_text):
    terms = parse_obo(toy_obo_text)

    with pytest.raises(ConfigurationError, match="HP:7777777"):
        observable_subset(terms, "HP:7777777")


def test_dangling_parent_is_a_validation_error(tmp_path):
    path = tmp_path / "dangling.obo"
    path.write_text("[Term]\nid: HP:0000002\nname: Orphan\nis_a: HP:0000003\n", encoding="utf-8")

    with pytest.raises(OntologyValidationError) as excinfo:
        parse_ontology(path)

    assert excinfo.value.ids == ["HP:0000003"]


def test_build_dictionary_flattens_names_and_synonyms(toy_obo_path):
    dictionary, remap = build_dictionary(toy_obo_path)

    assert len(dictionary) == 9
    assert dictionary.hpo_ids() == {"HP:0001155", "HP:0100807", "HP:0010511", "HP:0000252"}
    assert dictionary.synonyms_of("HP:0100807") == [
        "arachnodactyly",
        "elongated fingers",
        "long fingers",
    ]
    assert "autosomal dominant" not in dictionary.surfaces
    assert remap == {"HP:0009999": "HP:0100807"}


def test_dictionary_entries_are_sorted_and_normalized():
    dictionary = FlatDictionary((("long toe", "HP:0010511"), ("arachnodactyly", "HP:0100807")))

    assert dictionary.entries[0] == ("arachnodactyly", "HP:0100807")
    assert normalize_surface("  Long   FINGERS ") == "long fingers"
    with pytest.raises(DataError):
        FlatDictionary((("Long toe", "HP:0010511"),))
    with pytest.raises(DataError):
        FlatDictionary((("long toe", "HP:0010511"), ("long toe", "HP:0010511")))


def test_serialize_then_parse_is_identity(toy_obo_text):
    terms = parse_obo(toy_obo_text)

    assert parse_obo(serialize_obo(terms)) == terms


def test_serialize_escapes_quotes_in_synonyms():
    terms = {"HP:0000001": HpoTerm("HP:0000001", "All", synonyms=('the "root"',))}

    assert parse_obo(serialize_obo(terms)) == terms


def test_parse_obographs_reads_nodes_edges_and_deprecation():
    document = {
        "graphs": [
            {
                "nodes": [
                    {
                        "id": "http://purl.obolibrary.org/obo/HP_0000118",
                        "lbl": "Phenotypic abnormality",
                    },
                    {
                        "id": "http://purl.obolibrary.org/obo/HP_0100807",
                        "lbl": "Long fingers",
                        "type": "CLASS",
                        "meta": {"synonyms": [{"val": "Arachnodactyly"}]},
                    },
                    {
                        "id": "http://purl.obolibrary.org/obo/HP_0009999",
                        "lbl": "obsolete Long digits",
                        "meta": {
                            "deprecated": True,
                            "basicPropertyValues": [
                                {
                                    "pred": "http://purl.obolibrary.org/obo/IAO_0100001",
                                    "val": "http://purl.obolibrary.org/obo/HP_0100807",
                                }
                            ],
                        },
                    },
                    {"id": "http://purl.obolibrary.org/obo/GO_0000001", "lbl": "Not HPO"},
                ],
                "edges": [
                    {
                        "sub": "http://purl.obolibrary.org/obo/HP_0100807",
                        "pred": "is_a",
                        "obj": "http://purl.obolibrary.org/obo/HP_0000118",
                    }
                ],
            }
        ]
    }

    terms = parse_obographs(json.dumps(document))

    assert sorted(terms) == ["HP:0000118", "HP:0009999", "HP:0100807"]
    assert terms["HP:0100807"].parents == ("HP:0000118",)
    assert terms["HP:0100807"].synonyms == ("Arachnodactyly",)
    assert terms["HP:0009999"].obsolete
    assert terms["HP:0009999"].replaced_by == "HP:0100807"


def test_parse_obographs_invalid_json():
    with pytest.raises(OntologyParseError, match="Invalid JSON"):
        parse_obographs("{not json")


def test_obsolete_remap_follows_chains_and_detects_cycles():
    chain = {
        "HP:0000010": HpoTerm("HP:0000010", "old", obsolete=True, replaced_by="HP:0000011"),
        "HP:0000011": HpoTerm("HP:0000011", "older", obsolete=True, replaced_by="HP:0000012"),
        "HP:0000012": HpoTerm("HP:0000012", "live"),
    }
    assert obsolete_remap(chain) == {"HP:0000010": "HP:0000012", "HP:0000011": "HP:0000012"}
    assert remap_id("HP:0000010", obsolete_remap(chain)) == "HP:0000012"
    assert remap_id(None, {}) is None

    cycle = {
        "HP:0000010": HpoTerm("HP:0000010", "a", obsolete=True, replaced_by="HP:0000011"),
        "HP:0000011": HpoTerm("HP:0000011", "b", obsolete=True, replaced_by="HP:0000010"),
    }
    with pytest.raises(OntologyValidationError, match="Cyclic"):
        obsolete_remap(cycle)


def test_dictionary_and_remap_files_round_trip(toy_dictionary, tmp_path):
    path = tmp_path / "dict" / "dictionary.tsv"
    write_dictionary(toy_dictionary, path)
    write_remap({"HP:0009999": "HP:0100807"}, tmp_path / "remap.tsv")

    loaded = read_dictionary(path)

    assert loaded == toy_dictionary
    assert loaded.checksum() == toy_dictionary.checksum()
    assert read_remap(tmp_path / "remap.tsv") == {"HP:0009999": "HP:0100807"}
    assert read_remap(tmp_path / "missing.tsv") == {}


def test_read_dictionary_reports_bad_line(tmp_path):
    path = tmp_path / "dictionary.tsv"
    path.write_text("long fingers\tHP:0100807\nlong toe\tHP:12\n", encoding="utf-8")

    with pytest.raises(FormatError) as excinfo:
        read_dictionary(path)

    assert excinfo.value.line == 2


def test_checksum_changes_with_content(toy_dictionary):
    other = FlatDictionary(toy_dictionary.entries[1:])

    assert other.checksum() != toy_dictionary.checksum()
    assert len(toy_dictionary.checksum()) == 64


def test_flatten_dedupes_case_variants_and_keeps_shared_surfaces():
    terms = {
        "HP:0000010": HpoTerm("HP:0000010", "Big head", ("big head", "Macrocephaly-like")),
        "HP:0000011": HpoTerm("HP:0000011", "Large skull", ("macrocephaly-like",)),
    }

    dictionary = flatten(terms, ["HP:0000010", "HP:0000011"])

    assert dictionary.entries == (
        ("big head", "HP:0000010"),
        ("large skull", "HP:0000011"),
        ("macrocephaly-like", "HP:0000010"),
        ("macrocephaly-like", "HP:0000011"),
    )
