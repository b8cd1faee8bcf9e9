"""Synthetic ontology, corpus, benchmark and replay data."""

import json
import random
from collections import Counter

import yaml

from phenopipe.config import PhenoPipeConfig
from phenopipe.corpus import read_corpus_jsonl
from phenopipe.ner.llm_backend import CLASSIFY_STEP, EXTRACT_STEP, ReplayExtractionClient
from phenopipe.ontology import obsolete_remap, observable_subset, parse_ontology
from phenopipe.pipeline import EdgeCaseLabel, label_edge_case
from phenopipe.preprocess import default_lexicon, preprocess_text
from phenopipe.synthetic import (
    MODIFIER_ALIASES,
    OBSOLETE_TERM,
    benchmark_queries,
    leaf_id,
    nen_benchmark,
    replay_records,
    synthetic_corpus,
    toy_ontology,
    typo,
    write_synthetic,
)


def test_toy_ontology_has_fifty_observable_terms():
    terms = toy_ontology()

    assert len(observable_subset(terms)) == 50
    assert obsolete_remap(terms) == {OBSOLETE_TERM: leaf_id(0, 0)}


def test_typo_is_one_edit_away():
    rng = random.Random(0)
    for word in ["fingers", "philtrum", "forehead"]:
        changed = typo(word, rng)
        assert abs(len(changed) - len(word)) <= 1
        assert changed[0] == word[0]


def test_corpus_strata_and_determinism(synthetic_documents):
    labels = Counter(label_edge_case(d.gold) for d in synthetic_documents)

    assert labels == {
        EdgeCaseLabel.CONTINUOUS_ONLY: 30,
        EdgeCaseLabel.HAS_DISCONTINUOUS: 20,
        EdgeCaseLabel.NORMAL_ONLY: 15,
        EdgeCaseLabel.NO_FINDING: 15,
    }
    assert synthetic_corpus() == synthetic_documents
    assert len({d.id for d in synthetic_documents}) == 80


def test_corpus_carries_one_obsolete_gold_id(synthetic_documents):
    obsolete = [
        m for d in synthetic_documents for m in d.gold.mentions if m.hpo_id == OBSOLETE_TERM
    ]

    assert len(obsolete) == 1


def test_benchmark_queries_avoid_dictionary_surfaces(tmp_path):
    benchmark = nen_benchmark(tmp_path)
    aliases = {alias for pair in MODIFIER_ALIASES.values() for alias in pair}

    assert len(benchmark.train) == 100
    assert len(benchmark.test) == 50
    for surface, hpo_id, _ in benchmark.train + benchmark.test:
        assert surface.split()[0] in aliases
        assert surface not in benchmark.dictionary.surfaces
        assert hpo_id in benchmark.dictionary.hpo_ids()
    assert benchmark_queries() == benchmark_queries()


def test_replay_records_answer_every_consultation(synthetic_documents):
    records = replay_records(synthetic_documents)
    lexicon = default_lexicon()

    keys = {(r["step"], r["text"]) for r in records}
    for document in synthetic_documents:
        text = preprocess_text(document.text, lexicon, expand_statistics=True).rewritten
        assert (EXTRACT_STEP, text) in keys
        assert ((CLASSIFY_STEP, text) in keys) == bool(document.gold.mentions)


def test_write_synthetic_produces_a_loadable_bundle(tmp_path):
    paths = write_synthetic(tmp_path / "synthetic")

    assert all(path.exists() for path in paths.values())
    terms = parse_ontology(paths["ontology"])
    assert len(observable_subset(terms)) == 50
    assert len(read_corpus_jsonl(paths["corpus"])) == 80
    ReplayExtractionClient(paths["replay"])
    rows = paths["benchmark"].read_text().splitlines()
    assert len(rows) == 150
    assert rows[0].split("\t")[0] == "q000"

    config = PhenoPipeConfig(str(paths["config"]))
    assert config.validate() == []
    assert config.get("ner.llm.client") == "replay"
    pipeline = config.pipeline_config()
    assert pipeline.corpus == tmp_path / "synthetic" / "corpus.jsonl"
    assert yaml.safe_load(paths["config"].read_text())["ner"]["backend"] == "both"


def test_replay_file_lines_are_sorted_json(tmp_path):
    paths = write_synthetic(tmp_path)

    lines = paths["replay"].read_text().splitlines()
    records = [json.loads(line) for line in lines]

    keys = [(r["step"], r["text"]) for r in records]
    assert keys == sorted(keys)
