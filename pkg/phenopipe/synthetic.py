"""Deterministic synthetic data: toy ontology, NEN benchmark and a consultation corpus.

The toy ontology has 50 observable terms under HP:0000118 (three grouping
terms, 45 modifier x anatomy leaves, microcephaly and macrocephaly), an
inheritance branch outside the observable subset and one obsolete term.
Dictionary synonyms are noisy renderings of each name; benchmark queries
use modifier aliases that never occur in the dictionary, so only a trained
normalizer resolves them reliably.
"""

import json
import logging
import random
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import yaml

from .corpus import CorpusDocument, write_corpus_jsonl
from .documents import AnnotationSet, Category, Mention
from .ner.llm_backend import CLASSIFY_STEP, EXTRACT_STEP
from .ontology import FlatDictionary, HpoTerm, build_dictionary, serialize_obo
from .preprocess import DEFAULT_LEXICON_PATH, default_lexicon, preprocess_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ROOT = "HP:0000001"
PHENOTYPIC_ABNORMALITY = "HP:0000118"
MODE_OF_INHERITANCE = "HP:0000005"
AUTOSOMAL_DOMINANT = "HP:0000006"
MICROCEPHALY = "HP:0000252"
MACROCEPHALY = "HP:0000256"
OBSOLETE_TERM = "HP:0009001"

GROUPS = {
    "limbs": ("HP:0001001", "Abnormality of the limbs", "Limb anomaly"),
    "face": ("HP:0001002", "Abnormality of the face", "Facial anomaly"),
    "head": ("HP:0001003", "Abnormality of the head and neck", "Head and neck anomaly"),
}

# (anatomy, group)
ANATOMY: Tuple[Tuple[str, str], ...] = (
    ("fingers", "limbs"),
    ("toes", "limbs"),
    ("thumb", "limbs"),
    ("nose", "face"),
    ("philtrum", "face"),
    ("forehead", "face"),
    ("palpebral fissures", "face"),
    ("ears", "head"),
    ("neck", "head"),
)
MODIFIERS = ("long", "short", "broad", "narrow", "prominent")

# Query-side wording only; none of these appear in the dictionary.
MODIFIER_ALIASES: Dict[str, Tuple[str, str]] = {
    "long": ("extended", "lengthened"),
    "short": ("stubby", "truncated"),
    "broad": ("wide", "widened"),
    "narrow": ("thin", "slim"),
    "prominent": ("protruding", "bulging"),
}

NO_FINDING_SENTENCES = (
    "No dysmorphic features were identified.",
    "Growth parameters were reviewed with the family.",
    "Follow up in six months.",
    "Development is age appropriate.",
)


def leaf_id(modifier_index: int, anatomy_index: int) -> str:
    return f"HP:{2000 + anatomy_index * len(MODIFIERS) + modifier_index:07d}"


def typo(word: str, rng: random.Random) -> str:
    """One character edit (swap, drop or double) away from the middle of `word`."""
    letters = [i for i, ch in enumerate(word) if ch.isalpha()]
    inner = letters[1:-1] or letters
    position = rng.choice(inner)
    operation = rng.choice(("swap", "drop", "double"))
    if operation == "swap" and position + 1 < len(word) and word[position + 1].isalpha():
        return word[:position] + word[position + 1] + word[position] + word[position + 2 :]
    if operation == "drop" and len(word) > 3:
        return word[:position] + word[position + 1 :]
    return word[:position] + word[position] + word[position:]


def toy_ontology(seed: int = 13) -> Dict[str, HpoTerm]:
    rng = random.Random(seed)
    terms = {
        ROOT: HpoTerm(ROOT, "All"),
        PHENOTYPIC_ABNORMALITY: HpoTerm(
            PHENOTYPIC_ABNORMALITY, "Phenotypic abnormality", (), (ROOT,)
        ),
        MODE_OF_INHERITANCE: HpoTerm(MODE_OF_INHERITANCE, "Mode of inheritance", (), (ROOT,)),
        AUTOSOMAL_DOMINANT: HpoTerm(
            AUTOSOMAL_DOMINANT,
            "Autosomal dominant inheritance",
            ("Autosomal dominant",),
            (MODE_OF_INHERITANCE,),
        ),
    }
    for group_id, name, synonym in GROUPS.values():
        terms[group_id] = HpoTerm(group_id, name, (synonym,), (PHENOTYPIC_ABNORMALITY,))

    for a, (anatomy, group) in enumerate(ANATOMY):
        for m, modifier in enumerate(MODIFIERS):
            name = f"{modifier.capitalize()} {anatomy}"
            synonyms = (
                f"{anatomy}, {modifier}",
                f"abnormally {modifier} {anatomy}",
                f"{modifier} {typo(anatomy, rng)}",
            )
            term_id = leaf_id(m, a)
            terms[term_id] = HpoTerm(term_id, name, synonyms, (GROUPS[group][0],))

    head = GROUPS["head"][0]
    terms[MICROCEPHALY] = HpoTerm(
        MICROCEPHALY,
        "Microcephaly",
        ("Decreased head circumference", "Small head circumference", "Reduced head size"),
        (head,),
    )
    terms[MACROCEPHALY] = HpoTerm(
        MACROCEPHALY,
        "Macrocephaly",
        ("Increased head circumference", "Large head circumference", "Big head size"),
        (head,),
    )
    terms[OBSOLETE_TERM] = HpoTerm(
        OBSOLETE_TERM,
        "obsolete Elongated fingers",
        (),
        (),
        obsolete=True,
        replaced_by=leaf_id(0, 0),
    )
    return terms


@dataclass
class NenBenchmark:
    dictionary: FlatDictionary
    train: List[Tuple[str, str, str]]
    test: List[Tuple[str, str, str]]


def benchmark_queries(count: int = 150, seed: int = 13) -> List[Tuple[str, str, str]]:
    """(surface, gold id, query id) built from modifier aliases, a third with a typo."""
    rng = random.Random(seed)
    queries = []
    for number in range(count):
        a = rng.randrange(len(ANATOMY))
        m = rng.randrange(len(MODIFIERS))
        anatomy = ANATOMY[a][0]
        if rng.random() < 0.3:
            anatomy = typo(anatomy, rng)
        alias = rng.choice(MODIFIER_ALIASES[MODIFIERS[m]])
        queries.append((f"{alias} {anatomy}", leaf_id(m, a), f"q{number:03d}"))
    return queries


def nen_benchmark(directory: PathLike, seed: int = 13, train_size: int = 100) -> NenBenchmark:
    """Write the toy ontology under `directory` and return dictionary plus query splits."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ontology_path = directory / "toy_hpo.obo"
    ontology_path.write_text(serialize_obo(toy_ontology(seed)), encoding="utf-8")
    dictionary, _ = build_dictionary(ontology_path)
    queries = benchmark_queries(seed=seed)
    return NenBenchmark(dictionary, queries[:train_size], queries[train_size:])


# ---------------------------------------------------------------------------
# Consultation corpus


class _TextBuilder:
    def __init__(self):
        self.parts: List[str] = []
        self.length = 0
        self.mentions: List[Mention] = []

    def add(self, text: str) -> Tuple[int, int]:
        start = self.length
        self.parts.append(text)
        self.length += len(text)
        return start, self.length

    def mention(self, text: str, category: Category, hpo_id: Optional[str]) -> None:
        self.mentions.append(Mention((self.add(text),), category, hpo_id))

    def document(self, consultation_id: str) -> CorpusDocument:
        text = "".join(self.parts)
        gold = AnnotationSet.build(consultation_id, self.mentions)
        return CorpusDocument(consultation_id, text, gold)


def _finding(rng: random.Random) -> Tuple[str, str]:
    a = rng.randrange(len(ANATOMY))
    m = rng.randrange(len(MODIFIERS))
    modifier = MODIFIERS[m]
    if rng.random() < 0.4:
        modifier = rng.choice(MODIFIER_ALIASES[modifier])
    return f"{modifier} {ANATOMY[a][0]}", leaf_id(m, a)


def _normal(builder: _TextBuilder, rng: random.Random) -> None:
    anatomy = rng.choice(ANATOMY)[0]
    builder.mention(f"Normal {anatomy}", Category.NORMAL_FINDING, None)
    builder.add(". ")


def _continuous(builder: _TextBuilder, rng: random.Random) -> None:
    first, first_id = _finding(rng)
    template = rng.randrange(3)
    if template == 0:
        builder.add("On examination the child has ")
        builder.mention(first, Category.KEY_FINDING, first_id)
        builder.add(". ")
    elif template == 1:
        second, second_id = _finding(rng)
        while second_id == first_id:
            second, second_id = _finding(rng)
        builder.add("There are ")
        builder.mention(first, Category.KEY_FINDING, first_id)
        builder.add(" and ")
        builder.mention(second, Category.KEY_FINDING, second_id)
        builder.add(". ")
    else:
        builder.add("Examination shows ")
        builder.mention(first, Category.KEY_FINDING, first_id)
        builder.add(". ")


def _percentile(builder: _TextBuilder, rng: random.Random) -> None:
    if rng.random() < 0.5:
        surface, hpo_id = f"HC < {rng.choice((1, 2, 3))}% for age", MICROCEPHALY
    else:
        surface, hpo_id = f"HC > {rng.choice((97, 98, 99))}% for age", MACROCEPHALY
    builder.mention(surface, Category.KEY_FINDING, hpo_id)
    builder.add(". ")


def _discontinuous(builder: _TextBuilder, rng: random.Random) -> None:
    """'Long fingers and toes': a continuous mention plus one sharing its head."""
    m = rng.randrange(len(MODIFIERS))
    first, second = rng.sample(range(len(ANATOMY)), 2)
    modifier = MODIFIERS[m].capitalize()
    start, _ = builder.add(modifier)
    builder.add(" ")
    first_span = builder.add(ANATOMY[first][0])
    builder.add(" and ")
    second_span = builder.add(ANATOMY[second][0])
    builder.add(" are present. ")
    head = (start, start + len(modifier))
    builder.mentions.append(
        Mention(((start, first_span[1]),), Category.KEY_FINDING, leaf_id(m, first))
    )
    builder.mentions.append(Mention((head, second_span), Category.KEY_FINDING, leaf_id(m, second)))


def synthetic_corpus(
    seed: int = 13, per_stratum: Tuple[int, int, int, int] = (30, 20, 15, 15)
) -> List[CorpusDocument]:
    """Continuous, discontinuous, normal-only and no-finding consultations, in that order."""
    rng = random.Random(seed)
    continuous, discontinuous, normal_only, no_finding = per_stratum
    documents = []
    number = 0

    def next_id() -> str:
        nonlocal number
        number += 1
        return f"C{number:04d}"

    for i in range(continuous):
        builder = _TextBuilder()
        _continuous(builder, rng)
        if i == 0:
            # Gold annotation with an obsolete id; loading remaps it.
            builder.add("The child also has ")
            builder.mention("long fingers", Category.KEY_FINDING, OBSOLETE_TERM)
            builder.add(". ")
        if i % 5 == 0:
            _percentile(builder, rng)
        if rng.random() < 0.3:
            _normal(builder, rng)
        documents.append(builder.document(next_id()))
    for _ in range(discontinuous):
        builder = _TextBuilder()
        _discontinuous(builder, rng)
        if rng.random() < 0.3:
            _normal(builder, rng)
        documents.append(builder.document(next_id()))
    for _ in range(normal_only):
        builder = _TextBuilder()
        _normal(builder, rng)
        builder.add(rng.choice(NO_FINDING_SENTENCES))
        documents.append(builder.document(next_id()))
    for _ in range(no_finding):
        builder = _TextBuilder()
        builder.add(" ".join(rng.sample(NO_FINDING_SENTENCES, 2)))
        documents.append(builder.document(next_id()))
    return documents


def replay_records(documents: Sequence[CorpusDocument]) -> List[Dict]:
    """Canned two-step answers matching the gold, keyed by the preprocessed text."""
    lexicon = default_lexicon()
    records: Dict[Tuple[int, str], Dict] = {}
    for document in documents:
        trace = preprocess_text(document.text, lexicon, expand_statistics=True)
        text = trace.rewritten
        items = []
        for mention in document.gold.mentions:
            surface = " ".join(
                text[trace.to_rewritten_start(s) : trace.to_rewritten_end(e)]
                for s, e in mention.fragments
            )
            items.append({"text": surface, "category": mention.category.value})
        records[(EXTRACT_STEP, text)] = {
            "step": EXTRACT_STEP,
            "text": text,
            "response": {"items": [{"text": item["text"]} for item in items]},
        }
        if items:
            records[(CLASSIFY_STEP, text)] = {
                "step": CLASSIFY_STEP,
                "text": text,
                "response": {"items": items},
            }
    return [records[key] for key in sorted(records)]


def synthetic_config() -> Dict:
    """Small, fast settings pointing at the generated files."""
    return {
        "config_version": 1,
        "paths": {
            "ontology": "toy_hpo.obo",
            "abbrev_lexicon": "abbreviations.tsv",
            "corpus": "corpus.jsonl",
            "corpus_format": "jsonl",
            "artifacts_dir": "artifacts",
        },
        "ner": {
            "backend": "both",
            "llm": {"client": "replay", "replay_file": "llm_replay.jsonl"},
            "grid": {"epochs": 30, "batch_size": 8, "learning_rate": 0.005},
        },
        "nen": {"epochs": 20, "learning_rate": 0.01, "pre_finetune": {"epochs": 10}},
    }


def write_synthetic(directory: PathLike, seed: int = 13) -> Dict[str, Path]:
    """Write ontology, corpus, lexicon, LLM replay file, benchmark and config."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "ontology": directory / "toy_hpo.obo",
        "corpus": directory / "corpus.jsonl",
        "abbrev_lexicon": directory / "abbreviations.tsv",
        "replay": directory / "llm_replay.jsonl",
        "benchmark": directory / "nen_benchmark.tsv",
        "config": directory / "phenopipe.yaml",
    }
    paths["ontology"].write_text(serialize_obo(toy_ontology(seed)), encoding="utf-8")
    documents = synthetic_corpus(seed)
    write_corpus_jsonl(documents, paths["corpus"])
    shutil.copyfile(DEFAULT_LEXICON_PATH, paths["abbrev_lexicon"])
    with open(paths["replay"], "w", encoding="utf-8", newline="\n") as f:
        for record in replay_records(documents):
            f.write(json.dumps(record, sort_keys=True) + "\n")
    with open(paths["benchmark"], "w", encoding="utf-8", newline="\n") as f:
        for surface, hpo_id, query_id in benchmark_queries(seed=seed):
            f.write(f"{query_id}\t{surface}\t{hpo_id}\n")
    with open(paths["config"], "w", encoding="utf-8") as f:
        yaml.safe_dump(synthetic_config(), f, default_flow_style=False, sort_keys=True)
    logger.info("Wrote synthetic data (%d consultations) to %s", len(documents), directory)
    return paths
