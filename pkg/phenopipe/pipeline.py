"""Pipeline stages behind the phenopipe commands.

Each stage reads the artifacts of earlier stages and writes its own under
the artifacts directory (layout version 1):

    dictionary/   dictionary.tsv, remap.tsv
    split/        train.jsonl, validation.jsonl, summary.json
    ner/grid/     config.json, parameters.pt, vocab.txt
    nen/          config.json, dense.pt, sparse_idf.tsv, state.json
    predictions/  grid.tsv, llm.tsv, predictions.tsv
    reports/      report.json, report.txt
    manifests/    <command>.json

Stages run one after another in a single process; parallelism stays
inside a stage (LLM requests).
"""

import json
import logging
import math
import platform
import random
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tabulate import tabulate

from . import __version__
from .config import PipelineConfig
from .corpus import (
    CorpusDocument,
    load_corpus,
    read_annotation_tsv,
    read_corpus_jsonl,
    remap_annotations,
    write_annotation_tsv,
    write_corpus_jsonl,
)
from .documents import AnnotationSet, Category, Mention, Sentence, mention_text, merge_fragments
from .ensemble import MergePolicy, merge_runs
from .evaluator import EvalReport, evaluate, write_report
from .exceptions import AlignmentError, ConfigurationError, MissingArtifactError
from .logging_handler import AuditLogger
from .ner import (
    FallbackBackend,
    GridExtractionBackend,
    LLMExtractionBackend,
    create_client,
    extract_many,
    load_grid_model,
    save_grid_model,
    train_grid_model,
)
from .normalizer import (
    TrainedNormalizer,
    build_dense_encoder,
    load_normalizer,
    normalize,
    pre_finetune,
    save_normalizer,
    train_normalizer,
)
from .ontology import (
    FlatDictionary,
    build_dictionary,
    read_dictionary,
    read_remap,
    write_dictionary,
    write_remap,
)
from .preprocess import AbbreviationLexicon, default_lexicon, load_lexicon, tokenize

logger = logging.getLogger(__name__)

LAYOUT_VERSION = 1


class EdgeCaseLabel(str, Enum):
    NO_FINDING = "no_finding"
    HAS_DISCONTINUOUS = "has_discontinuous"
    NORMAL_ONLY = "normal_only"
    CONTINUOUS_ONLY = "continuous_only"


def label_edge_case(gold: AnnotationSet) -> EdgeCaseLabel:
    """Precedence: NO_FINDING > HAS_DISCONTINUOUS > NORMAL_ONLY > CONTINUOUS_ONLY."""
    if not gold.mentions:
        return EdgeCaseLabel.NO_FINDING
    if any(m.is_discontinuous for m in gold.mentions):
        return EdgeCaseLabel.HAS_DISCONTINUOUS
    if all(m.category == Category.NORMAL_FINDING for m in gold.mentions):
        return EdgeCaseLabel.NORMAL_ONLY
    return EdgeCaseLabel.CONTINUOUS_ONLY


def stratified_split(
    documents: Sequence[CorpusDocument], ratio: float = 0.7, seed: int = 13
) -> Tuple[List[CorpusDocument], List[CorpusDocument]]:
    """Shuffle each edge-case stratum with a seeded RNG and cut it at `ratio`.

    The train share of a stratum is floor(n * ratio); a stratum of one goes
    to train. Both halves come back sorted by consultation id.
    """
    if not 0 < ratio < 1:
        raise ConfigurationError(f"split ratio must be in (0, 1), got {ratio}")
    strata: Dict[EdgeCaseLabel, List[CorpusDocument]] = defaultdict(list)
    for document in sorted(documents, key=lambda d: d.id):
        strata[label_edge_case(document.gold)].append(document)

    rng = np.random.default_rng(seed)
    train: List[CorpusDocument] = []
    validation: List[CorpusDocument] = []
    for label in EdgeCaseLabel:
        members = strata.get(label, [])
        if not members:
            continue
        shuffled = [members[i] for i in rng.permutation(len(members))]
        if len(shuffled) == 1:
            logger.warning("Stratum %s has a single consultation; it goes to train", label.value)
            cut = 1
        else:
            cut = int(math.floor(len(shuffled) * ratio + 1e-9))
        train.extend(shuffled[:cut])
        validation.extend(shuffled[cut:])
    return sorted(train, key=lambda d: d.id), sorted(validation, key=lambda d: d.id)


def split_summary(
    train: Sequence[CorpusDocument], validation: Sequence[CorpusDocument]
) -> Dict[str, Dict[str, int]]:
    summary = {label.value: {"train": 0, "validation": 0} for label in EdgeCaseLabel}
    for side, documents in (("train", train), ("validation", validation)):
        for document in documents:
            summary[label_edge_case(document.gold).value][side] += 1
    return summary


def summary_table(summary: Dict[str, Dict[str, int]]) -> str:
    rows = [
        [label, counts["train"], counts["validation"], counts["train"] + counts["validation"]]
        for label, counts in summary.items()
    ]
    return tabulate(rows, headers=["Edge case", "Train", "Validation", "Total"], tablefmt="grid")


def sentence_examples(
    document: CorpusDocument,
    lexicon: Optional[AbbreviationLexicon] = None,
    expand_statistics: bool = False,
) -> List[Tuple[Sentence, List[Mention]]]:
    """Tokenize a gold consultation and attach each gold mention to its sentence.

    Mentions are moved into the rewritten coordinates when preprocessing is on.
    """
    consultation = tokenize(document.text, document.id, lexicon, expand_statistics)
    trace = consultation.trace
    attached: List[List[Mention]] = [[] for _ in consultation.sentences]
    for mention in document.gold.mentions:
        fragments = merge_fragments(
            [(trace.to_rewritten_start(s), trace.to_rewritten_end(e)) for s, e in mention.fragments]
        )
        moved = Mention(fragments, mention.category, mention.hpo_id)
        for i, sentence in enumerate(consultation.sentences):
            if sentence.start <= moved.start and moved.end <= sentence.end:
                attached[i].append(moved)
                break
        else:
            raise AlignmentError(
                f"Gold mention of {document.id} crosses a sentence boundary", mention.fragments[0]
            )
    return [(s, m) for s, m in zip(consultation.sentences, attached) if s.tokens]


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


@dataclass(frozen=True)
class ArtifactLayout:
    root: Path

    @property
    def dictionary(self) -> Path:
        return self.root / "dictionary" / "dictionary.tsv"

    @property
    def remap(self) -> Path:
        return self.root / "dictionary" / "remap.tsv"

    @property
    def train(self) -> Path:
        return self.root / "split" / "train.jsonl"

    @property
    def validation(self) -> Path:
        return self.root / "split" / "validation.jsonl"

    @property
    def summary(self) -> Path:
        return self.root / "split" / "summary.json"

    @property
    def grid_model(self) -> Path:
        return self.root / "ner" / "grid"

    @property
    def normalizer(self) -> Path:
        return self.root / "nen"

    @property
    def predictions(self) -> Path:
        return self.root / "predictions"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def manifests(self) -> Path:
        return self.root / "manifests"

    def prediction_file(self, name: str) -> Path:
        return self.predictions / f"{name}.tsv"


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(str(path), producer)
    return path


class Pipeline:
    """Runs the stages of one configured pipeline over one artifacts directory."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.layout = ArtifactLayout(Path(config.artifacts_dir))

    # -- shared loaders ------------------------------------------------------

    def lexicon(self) -> AbbreviationLexicon:
        if self.config.abbrev_lexicon is not None:
            return load_lexicon(self.config.abbrev_lexicon)
        return default_lexicon()

    def dictionary(self) -> FlatDictionary:
        path = _require(self.layout.dictionary, "build-dict")
        return read_dictionary(path, self.config.version_tag)

    def split_documents(self, side: str) -> List[CorpusDocument]:
        path = self.layout.train if side == "train" else self.layout.validation
        return read_corpus_jsonl(_require(path, "split"))

    def write_manifest(
        self, command: str, inputs: Dict[str, Path], outputs: Dict[str, Path]
    ) -> Path:
        checksum = None
        if self.layout.dictionary.exists():
            checksum = read_dictionary(self.layout.dictionary, self.config.version_tag).checksum()
        manifest = {
            "command": command,
            "layout_version": LAYOUT_VERSION,
            "config_hash": self.config.config_hash,
            "seed": self.config.seed,
            "dictionary_checksum": checksum,
            "versions": {
                "phenopipe": __version__,
                "python": platform.python_version(),
                "torch": torch.__version__,
                "numpy": np.__version__,
            },
            "inputs": {k: str(v) for k, v in sorted(inputs.items())},
            "outputs": {k: str(v) for k, v in sorted(outputs.items())},
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        path = self.layout.manifests / f"{command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    # -- stages ----------------------------------------------------------------

    def build_dict(self) -> FlatDictionary:
        source = self.config.ontology
        if source is None or not Path(source).exists():
            raise ConfigurationError(f"Ontology file not found: {source} (set paths.ontology)")
        dictionary, remap = build_dictionary(source, self.config.root_id, self.config.version_tag)
        write_dictionary(dictionary, self.layout.dictionary)
        write_remap(remap, self.layout.remap)
        self.write_manifest(
            "build-dict",
            {"ontology": Path(source)},
            {"dictionary": self.layout.dictionary, "remap": self.layout.remap},
        )
        return dictionary

    def split(self) -> Tuple[List[CorpusDocument], List[CorpusDocument]]:
        corpus_path = self.config.corpus
        if corpus_path is None or not Path(corpus_path).exists():
            raise ConfigurationError(f"Corpus file not found: {corpus_path} (set paths.corpus)")
        _require(self.layout.dictionary, "build-dict")
        remap = read_remap(self.layout.remap)
        documents = load_corpus(corpus_path, self.config.corpus_format, remap)
        train, validation = stratified_split(documents, self.config.split_ratio, self.config.seed)
        write_corpus_jsonl(train, self.layout.train)
        write_corpus_jsonl(validation, self.layout.validation)
        summary = split_summary(train, validation)
        self.layout.summary.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        logger.info(
            "Split %d/%d consultations\n%s", len(train), len(validation), summary_table(summary)
        )
        self.write_manifest(
            "split",
            {"corpus": Path(corpus_path)},
            {"train": self.layout.train, "validation": self.layout.validation},
        )
        return train, validation

    def train_ner(self):
        seed_everything(self.config.seed)
        train = self.split_documents("train")
        lexicon = self.lexicon() if self.config.preprocess_grid else None
        corpus = []
        for document in train:
            corpus.extend(sentence_examples(document, lexicon, self.config.preprocess_grid))
        model = train_grid_model(corpus, self.config.grid, self.config.seed)
        save_grid_model(model, self.layout.grid_model)
        self.write_manifest(
            "train-ner", {"train": self.layout.train}, {"grid": self.layout.grid_model}
        )
        return model

    def nen_instances(self, documents: Sequence[CorpusDocument]) -> List[Tuple[str, str, str]]:
        """(surface, gold id, consultation id) for every gold mention with an id."""
        instances = []
        for document in documents:
            for mention in document.gold.mentions:
                if mention.hpo_id is None:
                    continue
                if (
                    self.config.normalizer.exclude_normal_findings
                    and mention.category == Category.NORMAL_FINDING
                ):
                    continue
                surface = mention_text(mention, document.text)
                instances.append((surface, mention.hpo_id, document.id))
        return instances

    def train_nen(self) -> TrainedNormalizer:
        seed_everything(self.config.seed)
        dictionary = self.dictionary()
        train = self.split_documents("train")
        dense_settings = dict(self.config.dense)
        dense = build_dense_encoder(dense_settings.pop("encoder", "ngram_bag"), **dense_settings)
        pre = self.config.pre_finetune
        if pre.enabled and pre.epochs > 0:
            dense = pre_finetune(dense, dictionary, pre.epochs, pre, self.config.seed)
        trained = train_normalizer(
            self.nen_instances(train),
            dictionary,
            self.config.normalizer,
            dense,
            seed=self.config.seed,
        )
        save_normalizer(trained, self.layout.normalizer)
        self.write_manifest(
            "train-nen",
            {"train": self.layout.train, "dictionary": self.layout.dictionary},
            {"nen": self.layout.normalizer},
        )
        return trained

    def _grid_backend(self) -> GridExtractionBackend:
        model = load_grid_model(self.layout.grid_model)
        lexicon = self.lexicon() if self.config.preprocess_grid else None
        return GridExtractionBackend(model, lexicon, self.config.preprocess_grid)

    def _llm_backend(self):
        settings = dict(self.config.llm)
        base = self.config.config_dir
        replay = settings.get("replay_file")
        if replay and not Path(replay).is_absolute():
            settings["replay_file"] = str(base / replay)
        audit = None
        if settings.get("audit_log"):
            audit_path = Path(settings["audit_log"])
            if not audit_path.is_absolute():
                audit_path = self.layout.root / audit_path
            audit = AuditLogger(str(audit_path))
        client = create_client(settings.get("client", "http"), settings, audit)
        lexicon = self.lexicon() if self.config.preprocess_llm else None
        backend = LLMExtractionBackend(client, lexicon, self.config.preprocess_llm)
        if not self.config.fallback_to_grid:
            return backend
        if not (self.layout.grid_model / "parameters.pt").exists():
            logger.warning(
                "fallback_to_grid is set but no grid model is trained; LLM failures will abort"
            )
            return backend
        return FallbackBackend(backend, self._grid_backend())

    def _normalized(
        self,
        predictions: Sequence[AnnotationSet],
        texts: Dict[str, str],
        trained: TrainedNormalizer,
    ) -> List[AnnotationSet]:
        """Attach HPO ids to key findings; normal findings stay unnormalized."""
        normalized = []
        for annotations in predictions:
            text = texts[annotations.consultation_id]
            mentions = []
            for mention in annotations.mentions:
                if mention.category == Category.KEY_FINDING:
                    hpo_id, _ = normalize(mention, text, trained)
                    mention = mention.with_hpo_id(hpo_id)
                mentions.append(mention)
            normalized.append(AnnotationSet.build(annotations.consultation_id, mentions))
        return normalized

    def predict(self) -> List[AnnotationSet]:
        seed_everything(self.config.seed)
        validation = self.split_documents("validation")
        dictionary = self.dictionary()
        # Fail on a missing model before spending any remote calls.
        if self.config.backend in ("grid", "both"):
            _require(self.layout.grid_model / "parameters.pt", "train-ner")
        trained = load_normalizer(self.layout.normalizer, dictionary)

        records = [(d.id, d.text) for d in validation]
        texts = dict(records)
        runs: Dict[str, List[AnnotationSet]] = {}
        if self.config.backend in ("grid", "both"):
            runs["grid"] = extract_many(self._grid_backend(), records)
        if self.config.backend in ("llm", "both"):
            workers = int(self.config.llm.get("max_in_flight", 4))
            runs["llm"] = extract_many(self._llm_backend(), records, max_workers=workers)

        outputs: Dict[str, Path] = {}
        for name in sorted(runs):
            runs[name] = self._normalized(runs[name], texts, trained)
            outputs[name] = self.layout.prediction_file(name)
            write_annotation_tsv(runs[name], outputs[name], texts)

        if self.config.backend == "both":
            final = merge_runs(runs["grid"], runs["llm"], self.merge_policy())
        else:
            final = runs[self.config.backend]
        outputs["predictions"] = self.layout.prediction_file("predictions")
        write_annotation_tsv(final, outputs["predictions"], texts)
        self.write_manifest(
            "predict",
            {"validation": self.layout.validation, "nen": self.layout.normalizer},
            outputs,
        )
        return final

    def merge_policy(self) -> MergePolicy:
        return MergePolicy(overlap_same_id_collapse=self.config.overlap_same_id_collapse)

    def ensemble(
        self,
        a_path: Optional[Path] = None,
        b_path: Optional[Path] = None,
        out_path: Optional[Path] = None,
    ) -> List[AnnotationSet]:
        """Merge two prediction TSVs; defaults are the grid and LLM runs of `predict`."""
        a_path = Path(a_path) if a_path else self.layout.prediction_file("grid")
        b_path = Path(b_path) if b_path else self.layout.prediction_file("llm")
        out_path = Path(out_path) if out_path else self.layout.prediction_file("predictions")
        merged = merge_runs(
            read_annotation_tsv(_require(a_path, "predict")),
            read_annotation_tsv(_require(b_path, "predict")),
            self.merge_policy(),
        )
        texts = None
        if self.layout.validation.exists():
            texts = {d.id: d.text for d in read_corpus_jsonl(self.layout.validation)}
        write_annotation_tsv(merged, out_path, texts)
        self.write_manifest("ensemble", {"a": a_path, "b": b_path}, {"predictions": out_path})
        return merged

    def evaluate(
        self,
        gold_path: Optional[Path] = None,
        pred_path: Optional[Path] = None,
        per_term: bool = False,
    ) -> EvalReport:
        """Score predictions against a gold TSV, or against the validation split."""
        pred_path = Path(pred_path) if pred_path else self.layout.prediction_file("predictions")
        predictions = read_annotation_tsv(_require(pred_path, "predict"))
        if gold_path:
            remap = read_remap(self.layout.remap)
            gold = [remap_annotations(s, remap) for s in read_annotation_tsv(gold_path)]
            gold_source = Path(gold_path)
        else:
            gold_source = self.layout.validation
            gold = [d.gold for d in self.split_documents("validation")]
        report = evaluate(gold, predictions, per_term)
        json_path, text_path = write_report(report, self.layout.reports)
        logger.info("Evaluation\n%s", report.to_table())
        self.write_manifest(
            "evaluate",
            {"gold": gold_source, "predictions": pred_path},
            {"report_json": json_path, "report_text": text_path},
        )
        return report

    def end2end(self, per_term: bool = False) -> EvalReport:
        self.build_dict()
        self.split()
        if self.config.backend in ("grid", "both") or self.config.fallback_to_grid:
            self.train_ner()
        self.train_nen()
        self.predict()
        return self.evaluate(per_term=per_term)
