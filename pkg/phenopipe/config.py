"""
Configuration management for phenopipe.

A YAML file overrides a nested defaults dict. Values are read with
dot-notation keys, and typed views are built for the model configs.
"""

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .backend_registry import get_backend_names
from .exceptions import ConfigurationError
from .ner.model import GridModelConfig
from .normalizer.scoring import NormalizerConfig
from .normalizer.training import PreFinetuneConfig
from .ontology import DEFAULT_VERSION_TAG, PHENOTYPIC_ABNORMALITY

NER_BACKENDS = ("grid", "llm", "both")
CORPUS_FORMATS = ("jsonl", "challenge")


class PhenoPipeConfig:
    """Configuration manager for pipeline settings."""

    CONFIG_VERSION = 1

    def __init__(
        self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None
    ):
        """Initialize configuration.

        Args:
            config_path: YAML file to merge over the defaults (optional)
            overrides: Dot-notation values applied last, e.g. CLI flags
        """
        self.config_path = config_path
        self._config_data = self._load_config(config_path)
        for key, value in (overrides or {}).items():
            if value is not None:
                self.set(key, value)

    @staticmethod
    def default_config() -> Dict[str, Any]:
        """Get default configuration values."""
        grid = GridModelConfig()
        nen = NormalizerConfig()
        pre = PreFinetuneConfig()
        return {
            "config_version": PhenoPipeConfig.CONFIG_VERSION,
            "paths": {
                "ontology": "hp.obo",
                "abbrev_lexicon": None,
                "corpus": "corpus.jsonl",
                "corpus_format": "jsonl",
                "artifacts_dir": "artifacts",
            },
            "ontology": {
                "root_id": PHENOTYPIC_ABNORMALITY,
                "version_tag": DEFAULT_VERSION_TAG,
            },
            "split": {"ratio": 0.7},
            "seed": 13,
            "ner": {
                "backend": "grid",
                "fallback_to_grid": True,
                "key_only": True,
                "preprocess_grid": False,
                "preprocess_llm": True,
                "grid": {
                    "epochs": grid.epochs,
                    "batch_size": grid.batch_size,
                    "learning_rate": grid.learning_rate,
                    "encoder_learning_rate": grid.encoder_learning_rate,
                    "dropout": grid.dropout,
                    "token_encoder": grid.token_encoder,
                    "pretrained_model": grid.pretrained_model,
                    "embedding_dim": grid.embedding_dim,
                    "hidden_dim": grid.hidden_dim,
                    "use_distance_embeddings": grid.use_distance_embeddings,
                    "max_paths": grid.max_paths,
                },
                "llm": {
                    "client": "http",
                    "endpoint": None,
                    "model": None,
                    "max_in_flight": 4,
                    "timeout": 60,
                    "audit_log": "ner/llm_audit.jsonl",
                    "replay_file": None,
                    "prompt_version": "v1",
                },
            },
            "nen": {
                "top_k": nen.top_k,
                "additive_k": nen.additive_k,
                "sparse_weight": nen.sparse_weight,
                "epochs": nen.epochs,
                "batch_size": nen.batch_size,
                "learning_rate": nen.learning_rate,
                "refresh_every": nen.refresh_every,
                "exclude_normal_findings": nen.exclude_normal_findings,
                "dense": {
                    "encoder": "ngram_bag",
                    "dim": 64,
                    "embedding_dim": 64,
                    "buckets": 8192,
                    "ngram_range": [2, 4],
                    "normalize": False,
                    "model_name": None,
                },
                "pre_finetune": {
                    "enabled": pre.enabled,
                    "epochs": pre.epochs,
                    "batch_size": pre.batch_size,
                    "learning_rate": pre.learning_rate,
                    "temperature": pre.temperature,
                },
            },
            "ensemble": {"overlap_same_id_collapse": True},
            "logging": {"level": "info", "file": None},
        }

    def _load_config(self, config_path: Optional[str]) -> Dict[str, Any]:
        """Load configuration from file merged over defaults."""
        if not config_path:
            return self.default_config()
        if not os.path.exists(config_path):
            raise ConfigurationError(f"Config file not found: {config_path}")
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                user_config = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Failed to load config {config_path}: {e}")
        if not isinstance(user_config, dict):
            raise ConfigurationError(f"Config file {config_path} must contain a mapping")
        return self._merge_with_defaults(self._migrate_config(user_config))

    def _migrate_config(self, config: Dict[str, Any]) -> Dict[str, Any]:
        """Upgrade older config layouts."""
        try:
            version = int(config.get("config_version", 0))
        except (TypeError, ValueError):
            version = 0
        if version > self.CONFIG_VERSION:
            raise ConfigurationError(
                f"Config version {version} is newer than this phenopipe ({self.CONFIG_VERSION})"
            )
        if version < 1:
            # Unversioned files used a flat `backend` key for the NER backend.
            if "backend" in config:
                config.setdefault("ner", {})["backend"] = config.pop("backend")
            config["config_version"] = self.CONFIG_VERSION
        return config

    def _merge_with_defaults(self, user_config: Dict[str, Any]) -> Dict[str, Any]:
        """Merge user configuration with defaults."""

        def deep_merge(default: Dict, user: Dict) -> Dict:
            result = default.copy()
            for key, value in user.items():
                if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                    result[key] = deep_merge(result[key], value)
                else:
                    result[key] = value
            return result

        return deep_merge(self.default_config(), user_config)

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by dot-notation key.

        Args:
            key: Configuration key (e.g., 'ner.backend')
            default: Default value if key not found
        """
        value = self._config_data
        try:
            for k in key.split("."):
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key: str, value: Any):
        """Set configuration value by dot-notation key (in memory only)."""
        keys = key.split(".")
        config = self._config_data
        for k in keys[:-1]:
            if not isinstance(config.get(k), dict):
                config[k] = {}
            config = config[k]
        config[keys[-1]] = value

    def get_section(self, section: str) -> Dict[str, Any]:
        return copy.deepcopy(self.get(section, {}))

    def export_config(self, file_path: str):
        """Write the effective configuration as YAML."""
        try:
            Path(file_path).parent.mkdir(parents=True, exist_ok=True)
            with open(file_path, "w", encoding="utf-8") as f:
                yaml.safe_dump(
                    self._config_data, f, default_flow_style=False, indent=2, sort_keys=True
                )
        except OSError as e:
            raise ConfigurationError(f"Failed to export config: {e}")

    def config_hash(self) -> str:
        canonical = json.dumps(self._config_data, sort_keys=True, default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def list_all(self) -> Dict[str, Any]:
        return copy.deepcopy(self._config_data)

    def validate(self) -> List[str]:
        """Validate configuration and return list of issues."""
        issues = []

        if self.get("ner.backend") not in NER_BACKENDS:
            issues.append(f"Invalid ner.backend: {self.get('ner.backend')} (choose {NER_BACKENDS})")
        if self.get("ner.llm.client") not in get_backend_names():
            issues.append(f"Invalid ner.llm.client: {self.get('ner.llm.client')}")
        if self.get("paths.corpus_format") not in CORPUS_FORMATS:
            issues.append(f"Invalid paths.corpus_format: {self.get('paths.corpus_format')}")

        ratio = self.get("split.ratio")
        if not isinstance(ratio, (int, float)) or not 0 < ratio < 1:
            issues.append(f"split.ratio must be in (0, 1), got {ratio}")
        if not isinstance(self.get("seed"), int):
            issues.append("seed must be an integer")

        for name, build in (
            ("ner.grid", self.grid_config),
            ("nen", self.normalizer_config),
        ):
            try:
                build()
            except (ConfigurationError, TypeError, ValueError) as e:
                issues.append(f"{name}: {e}")
        return issues

    # Typed views

    def grid_config(self) -> GridModelConfig:
        data = self.get_section("ner.grid")
        data["key_only"] = self.get("ner.key_only", True)
        return GridModelConfig.from_dict(data)

    def normalizer_config(self) -> NormalizerConfig:
        return NormalizerConfig.from_dict(self.get_section("nen"))

    def pre_finetune_config(self) -> PreFinetuneConfig:
        data = self.get_section("nen.pre_finetune")
        known = PreFinetuneConfig.__dataclass_fields__
        return PreFinetuneConfig(**{k: v for k, v in data.items() if k in known})

    def dense_settings(self) -> Dict[str, Any]:
        return self.get_section("nen.dense")

    def pipeline_config(self) -> "PipelineConfig":
        issues = self.validate()
        if issues:
            raise ConfigurationError("Invalid configuration: " + "; ".join(issues))
        base = Path(self.config_path).parent if self.config_path else Path(".")

        def resolve(value: Optional[str]) -> Optional[Path]:
            if not value:
                return None
            path = Path(os.path.expanduser(str(value)))
            return path if path.is_absolute() else base / path

        return PipelineConfig(
            ontology=resolve(self.get("paths.ontology")),
            abbrev_lexicon=resolve(self.get("paths.abbrev_lexicon")),
            corpus=resolve(self.get("paths.corpus")),
            corpus_format=self.get("paths.corpus_format"),
            artifacts_dir=resolve(self.get("paths.artifacts_dir")) or Path("artifacts"),
            root_id=self.get("ontology.root_id"),
            version_tag=self.get("ontology.version_tag"),
            split_ratio=float(self.get("split.ratio")),
            seed=int(self.get("seed")),
            backend=self.get("ner.backend"),
            fallback_to_grid=bool(self.get("ner.fallback_to_grid")),
            preprocess_grid=bool(self.get("ner.preprocess_grid")),
            preprocess_llm=bool(self.get("ner.preprocess_llm")),
            grid=self.grid_config(),
            normalizer=self.normalizer_config(),
            pre_finetune=self.pre_finetune_config(),
            dense=self.dense_settings(),
            llm=self.get_section("ner.llm"),
            overlap_same_id_collapse=bool(self.get("ensemble.overlap_same_id_collapse")),
            config_hash=self.config_hash(),
            config_dir=base,
        )


@dataclass
class PipelineConfig:
    """Resolved, validated settings for one pipeline run."""

    ontology: Optional[Path]
    abbrev_lexicon: Optional[Path]
    corpus: Optional[Path]
    corpus_format: str
    artifacts_dir: Path
    root_id: str = PHENOTYPIC_ABNORMALITY
    version_tag: str = DEFAULT_VERSION_TAG
    split_ratio: float = 0.7
    seed: int = 13
    backend: str = "grid"
    fallback_to_grid: bool = True
    preprocess_grid: bool = False
    preprocess_llm: bool = True
    grid: GridModelConfig = field(default_factory=GridModelConfig)
    normalizer: NormalizerConfig = field(default_factory=NormalizerConfig)
    pre_finetune: PreFinetuneConfig = field(default_factory=PreFinetuneConfig)
    dense: Dict[str, Any] = field(default_factory=dict)
    llm: Dict[str, Any] = field(default_factory=dict)
    overlap_same_id_collapse: bool = True
    config_hash: str = ""
    config_dir: Path = Path(".")
