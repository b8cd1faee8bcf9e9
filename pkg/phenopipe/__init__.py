"""
phenopipe: phenotype extraction and HPO normalization

Extract key phenotypic findings from dysmorphology consultation text and
normalize them to Human Phenotype Ontology ids.

Basic usage:
    from phenopipe import PhenoPipeConfig, Pipeline

    config = PhenoPipeConfig("phenopipe.yaml")
    pipeline = Pipeline(config.pipeline_config())
    report = pipeline.end2end()
    print(report.to_table())

Command line:
    phenopipe end2end --synthetic --artifacts /tmp/run
"""

__version__ = "0.1.0"
__description__ = "Phenotype NER and HPO normalization pipeline"

from .config import PhenoPipeConfig, PipelineConfig
from .documents import AnnotationSet, Category, Consultation, Mention
from .evaluator import EvalReport, evaluate, score_run
from .exceptions import (
    BackendError,
    ConfigurationError,
    DataError,
    FormatError,
    MissingArtifactError,
    PhenoPipeError,
)
from .ontology import FlatDictionary, build_dictionary
from .pipeline import EdgeCaseLabel, Pipeline, label_edge_case, stratified_split

__all__ = [
    "AnnotationSet",
    "BackendError",
    "Category",
    "ConfigurationError",
    "Consultation",
    "DataError",
    "EdgeCaseLabel",
    "EvalReport",
    "FlatDictionary",
    "FormatError",
    "Mention",
    "MissingArtifactError",
    "PhenoPipeConfig",
    "PhenoPipeError",
    "Pipeline",
    "PipelineConfig",
    "build_dictionary",
    "evaluate",
    "label_edge_case",
    "score_run",
    "stratified_split",
]
