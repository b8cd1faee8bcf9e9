"""Named entity recognition: word-pair grid model and two-step remote extraction."""

from .backends import ExtractionBackend, FallbackBackend, GridExtractionBackend, extract_many
from .grid import GridLabel, WordPairGrid, decode_grid, encode_entities
from .llm_backend import LLMExtractionBackend, create_client, llm_backend_extract
from .model import (
    GridModel,
    GridModelConfig,
    load_grid_model,
    predict,
    save_grid_model,
    train_grid_model,
)

__all__ = [
    "ExtractionBackend",
    "FallbackBackend",
    "GridExtractionBackend",
    "GridLabel",
    "GridModel",
    "GridModelConfig",
    "LLMExtractionBackend",
    "WordPairGrid",
    "create_client",
    "decode_grid",
    "encode_entities",
    "extract_many",
    "llm_backend_extract",
    "load_grid_model",
    "predict",
    "save_grid_model",
    "train_grid_model",
]
