"""Extraction backends: a common contract over the grid model and remote clients."""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Protocol, Sequence, Tuple

from ..documents import AnnotationSet
from ..exceptions import BackendError
from ..preprocess import AbbreviationLexicon, tokenize
from .model import GridModel, predict

logger = logging.getLogger(__name__)


class ExtractionBackend(Protocol):
    """Given raw consultation text, return categorized mentions in raw offsets."""

    name: str

    def extract(self, consultation_id: str, text: str) -> AnnotationSet: ...


class GridExtractionBackend:
    name = "grid"

    def __init__(
        self,
        model: GridModel,
        lexicon: Optional[AbbreviationLexicon] = None,
        expand_statistics: bool = False,
    ):
        self.model = model
        self.lexicon = lexicon
        self.expand_statistics = expand_statistics

    def extract(self, consultation_id: str, text: str) -> AnnotationSet:
        consultation = tokenize(text, consultation_id, self.lexicon, self.expand_statistics)
        return predict(self.model, consultation)


class FallbackBackend:
    """Use `primary`; on any backend failure answer from `fallback` instead."""

    def __init__(self, primary: ExtractionBackend, fallback: ExtractionBackend):
        self.primary = primary
        self.fallback = fallback
        self.name = primary.name
        self.fallbacks: List[str] = []
        self._lock = threading.Lock()

    def extract(self, consultation_id: str, text: str) -> AnnotationSet:
        try:
            return self.primary.extract(consultation_id, text)
        except BackendError as e:
            logger.warning(
                "%s backend failed for %s (%s); using %s",
                self.primary.name,
                consultation_id,
                e.error_type,
                self.fallback.name,
            )
            with self._lock:
                self.fallbacks.append(consultation_id)
            return self.fallback.extract(consultation_id, text)


def extract_many(
    backend: ExtractionBackend,
    records: Sequence[Tuple[str, str]],
    max_workers: int = 1,
) -> List[AnnotationSet]:
    """Extract (consultation_id, text) records, preserving input order."""
    if max_workers <= 1 or len(records) <= 1:
        return [backend.extract(cid, text) for cid, text in records]
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        return list(executor.map(lambda record: backend.extract(*record), records))
