"""Logging setup and the remote-backend audit log."""

import json
import logging
import os
import sys
import threading
from datetime import datetime
from typing import Any, Dict, Optional


def configure_logging(level: str = "info", log_file: Optional[str] = None) -> logging.Logger:
    """Configure the `phenopipe` logger with a stderr handler and optional file.

    Args:
        level: Logging level ("debug", "info", "warning", "error")
        log_file: Optional path for a persistent log file
    """
    logger = logging.getLogger("phenopipe")
    logger.setLevel(getattr(logging, level.upper()))

    # Remove existing handlers
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)

    formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(formatter)
    logger.addHandler(console)

    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        handler = logging.FileHandler(log_file, encoding="utf-8")
        handler.setFormatter(formatter)
        logger.addHandler(handler)

    logger.propagate = False
    return logger


class AuditLogger:
    """JSON-lines record of every remote extraction request and response."""

    def __init__(self, log_file: Optional[str] = None):
        """Initialize the audit log.

        Args:
            log_file: Path to the audit file; None disables auditing
        """
        self.log_file = log_file
        self._lock = threading.Lock()
        if log_file:
            directory = os.path.dirname(log_file)
            if directory:
                os.makedirs(directory, exist_ok=True)

    @property
    def enabled(self) -> bool:
        return bool(self.log_file)

    def _write(self, record: Dict[str, Any]) -> None:
        if not self.log_file:
            return
        line = json.dumps(record, ensure_ascii=False, sort_keys=True)
        with self._lock:
            with open(self.log_file, "a", encoding="utf-8") as f:
                f.write(line + "\n")

    def log_request(
        self,
        backend: str,
        step: int,
        payload: Dict[str, Any],
        metadata: Optional[Dict[str, Any]] = None,
    ):
        """Log an extraction request.

        Args:
            backend: Backend name
            step: 1 (extract all findings) or 2 (classify)
            payload: The request body as sent
            metadata: Optional additional metadata
        """
        record = {
            "type": "request",
            "timestamp": datetime.now().isoformat(),
            "backend": backend,
            "step": step,
            "payload": payload,
        }
        if metadata:
            record.update(metadata)
        self._write(record)

    def log_response(
        self,
        backend: str,
        step: int,
        payload: Any,
        latency: float,
        metadata: Optional[Dict[str, Any]] = None,
    ):
        """Log an extraction response (or the raw payload of a failed one)."""
        record = {
            "type": "response",
            "timestamp": datetime.now().isoformat(),
            "backend": backend,
            "step": step,
            "payload": payload,
            "latency_seconds": round(latency, 3),
        }
        if metadata:
            record.update(metadata)
        self._write(record)
