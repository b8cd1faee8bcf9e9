"""Exception classes for phenopipe."""

from typing import Any, Dict, Iterable, Optional


class PhenoPipeError(Exception):
    """Base exception for phenopipe."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dict for logging and JSON reports."""
        return {
            "error_type": self.__class__.__name__,
            "message": self.message,
            "details": self.details,
        }


class ConfigurationError(PhenoPipeError):
    """Exception raised for configuration errors."""

    pass


class OffsetError(PhenoPipeError):
    """A fragment lies outside its text or violates fragment ordering."""

    pass


class OntologyParseError(PhenoPipeError):
    """Malformed ontology source."""

    def __init__(self, message: str, line: Optional[int] = None, path: str = ""):
        self.line = line
        self.path = path
        where = f"{path}:{line}: " if line is not None else ""
        super().__init__(f"{where}{message}", {"line": line, "path": path})


class OntologyValidationError(PhenoPipeError):
    """Parsed ontology references ids that do not exist."""

    def __init__(self, message: str, ids: Iterable[str]):
        self.ids = sorted(set(ids))
        super().__init__(f"{message}: {', '.join(self.ids)}", {"ids": self.ids})


class AlignmentError(PhenoPipeError):
    """A fragment does not fall on token boundaries, or grid cells conflict."""

    def __init__(self, message: str, fragment: Optional[tuple] = None):
        self.fragment = fragment
        super().__init__(message, {"fragment": fragment})


class DataError(PhenoPipeError):
    """Training or inference data is unusable."""

    def __init__(self, message: str, ids: Optional[Iterable[str]] = None):
        self.ids = sorted(set(ids)) if ids else []
        if self.ids:
            message = f"{message}: {', '.join(self.ids)}"
        super().__init__(message, {"ids": self.ids})


class FormatError(PhenoPipeError):
    """Line-numbered file format violation."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}", {"path": path, "line": line})


class InputError(PhenoPipeError):
    """Inconsistent inputs, e.g. duplicate or mismatched consultation ids."""

    pass


class MissingArtifactError(PhenoPipeError):
    """An upstream artifact is missing; names the command that produces it."""

    def __init__(self, artifact: str, producer: str):
        self.artifact = artifact
        self.producer = producer
        super().__init__(
            f"Missing artifact {artifact}. Run 'phenopipe {producer}' first.",
            {"artifact": artifact, "producer": producer},
        )


class BackendError(PhenoPipeError):
    """Exception raised when a remote extraction backend fails."""

    def __init__(
        self,
        backend: str,
        message: str,
        error_type: str = "unknown",
        status_code: Optional[int] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        self.backend = backend
        self.error_type = error_type
        self.safe_message = message
        self.status_code = status_code
        super().__init__(
            f"Backend '{backend}' error: {message}",
            {"error_type": error_type, "status_code": status_code, **(details or {})},
        )

    def __str__(self):
        msg = f"{self.error_type.replace('_', ' ').title()} ({self.backend}): "
        msg += self.safe_message
        if self.error_type == "authentication":
            msg += " | set the backend key in the environment or a .env file"
        elif self.error_type == "rate_limit":
            msg += " | lower ner.llm.max_in_flight or retry later"
        return msg


class AuthenticationError(BackendError):
    """Exception raised for authentication failures."""

    def __init__(self, backend: str, message: Optional[str] = None):
        msg = message or "Authentication failed. Check the backend key"
        super().__init__(backend, msg, error_type="authentication")


class RateLimitError(BackendError):
    """Exception raised when rate limit is exceeded."""

    def __init__(self, backend: str, message: Optional[str] = None):
        super().__init__(
            backend, message or "Rate limit exceeded", error_type="rate_limit"
        )


class TimeoutError(BackendError):
    """Exception raised when a request times out."""

    def __init__(self, backend: str, message: Optional[str] = None):
        super().__init__(backend, message or "Request timed out", error_type="timeout")


class ProtocolError(BackendError):
    """Backend answered, but not with the required structured list."""

    def __init__(self, backend: str, message: str, raw_payload: Any = None):
        self.raw_payload = raw_payload
        super().__init__(
            backend,
            message,
            error_type="protocol",
            details={"raw_payload": raw_payload},
        )
