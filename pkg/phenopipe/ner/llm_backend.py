"""Two-step remote extraction: list all findings, then classify them.

Clients speak a small JSON contract. A request is
``{"text": ..., "step": 1|2, "items": [...]?}`` and a response is
``{"items": [{"text": ..., "category": ...?}]}``. Returned strings are
located in the consultation text by leftmost unused match and become
token-aligned mentions.
"""

import json
import logging
import os
import threading
import time
from pathlib import Path
from string import Template
from typing import Any, Dict, List, Optional, Protocol, Sequence, Set, Tuple, Union

import httpx

from ..backend_registry import BACKEND_SPECS, get_backend_spec
from ..documents import AnnotationSet, Category, Consultation, Fragment, Mention
from ..exceptions import (
    AuthenticationError,
    BackendError,
    ConfigurationError,
    FormatError,
    ProtocolError,
    RateLimitError,
    TimeoutError,
)
from ..logging_handler import AuditLogger
from ..preprocess import AbbreviationLexicon, TOKEN_PATTERN, project_many, tokenize
from ..security import remove_sensitive_data

logger = logging.getLogger(__name__)

PROMPT_DIR = Path(__file__).resolve().parent.parent / "data" / "prompts"
EXTRACT_STEP = 1
CLASSIFY_STEP = 2


def load_prompt(name: str, version: str = "v1") -> Template:
    path = PROMPT_DIR / f"{name}_{version}.txt"
    if not path.exists():
        raise ConfigurationError(f"Prompt template not found: {path}")
    return Template(path.read_text(encoding="utf-8"))


def classify_and_raise_error(backend: str, error: Exception, api_key: Optional[str] = None):
    """
    Classify a transport or SDK error and raise the matching BackendError.

    Args:
        backend: Client name (e.g. "http", "openai")
        error: The original exception
        api_key: Key to remove from error messages
    """
    if isinstance(error, BackendError):
        raise error

    error_text = str(error).lower()
    response = getattr(error, "response", None)
    status_code = getattr(response, "status_code", None) or getattr(error, "status_code", None)

    if isinstance(error, httpx.TimeoutException) or "timeout" in type(error).__name__.lower():
        raise TimeoutError(backend)

    if status_code in (401, 403) or any(
        marker in error_text for marker in ["unauthorized", "invalid api key", "forbidden"]
    ):
        raise AuthenticationError(backend)

    if status_code == 429 or "rate limit" in error_text or "too many requests" in error_text:
        raise RateLimitError(backend)

    safe = remove_sensitive_data(str(error), api_key)
    raise BackendError(
        backend,
        safe or type(error).__name__,
        error_type="http" if status_code else "network",
        status_code=status_code,
    )


def parse_items(backend: str, raw: Any) -> List[Dict[str, Any]]:
    """Validate a response body and return its item list."""
    if not isinstance(raw, dict) or not isinstance(raw.get("items"), list):
        raise ProtocolError(backend, "Response lacks an 'items' list", raw)
    items = []
    for item in raw["items"]:
        if not isinstance(item, dict) or not isinstance(item.get("text"), str):
            raise ProtocolError(backend, "Every item needs a string 'text'", raw)
        category = item.get("category")
        if category is not None and not isinstance(category, str):
            raise ProtocolError(backend, "Item 'category' must be a string", raw)
        items.append(item)
    return items


def extract_json_object(backend: str, content: str) -> Dict[str, Any]:
    start, end = content.find("{"), content.rfind("}")
    if start == -1 or end < start:
        raise ProtocolError(backend, "No JSON object in model output", content)
    try:
        return json.loads(content[start : end + 1])
    except json.JSONDecodeError:
        raise ProtocolError(backend, "Model output is not valid JSON", content)


class ExtractionClient(Protocol):
    name: str

    def request(
        self, step: int, text: str, items: Optional[Sequence[str]] = None
    ) -> List[Dict[str, Any]]: ...


class BaseExtractionClient:
    """Bounds in-flight requests and writes every exchange to the audit log."""

    name = "base"

    def __init__(self, max_in_flight: int = 4, audit: Optional[AuditLogger] = None):
        if max_in_flight < 1:
            raise ConfigurationError("ner.llm.max_in_flight must be at least 1")
        self.max_in_flight = max_in_flight
        self.audit = audit or AuditLogger(None)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def request(
        self, step: int, text: str, items: Optional[Sequence[str]] = None
    ) -> List[Dict[str, Any]]:
        if step not in (EXTRACT_STEP, CLASSIFY_STEP):
            raise ValueError(f"Unknown extraction step: {step}")
        payload: Dict[str, Any] = {"text": text, "step": step}
        if items is not None:
            payload["items"] = list(items)

        with self._slots:
            self.audit.log_request(self.name, step, payload)
            start_time = time.time()
            try:
                raw = self._send(payload)
            except BackendError as e:
                self.audit.log_response(
                    self.name,
                    step,
                    getattr(e, "raw_payload", None),
                    time.time() - start_time,
                    {"error": e.error_type},
                )
                raise
            self.audit.log_response(self.name, step, raw, time.time() - start_time)
        return parse_items(self.name, raw)

    def _send(self, payload: Dict[str, Any]) -> Any:
        raise NotImplementedError


class HttpExtractionClient(BaseExtractionClient):
    """JSON-over-HTTP client for a hosted extraction service."""

    name = "http"

    def __init__(
        self,
        endpoint: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        audit: Optional[AuditLogger] = None,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        super().__init__(max_in_flight, audit)
        self.endpoint = endpoint or os.getenv("PHENOPIPE_BACKEND_URL")
        if not self.endpoint:
            raise ConfigurationError(
                "No extraction endpoint. Set PHENOPIPE_BACKEND_URL or ner.llm.endpoint"
            )
        self.api_key = api_key or os.getenv("PHENOPIPE_BACKEND_KEY")
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _send(self, payload: Dict[str, Any]) -> Any:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self._client.post(self.endpoint, json=payload, headers=headers)
            response.raise_for_status()
        except Exception as e:
            classify_and_raise_error(self.name, e, self.api_key)
        try:
            return response.json()
        except ValueError:
            raise ProtocolError(self.name, "Response is not JSON", response.text)

    def close(self):
        self._client.close()


class OpenAIExtractionClient(BaseExtractionClient):
    """Chat-completions client for a fine-tuned extraction model."""

    name = "openai"

    def __init__(
        self,
        model: Optional[str] = None,
        api_key: Optional[str] = None,
        prompt_version: str = "v1",
        timeout: float = 60.0,
        max_in_flight: int = 4,
        audit: Optional[AuditLogger] = None,
        client: Any = None,
    ):
        super().__init__(max_in_flight, audit)
        self.model = model or get_backend_spec("openai").default_model
        self.api_key = api_key or os.getenv("OPENAI_API_KEY")
        self.prompts = {
            EXTRACT_STEP: load_prompt("extract", prompt_version),
            CLASSIFY_STEP: load_prompt("classify", prompt_version),
        }
        if client is not None:
            self.client = client
            return
        if not self.api_key:
            raise ConfigurationError("OPENAI_API_KEY is not set")
        try:
            import openai

            self.client = openai.OpenAI(api_key=self.api_key, timeout=timeout)
        except ImportError:
            raise ConfigurationError(
                "openai package not installed. Run: pip install 'phenopipe[openai]'"
            )

    def render(self, payload: Dict[str, Any]) -> str:
        items = "\n".join(f"- {item}" for item in payload.get("items", []))
        return self.prompts[payload["step"]].substitute(text=payload["text"], items=items)

    def _send(self, payload: Dict[str, Any]) -> Any:
        try:
            response = self.client.chat.completions.create(
                model=self.model,
                messages=[{"role": "user", "content": self.render(payload)}],
                temperature=0,
            )
        except Exception as e:
            classify_and_raise_error(self.name, e, self.api_key)
        content = response.choices[0].message.content or ""
        return extract_json_object(self.name, content)


class ReplayExtractionClient(BaseExtractionClient):
    """Serves recorded responses from a JSONL file of {step, text, response} lines."""

    name = "replay"

    def __init__(
        self,
        replay_file: Union[str, Path],
        max_in_flight: int = 4,
        audit: Optional[AuditLogger] = None,
    ):
        super().__init__(max_in_flight, audit)
        self.replay_file = str(replay_file)
        self.records: Dict[Tuple[int, str], Any] = {}
        if not Path(replay_file).exists():
            raise ConfigurationError(f"Replay file not found: {replay_file}")
        with open(replay_file, encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    key = (int(record["step"]), record["text"])
                    self.records[key] = record["response"]
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    raise FormatError(self.replay_file, number, "expected {step, text, response}")

    def _send(self, payload: Dict[str, Any]) -> Any:
        key = (payload["step"], payload["text"])
        if key not in self.records:
            raise BackendError(
                self.name,
                f"No recorded step-{payload['step']} response for this text",
                error_type="replay_miss",
            )
        return self.records[key]


def create_client(
    name: str,
    settings: Optional[Dict[str, Any]] = None,
    audit: Optional[AuditLogger] = None,
) -> BaseExtractionClient:
    """Build a client from the ner.llm config section."""
    if name not in BACKEND_SPECS:
        raise ConfigurationError(
            f"Unknown extraction client {name!r}; choose from {sorted(BACKEND_SPECS)}"
        )
    settings = settings or {}
    common = {"max_in_flight": int(settings.get("max_in_flight", 4)), "audit": audit}
    if name == "http":
        return HttpExtractionClient(
            endpoint=settings.get("endpoint"),
            timeout=float(settings.get("timeout", 60)),
            **common,
        )
    if name == "openai":
        return OpenAIExtractionClient(
            model=settings.get("model"),
            prompt_version=settings.get("prompt_version", "v1"),
            timeout=float(settings.get("timeout", 60)),
            **common,
        )
    replay_file = settings.get("replay_file")
    if not replay_file:
        raise ConfigurationError("ner.llm.replay_file is required for the replay client")
    return ReplayExtractionClient(replay_file, **common)


# ---------------------------------------------------------------------------
# Alignment of returned strings to token-aligned fragments


def _token_runs(tokens, indices: Sequence[int]) -> Tuple[Fragment, ...]:
    fragments: List[List[int]] = []
    previous = None
    for index in indices:
        if previous is not None and index == previous + 1:
            fragments[-1][1] = tokens[index].end
        else:
            fragments.append([tokens[index].start, tokens[index].end])
        previous = index
    return tuple((s, e) for s, e in fragments)


def locate(
    consultation: Consultation, surface: str, used: Set[Tuple[Fragment, ...]]
) -> Optional[Tuple[Fragment, ...]]:
    """Leftmost unused token-aligned occurrence of `surface`.

    An exact contiguous substring wins. Otherwise the surface words are
    matched, case-insensitively and in order, as a subsequence of one
    sentence's tokens; this recovers discontinuous findings such as
    "long toes" in "long fingers and toes".
    """
    text = consultation.text
    surface = surface.strip()
    if not surface:
        return None

    starts = {t.start for s in consultation.sentences for t in s.tokens}
    ends = {t.end for s in consultation.sentences for t in s.tokens}
    position = text.find(surface)
    while position != -1:
        fragments = ((position, position + len(surface)),)
        if position in starts and position + len(surface) in ends and fragments not in used:
            return fragments
        position = text.find(surface, position + 1)

    words = [w.lower() for w in TOKEN_PATTERN.findall(surface)]
    for sentence in consultation.sentences:
        tokens = sentence.tokens
        for first, token in enumerate(tokens):
            if token.surface.lower() != words[0]:
                continue
            indices = [first]
            for word in words[1:]:
                following = next(
                    (
                        i
                        for i in range(indices[-1] + 1, len(tokens))
                        if tokens[i].surface.lower() == word
                    ),
                    None,
                )
                if following is None:
                    break
                indices.append(following)
            if len(indices) == len(words):
                fragments = _token_runs(tokens, indices)
                if fragments not in used:
                    return fragments
    return None


def llm_backend_extract(client: ExtractionClient, consultation: Consultation) -> AnnotationSet:
    """Run extract-then-classify and convert the answers to raw-text mentions."""
    found = [item["text"] for item in client.request(EXTRACT_STEP, consultation.text)]
    if not found:
        return AnnotationSet(consultation.id, ())

    classified = client.request(CLASSIFY_STEP, consultation.text, found)
    if len(classified) != len(found):
        raise ProtocolError(
            client.name,
            f"Classification returned {len(classified)} items for {len(found)} findings",
            {"items": classified},
        )

    mentions: List[Mention] = []
    used: Set[Tuple[Fragment, ...]] = set()
    for surface, item in zip(found, classified):
        try:
            category = Category.parse(item.get("category") or "")
        except ValueError:
            raise ProtocolError(
                client.name, f"Unknown category for {surface!r}", {"items": classified}
            )
        fragments = locate(consultation, surface, used)
        if fragments is None:
            logger.warning(
                "Dropping unlocatable finding %r in consultation %s", surface, consultation.id
            )
            continue
        used.add(fragments)
        mentions.append(Mention(fragments, category))
    return AnnotationSet.build(consultation.id, project_many(mentions, consultation.trace))


class LLMExtractionBackend:
    """Extraction backend over a remote client, preprocessing by default."""

    name = "llm"

    def __init__(
        self,
        client: ExtractionClient,
        lexicon: Optional[AbbreviationLexicon] = None,
        expand_statistics: bool = True,
    ):
        self.client = client
        self.lexicon = lexicon
        self.expand_statistics = expand_statistics

    def extract(self, consultation_id: str, text: str) -> AnnotationSet:
        consultation = tokenize(text, consultation_id, self.lexicon, self.expand_statistics)
        return llm_backend_extract(self.client, consultation)
