"""Central metadata for remote extraction clients."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple


@dataclass(frozen=True)
class BackendSpec:
    """Metadata shared by the client factory, config validation and docs."""

    name: str
    client_class: str
    env_keys: Tuple[str, ...] = ()
    default_model: Optional[str] = None
    optional_extra: Optional[str] = None
    remote: bool = True


BACKEND_SPECS: Dict[str, BackendSpec] = {
    "http": BackendSpec(
        name="http",
        client_class="HttpExtractionClient",
        env_keys=("PHENOPIPE_BACKEND_URL", "PHENOPIPE_BACKEND_KEY"),
    ),
    "openai": BackendSpec(
        name="openai",
        client_class="OpenAIExtractionClient",
        env_keys=("OPENAI_API_KEY",),
        default_model="gpt-3.5-turbo",
        optional_extra="openai",
    ),
    "replay": BackendSpec(
        name="replay",
        client_class="ReplayExtractionClient",
        remote=False,
    ),
}

DEFAULT_CLIENT = "http"


def get_backend_spec(name: str) -> BackendSpec:
    """Return client metadata or raise KeyError for unknown clients."""
    return BACKEND_SPECS[name]


def get_backend_names() -> List[str]:
    return list(BACKEND_SPECS)
