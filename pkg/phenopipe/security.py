"""Keep extraction-backend credentials out of errors, logs and the audit file.

Remote backend failures surface as `BackendError` messages printed by the CLI
and written to the audit log. httpx and openai errors can echo the request
URL or headers, so every message built from them passes through
`remove_sensitive_data` first.
"""

import re
from typing import Optional

REDACTED = "[HIDDEN]"

# (pattern, replacement); applied in order
_CREDENTIAL_PATTERNS = [
    # openai client keys
    (re.compile(r"sk-proj-[\w-]+", re.I), REDACTED),
    (re.compile(r"sk-\w{20,}", re.I), REDACTED),
    # Authorization header of the http client
    (re.compile(r"Bearer\s+[\w.-]+", re.I), f"Bearer {REDACTED}"),
    # PHENOPIPE_BACKEND_KEY=..., api_key: ..., "api-key": "..."
    (re.compile(r"(backend_key[\"':=\s]+)[\w.-]{8,}", re.I), rf"\1{REDACTED}"),
    (re.compile(r"(api[_-]?key[\"':=\s]+)[\w.-]{8,}", re.I), rf"\1{REDACTED}"),
    # endpoint URLs carrying the key as a query parameter
    (re.compile(r"([?&](?:key|token)=)[^&\s]+", re.I), rf"\1{REDACTED}"),
]


def remove_sensitive_data(text: str, key_to_hide: Optional[str] = None) -> str:
    """Redact backend credentials from an error message.

    `key_to_hide` is the configured backend key; it is replaced verbatim
    wherever it appears, provided it is long enough not to match ordinary words.
    """
    if not text:
        return text

    result = str(text)
    for pattern, replacement in _CREDENTIAL_PATTERNS:
        result = pattern.sub(replacement, result)

    if key_to_hide and len(key_to_hide) > 8:
        result = result.replace(key_to_hide, REDACTED)

    return result
