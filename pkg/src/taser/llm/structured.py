"""Structured completion: parse JSON, validate against a response schema, re-prompt on failure."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Any, Callable

import jsonschema

from .backends import Backend, BackendUnavailable, TransportError
from .prompts import retry_prompt

logger = logging.getLogger(__name__)

DEFAULT_MAX_RETRIES = 3

_FENCE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.DOTALL)


@dataclass(frozen=True)
class StructuredRequest:
    prompt: str
    response_schema: str
    max_retries: int = DEFAULT_MAX_RETRIES

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        json.loads(self.response_schema)


@dataclass
class BackendResponse:
    raw: str
    parsed: Any = None
    attempts: int = 1
    errors_seen: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.parsed is not None


def parse_json(text: str) -> Any:
    """Parse a completion as JSON, tolerating a surrounding Markdown code fence."""
    stripped = text.strip()
    m = _FENCE.match(stripped)
    if m:
        stripped = m.group(1)
    return json.loads(stripped)


def _schema_errors(validator: jsonschema.protocols.Validator, value: Any) -> list[str]:
    errors = sorted(validator.iter_errors(value), key=lambda e: list(e.absolute_path))
    out = []
    for err in errors:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(f"{where}: {err.message}")
    return out


def complete_structured(
    backend: Backend,
    request: StructuredRequest,
    coerce: Callable[[str], Any] | None = None,
) -> BackendResponse:
    """Ask ``backend`` for JSON conforming to ``request.response_schema``.

    Each validation failure appends the error list to the prompt and retries,
    up to ``max_retries`` times. Transport failures are retried on their own
    budget and raise :class:`BackendUnavailable` once it is spent. ``coerce``
    may turn non-JSON text (such as a bare "yes") into a candidate value.
    """
    schema = json.loads(request.response_schema)
    validator_cls = jsonschema.validators.validator_for(schema)
    validator = validator_cls(schema)
    errors_seen: list[str] = []
    prompt = request.prompt
    raw = ""
    attempts = 0
    transport_failures = 0
    while attempts <= request.max_retries:
        try:
            raw = backend.complete(prompt)
        except TransportError as exc:
            transport_failures += 1
            logger.debug("transport failure %d: %s", transport_failures, exc)
            if transport_failures > request.max_retries:
                raise BackendUnavailable(str(exc)) from exc
            continue
        attempts += 1
        try:
            value = coerce(raw) if coerce is not None else parse_json(raw)
        except (ValueError, TypeError) as exc:
            problems = [f"invalid JSON: {exc}"]
        else:
            problems = _schema_errors(validator, value)
            if not problems:
                return BackendResponse(raw=raw, parsed=value, attempts=attempts, errors_seen=errors_seen)
        errors_seen.append("; ".join(problems))
        prompt = retry_prompt(request.prompt, problems)
    return BackendResponse(raw=raw, parsed=None, attempts=attempts, errors_seen=errors_seen)


# --------------------------------------------------------------------------
# response schemas

DETECTION_YES_NO = {
    "type": "object",
    "required": ["has_portfolio_table"],
    "properties": {"has_portfolio_table": {"type": "boolean"}},
}

DETECTION_COT = {
    "type": "object",
    "required": ["has_portfolio_table"],
    "properties": {
        "chain_of_thought": {"type": "string"},
        "table_chain_of_thought": {"type": "string"},
        "has_portfolio_table": {"type": "boolean"},
    },
}

# Field typing inside the portfolio is checked per holding by validate_holding,
# so the envelope only pins the container shapes.
PORTFOLIO_ENVELOPE = {
    "type": "object",
    "properties": {
        "fund_name": {"type": ["string", "null"]},
        "value_in_thousands": {"type": ["boolean", "null"]},
    },
    "additionalProperties": {
        "anyOf": [
            {"type": "array", "items": {"type": "object"}},
            {"type": "null"},
            {"type": "string"},
            {"type": "boolean"},
        ]
    },
}

EXTRACTION = {"type": "object", "required": ["portfolio"], "properties": {"portfolio": PORTFOLIO_ENVELOPE}}

FULL_SCHEMA = {
    "type": "object",
    "required": ["has_portfolio_table"],
    "properties": {
        "chain_of_thought": {"type": "string"},
        "has_portfolio_table": {"type": "boolean"},
        "portfolio": {"anyOf": [PORTFOLIO_ENVELOPE, {"type": "null"}]},
    },
}

SUGGESTIONS = {
    "type": "object",
    "required": ["suggestions"],
    "properties": {
        "suggestions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "suggested_schema", "example"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "suggested_schema": {"type": "string", "minLength": 2},
                    "example": {"type": "string", "minLength": 1},
                },
            },
        }
    },
}

CLUSTERS = {
    "type": "object",
    "required": ["clusters"],
    "properties": {
        "clusters": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}}
    },
}

_YES = re.compile(r"^\W*(yes|no)\b", re.IGNORECASE)


def coerce_yes_no(text: str) -> Any:
    """Accept a bare yes/no reply or a JSON object for yes/no detection."""
    m = _YES.match(text.strip())
    if m:
        return {"has_portfolio_table": m.group(1).lower() == "yes"}
    value = parse_json(text)
    if isinstance(value, dict):
        for key in ("has_portfolio_table", "answer", "response"):
            if key in value:
                v = value[key]
                if isinstance(v, str) and _YES.match(v):
                    v = _YES.match(v).group(1).lower() == "yes"
                return {"has_portfolio_table": v}
    return value


def dumps(schema: dict[str, Any]) -> str:
    return json.dumps(schema, sort_keys=True)
