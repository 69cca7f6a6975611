"""Prompt builders for detection, extraction, schema suggestion and clustering."""

from __future__ import annotations

import enum
import json
from functools import lru_cache
from typing import Any, Sequence

from ..ingest import PageRecord
from ..schema import SchemaRegistry, SchemaSuggestion, UnmatchedHolding, portfolio_json_schema


class PromptStrategy(str, enum.Enum):
    RAW_TEXT = "raw_text"
    STRUCTURED_COT = "structured_cot"
    FULL_SCHEMA = "full_schema"
    DIRECT_SCHEMA = "direct_schema"

    @property
    def has_reasoning(self) -> bool:
        return self in (PromptStrategy.STRUCTURED_COT, PromptStrategy.FULL_SCHEMA)


RAW_TEXT_PREFIX = "Is there a table present in the following text? Reply with 'yes' or 'no'."
COT_PREFIX = (
    "Analyze the following text and determine if it contains a portfolio table. "
    "Provide your chain of thought and final decision in a structured output "
    "response model that includes 'chain_of_thought' and 'has_portfolio_table' fields."
)
FULL_SCHEMA_PREFIX = (
    "Using the provided Portfolio JSON schema, analyze the following text and "
    "if it can be extracted into that schema. Provide your chain of thought. "
    "You will output a response model object including 'chain_of_thought', "
    "'has_portfolio_table', and 'extracted portfolio'."
)
EXTRACT_PREFIX = (
    "Extract a portfolio table from the following text following the Portfolio schema. "
    "Return a response object with a 'portfolio' field."
)
RECOMMENDER_PREFIX = "You are a schema refinement assistant for financial tables."
CLUSTER_PREFIX = "Group the following schema suggestion names into clusters of semantically equivalent instrument classes."

RETRY_MARKER = "\n\nYour previous output failed validation: "
TEXT_MARKER = "\n\nText:\n"
SCHEMA_MARKER = "Schema:\n"
BATCH_MARKER = "Batch of unmatched holdings:\n"
PREVIOUS_MARKER = "Previously seen suggestions (optional, from prior batches):\n"
NAMES_MARKER = "Names:\n"


@lru_cache(maxsize=64)
def schema_text(registry: SchemaRegistry) -> str:
    """The registry rendered as an indented Portfolio JSON Schema (cached per registry)."""
    return json.dumps(portfolio_json_schema(registry), indent=2)


def build_extraction_prompt(text: str, registry: SchemaRegistry) -> str:
    return f"{EXTRACT_PREFIX}\n\n{SCHEMA_MARKER}{schema_text(registry)}{TEXT_MARKER}{text}"


def build_detection_prompt(strategy: PromptStrategy | str, page: PageRecord, registry: SchemaRegistry) -> str:
    strategy = PromptStrategy(strategy)
    if strategy is PromptStrategy.RAW_TEXT:
        return f"{RAW_TEXT_PREFIX}{TEXT_MARKER}{page.text}"
    if strategy is PromptStrategy.STRUCTURED_COT:
        return f"{COT_PREFIX}{TEXT_MARKER}{page.text}"
    if strategy is PromptStrategy.FULL_SCHEMA:
        return f"{FULL_SCHEMA_PREFIX}\n\n{SCHEMA_MARKER}{schema_text(registry)}{TEXT_MARKER}{page.text}"
    return build_extraction_prompt(page.text, registry)


def holding_payload(holding: UnmatchedHolding) -> dict[str, Any]:
    return {"description": holding.description, "name": holding.name, "market_value": holding.market_value}


def build_recommender_prompt(
    registry: SchemaRegistry,
    batch: Sequence[UnmatchedHolding],
    previous: Sequence[SchemaSuggestion] | None = None,
) -> str:
    schema = json.dumps(portfolio_json_schema(registry))
    holdings = json.dumps([holding_payload(h) for h in batch], ensure_ascii=False)
    seen = json.dumps([s.to_dict() for s in previous], ensure_ascii=False) if previous else "None"
    return f"""
{RECOMMENDER_PREFIX} Your task is:
- Review a batch of {len(batch)} unmatched financial holdings.
- Given the current schema (JSON below), propose new classes or modifications so each holding can be classified.
- If a holding matches a previously suggested class, propose new optional fields if needed.
- Return your schema suggestions as a list of Pydantic SchemaSuggestion model objects.

Current Portfolio Schema:
{schema}

{BATCH_MARKER}{holdings}

{PREVIOUS_MARKER}{seen}

For each unique holding, propose:
- A new schema class, or a modification to an existing class (add or refine fields).
- Specify all required and optional fields with Python type hints.
- If similar to an earlier suggestion, mark only new fields as optional.
- Provide a sample match (the original holding string).
- Output format: a JSON object {{"suggestions": [...]}} whose items are SchemaSuggestion objects with string fields "name", "suggested_schema" and "example".
"""


def build_cluster_prompt(names: Sequence[str]) -> str:
    return (
        f"{CLUSTER_PREFIX} Return a JSON object {{\"clusters\": [[index, ...], ...]}} "
        "in which every index appears exactly once.\n\n"
        f"{NAMES_MARKER}{json.dumps(list(names), ensure_ascii=False)}"
    )


def retry_prompt(prompt: str, errors: Sequence[str]) -> str:
    return f"{prompt}{RETRY_MARKER}{'; '.join(errors)}. Return corrected JSON only."


def strip_retry(prompt: str) -> str:
    cut = prompt.find(RETRY_MARKER)
    return prompt if cut < 0 else prompt[:cut]
