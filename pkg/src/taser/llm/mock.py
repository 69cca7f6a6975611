"""Deterministic rule-based backend that answers every prompt type offline."""

from __future__ import annotations

import json
import zlib
from collections import Counter
from functools import lru_cache
from typing import Any, Iterable, Sequence

from .. import rows
from ..schema import (
    OTHER,
    FieldSpec,
    Portfolio,
    SchemaRegistry,
    field_to_json_schema,
    portfolio_from_payload,
    registry_from_portfolio_schema,
    unmatched_from_raw,
)
from .prompts import (
    BATCH_MARKER,
    CLUSTER_PREFIX,
    COT_PREFIX,
    EXTRACT_PREFIX,
    FULL_SCHEMA_PREFIX,
    NAMES_MARKER,
    PREVIOUS_MARKER,
    RAW_TEXT_PREFIX,
    RECOMMENDER_PREFIX,
    SCHEMA_MARKER,
    TEXT_MARKER,
    strip_retry,
)

# --------------------------------------------------------------------------
# extraction


@lru_cache(maxsize=32)
def _registry_from_schema_text(text: str) -> SchemaRegistry:
    return registry_from_portfolio_schema(json.loads(text))


def classify_row(row: rows.Row, registry: SchemaRegistry) -> tuple[str | None, dict[str, str], str]:
    """Return (class name or None for Other, raw values, label)."""
    match = None
    for recognize in rows.RECOGNIZERS:
        match = recognize(row)
        if match:
            break
    if match is None:
        suggested = [c.name for c in registry.instrument_classes() if c.origin != "initial"]
        named = rows.match_named_class(row, suggested)
        if named:
            match = rows.Match(named, rows._base(row))
    if match is None:
        match = rows.recognize_equity(row)
    if match is not None:
        cls = registry.lookup(match.label)
        if cls is not None and cls.name != OTHER:
            return cls.name, match.values, match.label
        return None, match.values, match.label
    return None, rows._base(row), OTHER


def extraction_payload(text: str, registry: SchemaRegistry) -> dict[str, Any]:
    """The Portfolio JSON the mock 'model' returns for ``text``."""
    lines = text.split("\n")
    payload: dict[str, Any] = {
        "fund_name": rows.fund_name(lines),
        "value_in_thousands": rows.in_thousands(lines),
    }
    # only collections with rows are emitted; absent ones read as empty
    for row in rows.parse_rows(lines):
        class_name, values, label = classify_row(row, registry)
        if class_name is not None:
            payload.setdefault(registry[class_name].collection, []).append(values)
        else:
            payload.setdefault("other_instruments", []).append(
                {"description": row.description, "name": label, "market_value": row.market_value}
            )
    return payload


def mock_extract(page_text: str, registry: SchemaRegistry) -> Portfolio:
    """Extract and validate ``page_text`` with the mock rules; failures are demoted to Other."""
    portfolio, failures = portfolio_from_payload(extraction_payload(page_text, registry), registry)
    demoted = tuple(unmatched_from_raw(item, name=cls.name) for item, cls, _ in failures)
    return Portfolio(
        fund_name=portfolio.fund_name,
        value_in_thousands=portfolio.value_in_thousands,
        holdings=portfolio.holdings,
        other_instruments=portfolio.other_instruments + demoted,
    )


def looks_like_table(lines: Sequence[str]) -> bool:
    piped = sum("|" in line for line in lines)
    return piped >= 2 or bool(rows.parse_rows(lines))


# --------------------------------------------------------------------------
# schema suggestion

CURRENCY_FORWARD_SCHEMA: dict[str, Any] = {
    "title": "Currency Forward",
    "type": "object",
    "properties": {
        "description": {
            "type": "string",
            "title": "Description",
            "description": "Description or name of the currency forward",
        },
        "market_value": {
            "anyOf": [{"type": "number"}, {"type": "null"}],
            "title": "Market Value",
            "description": "Market value of the currency forward",
            "default": None,
        },
        "instrument_type": {
            "type": "string",
            "title": "Instrument Type",
            "const": "Currency Forward",
            "default": "Currency Forward",
        },
        "currency_pair": {
            "anyOf": [{"type": "string"}, {"type": "null"}],
            "title": "Currency Pair",
            "description": "Currency pair involved in the forward contract",
            "default": None,
        },
        "forward_rate": {
            "anyOf": [{"type": "number"}, {"type": "null"}],
            "title": "Forward Rate",
            "description": "Agreed forward rate",
            "default": None,
        },
        "settlement_date": {
            "anyOf": [{"type": "string", "format": "date-time"}, {"type": "null"}],
            "title": "Settlement Date",
            "description": "Settlement date for the currency forward",
            "default": None,
        },
    },
}

# Instrument families the mock recommender knows by name, with their fields.
# No name is a token subset of another, and none uses a word from VARIANT_SUFFIXES.
VOCABULARY: dict[str, tuple[tuple[str, str], ...]] = {
    "Warrant": (("underlying", "text"), ("strike_price", "decimal"), ("expiry_date", "date")),
    "Rights Issue": (("underlying", "text"), ("subscription_price", "decimal")),
    "Depositary Receipt": (("underlying", "text"), ("ratio", "decimal")),
    "Preferred Share": (("dividend_rate", "decimal"), ("call_date", "date")),
    "Exchange Traded Fund": (("ticker_symbol", "text"), ("expense_ratio", "decimal")),
    "Real Estate Trust": (("property_type", "text"),),
    "Repurchase Agreement": (("counterparty", "text"), ("repo_rate", "decimal"), ("maturity_date", "date")),
    "Commercial Paper": (("issuer", "text"), ("discount_rate", "decimal"), ("maturity_date", "date")),
    "Negotiable Certificate": (("bank", "text"), ("rate", "decimal"), ("maturity_date", "date")),
    "Treasury Bill": (("discount_rate", "decimal"), ("maturity_date", "date")),
    "Municipal Note": (("municipality", "text"), ("coupon", "decimal")),
    "Mortgage Pass Through": (("pool_number", "text"), ("coupon", "decimal"), ("factor", "decimal")),
    "Collateralized Loan Obligation": (("tranche", "text"), ("spread", "decimal")),
    "Bank Loan": (("borrower", "text"), ("spread", "decimal"), ("maturity_date", "date")),
    "Revolving Credit Facility": (("borrower", "text"), ("commitment", "decimal")),
    "Private Placement": (("issuer", "text"), ("lockup_date", "date")),
    "Limited Partnership Interest": (("general_partner", "text"), ("commitment", "decimal")),
    "Contingent Value Right": (("acquirer", "text"), ("trigger", "text")),
    "Stapled Unit": (("components", "text"),),
    "Money Market Fund": (("share_class", "text"), ("yield_rate", "decimal")),
    "Structured Note": (("issuer", "text"), ("underlying", "text"), ("maturity_date", "date")),
    "Credit Linked Note": (("reference_entity", "text"), ("maturity_date", "date")),
    "Catastrophe Bond": (("peril", "text"), ("maturity_date", "date")),
    "Inflation Linked Bond": (("index_ratio", "decimal"), ("maturity_date", "date")),
    "Floating Rate Note": (("reference_rate", "text"), ("spread", "decimal")),
    "Zero Coupon Bond": (("issuer", "text"), ("maturity_date", "date")),
    "Perpetual Bond": (("issuer", "text"), ("call_date", "date")),
    "Covered Bond": (("issuer", "text"), ("cover_pool", "text")),
    "Sukuk": (("issuer", "text"), ("profit_rate", "decimal")),
    "Promissory Note": (("maker", "text"), ("maturity_date", "date")),
    "Bankers Acceptance": (("bank", "text"), ("maturity_date", "date")),
    "Commodity Note": (("commodity", "text"), ("maturity_date", "date")),
    "Participation Note": (("underlying", "text"), ("issuer", "text")),
    "Trust Unit": (("trust_name", "text"),),
    "Royalty Stream": (("payer", "text"), ("royalty_rate", "decimal")),
    "Subscription Receipt": (("issuer", "text"), ("conversion_ratio", "decimal")),
    "Tracking Stock": (("tracked_business", "text"),),
    "Restricted Stock Unit": (("vesting_date", "date"),),
    "Gold Bullion": (("fine_ounces", "decimal"), ("vault", "text")),
    "Silver Bullion": (("fine_ounces", "decimal"), ("vault", "text")),
    "Carbon Allowance": (("vintage", "integer"), ("registry_name", "text")),
    "Escrow Receipt": (("escrow_agent", "text"),),
    "Loan Participation": (("lead_lender", "text"), ("share_pct", "decimal")),
    "Delayed Draw Loan": (("borrower", "text"), ("unfunded_amount", "decimal")),
    "Auction Rate Security": (("reset_period", "text"), ("rate", "decimal")),
    "Variable Rate Demand Note": (("remarketing_agent", "text"), ("put_date", "date")),
    "Convertible Debenture": (("conversion_price", "decimal"), ("maturity_date", "date")),
    "Infrastructure Debt": (("project", "text"), ("maturity_date", "date")),
    "Trade Finance": (("obligor", "text"), ("tenor_days", "integer")),
    "Cash": (("account", "text"),),
    "Deposit": (("bank", "text"), ("currency", "text")),
    "Receivable": (("source", "text"),),
    "Liability": (("source", "text"),),
}

VARIANT_SUFFIXES = ("Position", "Instrument", "Holding", "Contract", "Exposure", "Investment", "Line", "Item")


def _suggestion_schema(name: str, extra: Iterable[tuple[str, str]]) -> dict[str, Any]:
    if name == "Currency Forward":
        return CURRENCY_FORWARD_SCHEMA
    props: dict[str, Any] = {
        "description": {"type": "string", "title": "Description", "description": f"Description of the {name.lower()}"},
        "market_value": field_to_json_schema(
            FieldSpec("market_value", "decimal", True, f"Market value of the {name.lower()}")
        ),
        "instrument_type": field_to_json_schema(FieldSpec("instrument_type", "literal", True, "", const=name)),
    }
    for field_name, kind in extra:
        label = field_name.replace("_", " ")
        props[field_name] = field_to_json_schema(FieldSpec(field_name, kind, True, f"{label.capitalize()} of the {name.lower()}"))
    return {"title": name, "type": "object", "properties": props}


def canonical_schema(name: str) -> str:
    return json.dumps(_suggestion_schema(name, VOCABULARY.get(name, ())))


def variant_name(family: str, example: str) -> str:
    return f"{family} {VARIANT_SUFFIXES[zlib.crc32(example.encode('utf-8')) % len(VARIANT_SUFFIXES)]}"


_VOCAB_TOKENS = {name: frozenset(rows.content_tokens(name)) for name in VOCABULARY}


def family_of(description: str) -> str | None:
    """The instrument family the mock recommender assigns to a holding description."""
    if rows._FX.match(description):
        return "Currency Forward"
    have = set(rows.content_tokens(description))
    best = None
    for name, need in _VOCAB_TOKENS.items():
        if need <= have and (best is None or len(need) > len(_VOCAB_TOKENS[best])):
            best = name
    if best is not None:
        return best
    words = [w for w in rows.content_tokens(description) if w.isalpha()][:2]
    return " ".join(w.capitalize() for w in words) or None


def support_threshold(batch_size: int) -> int:
    """Rows of one family needed in a batch before it earns a full suggestion."""
    return 2 if batch_size < 100 else 3


def suggestion_cap(batch_size: int) -> int:
    """Most suggestions the mock emits for one batch."""
    return max(1, round(3 * batch_size ** 0.5))


def recommend(
    batch: Sequence[dict[str, Any]], previous: Sequence[dict[str, Any]], existing: Iterable[str]
) -> list[dict[str, str]]:
    """Mock Recommender: full suggestions for frequent families, variants for rare ones.

    Frequent families get their canonical name and full field set. In small
    batches, a family seen once gets a loosely named variant with minimal
    fields, which no extraction rule ever matches. A family whose full name
    is among the previous suggestions keeps that name. Families already in
    the schema are skipped.
    """
    known = set(existing)
    remembered = {str(p.get("name", "")) for p in previous}
    counts: Counter[str] = Counter()
    examples: dict[str, str] = {}
    for item in batch:
        description = str(item.get("description", "")).strip()
        family = family_of(description) if description else None
        if family is None:
            continue
        counts[family] += 1
        examples.setdefault(family, description)
    size = len(batch)
    need = support_threshold(size)
    order = sorted(counts, key=lambda f: (-counts[f], list(examples).index(f)))
    out: list[dict[str, str]] = []
    for family in order[: suggestion_cap(size)]:
        example = examples[family]
        if counts[family] >= need or family in remembered:
            name, schema = family, canonical_schema(family)
        elif size <= 100:
            name = variant_name(family, example)
            schema = json.dumps(_suggestion_schema(name, ()))
        else:
            continue
        if name in known:
            continue
        out.append({"name": name, "suggested_schema": schema, "example": example})
    return out


def cluster_names(names: Sequence[str]) -> list[list[int]]:
    """Greedy grouping: token-subset relation or Jaccard >= 0.6 with a cluster's first member."""
    clusters: list[tuple[frozenset[str], list[int]]] = []
    for i, name in enumerate(names):
        toks = frozenset(rows.content_tokens(name))
        for rep, members in clusters:
            if toks and rep and (toks <= rep or rep <= toks or len(toks & rep) / len(toks | rep) >= 0.6):
                members.append(i)
                break
        else:
            clusters.append((toks, [i]))
    return [members for _, members in clusters]


# --------------------------------------------------------------------------
# the backend


def _after(prompt: str, marker: str) -> str:
    at = prompt.rfind(marker)
    return "" if at < 0 else prompt[at + len(marker):]


def _line_after(prompt: str, marker: str) -> str:
    return _after(prompt, marker).split("\n", 1)[0]


class MockBackend:
    """Stateless, thread-safe stand-in for the model; routes on the prompt's opening words."""

    name = "mock"

    def complete(self, prompt: str) -> str:
        prompt = strip_retry(prompt)
        body = prompt.lstrip("\n")
        if body.startswith(RECOMMENDER_PREFIX):
            return self._recommend(body)
        if body.startswith(CLUSTER_PREFIX):
            names = json.loads(_line_after(body, NAMES_MARKER))
            return json.dumps({"clusters": cluster_names(names)})
        text = _after(body, TEXT_MARKER)
        lines = text.split("\n") if text else []
        if body.startswith(RAW_TEXT_PREFIX):
            return "yes" if looks_like_table(lines) else "no"
        if body.startswith(COT_PREFIX):
            found = looks_like_table(lines)
            reason = "The text has delimited rows with numeric cells." if found else "The text has no table-like rows."
            return json.dumps({"chain_of_thought": reason, "has_portfolio_table": found})
        if body.startswith(FULL_SCHEMA_PREFIX):
            payload = extraction_payload(text, self._registry(body))
            found = bool(rows.parse_rows(lines))
            reason = (
                "Rows map onto Portfolio instrument classes." if found else "No rows map onto the Portfolio schema."
            )
            return json.dumps({"chain_of_thought": reason, "has_portfolio_table": found,
                               "portfolio": payload if found else None})
        if body.startswith(EXTRACT_PREFIX):
            return json.dumps({"portfolio": extraction_payload(text, self._registry(body))})
        return "I cannot help with that request."

    @staticmethod
    def _registry(body: str) -> SchemaRegistry:
        start = body.find(SCHEMA_MARKER)
        end = body.rfind(TEXT_MARKER)
        return _registry_from_schema_text(body[start + len(SCHEMA_MARKER):end])

    @staticmethod
    def _recommend(body: str) -> str:
        batch = json.loads(_line_after(body, BATCH_MARKER))
        prev_line = _line_after(body, PREVIOUS_MARKER)
        previous = [] if prev_line == "None" else json.loads(prev_line)
        schema_line = _line_after(body, "Current Portfolio Schema:\n")
        existing = json.loads(schema_line).get("$defs", {}).keys() if schema_line else ()
        return json.dumps({"suggestions": recommend(batch, previous, existing)})


__all__ = [
    "CURRENCY_FORWARD_SCHEMA",
    "MockBackend",
    "VOCABULARY",
    "canonical_schema",
    "cluster_names",
    "extraction_payload",
    "family_of",
    "mock_extract",
    "recommend",
]
