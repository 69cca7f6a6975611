"""Detector and Extractor agents and fund-level merging."""

from __future__ import annotations

import logging
import re
import string
from dataclasses import dataclass, replace
from typing import Any, Iterable, Mapping

from . import rows
from .ingest import PageRecord
from .llm.backends import Backend, BackendUnavailable
from .llm.prompts import PromptStrategy, build_detection_prompt, build_extraction_prompt, retry_prompt
from .llm.structured import (
    DETECTION_COT,
    DETECTION_YES_NO,
    EXTRACTION,
    FULL_SCHEMA,
    DEFAULT_MAX_RETRIES,
    StructuredRequest,
    coerce_yes_no,
    complete_structured,
    dumps,
)
from .schema import (
    Holding,
    Portfolio,
    SchemaRegistry,
    UnmatchedHolding,
    portfolio_from_payload,
    unmatched_from_raw,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionResult:
    page: tuple[str, int]
    strategy: PromptStrategy
    has_portfolio_table: bool
    chain_of_thought: str | None = None
    error: str | None = None
    # full_schema and direct_schema extract while detecting
    portfolio: Portfolio | None = None


@dataclass(frozen=True)
class FundPortfolio:
    doc_id: str
    fund_name: str
    pages: tuple[int, ...]
    portfolio: Portfolio
    declared_value: float

    @property
    def unmatched_value(self) -> float:
        return sum(o.market_value or 0.0 for o in self.portfolio.other_instruments)


def _unmatched_rows(page: PageRecord) -> tuple[UnmatchedHolding, ...]:
    out = []
    for row in rows.parse_rows(page.blocks):
        mv = unmatched_from_raw({"description": row.description, "market_value": row.market_value}).market_value
        out.append(UnmatchedHolding(row.description, market_value=mv, source=page.key))
    return tuple(out)


def _failed_portfolio(page: PageRecord, reason: str) -> Portfolio:
    return Portfolio(other_instruments=_unmatched_rows(page), errors=(reason,))


def _finish(
    payload: Mapping[str, Any],
    page: PageRecord,
    registry: SchemaRegistry,
    backend: Backend,
    prompt: str,
    schema: dict[str, Any],
    max_retries: int,
    key: str = "portfolio",
) -> Portfolio:
    """Validate a payload; re-prompt once with item errors, then demote what still fails."""
    portfolio, failures = portfolio_from_payload(payload, registry, page.key)
    if failures:
        problems = [f"{cls.name} item {item.get('description')!r}: {err}" for item, cls, err in failures]
        try:
            retry = complete_structured(
                backend, StructuredRequest(retry_prompt(prompt, problems), dumps(schema), max_retries)
            )
        except BackendUnavailable:
            retry = None
        again = retry.parsed.get(key) if retry is not None and retry.ok else None
        if isinstance(again, Mapping):
            portfolio, failures = portfolio_from_payload(again, registry, page.key)
    if not failures:
        return portfolio
    demoted = tuple(unmatched_from_raw(item, name=cls.name, source=page.key) for item, cls, _ in failures)
    return replace(portfolio, other_instruments=portfolio.other_instruments + demoted)


def extract(
    page: PageRecord,
    registry: SchemaRegistry,
    backend: Backend,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> Portfolio:
    """Schema-guided extraction of one page; rows failing validation become unmatched."""
    prompt = build_extraction_prompt(page.text, registry)
    try:
        response = complete_structured(backend, StructuredRequest(prompt, dumps(EXTRACTION), max_retries))
    except BackendUnavailable as exc:
        return _failed_portfolio(page, f"backend unavailable: {exc}")
    if not response.ok:
        return _failed_portfolio(page, f"extraction failed validation: {response.errors_seen[-1]}")
    return _finish(response.parsed["portfolio"], page, registry, backend, prompt, EXTRACTION, max_retries)


def detect(
    page: PageRecord,
    strategy: PromptStrategy | str,
    registry: SchemaRegistry,
    backend: Backend,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> DetectionResult:
    """Classify one page. Backend failures count as positive and carry an error."""
    strategy = PromptStrategy(strategy)
    if strategy is PromptStrategy.DIRECT_SCHEMA:
        portfolio = extract(page, registry, backend, max_retries)
        error = portfolio.errors[0] if portfolio.errors else None
        found = not portfolio.is_empty or error is not None
        return DetectionResult(page.key, strategy, found, None, error, portfolio)

    prompt = build_detection_prompt(strategy, page, registry)
    if strategy is PromptStrategy.RAW_TEXT:
        request, coerce = StructuredRequest(prompt, dumps(DETECTION_YES_NO), max_retries), coerce_yes_no
    elif strategy is PromptStrategy.STRUCTURED_COT:
        request, coerce = StructuredRequest(prompt, dumps(DETECTION_COT), max_retries), None
    else:
        request, coerce = StructuredRequest(prompt, dumps(FULL_SCHEMA), max_retries), None
    empty_reason = "" if strategy.has_reasoning else None
    try:
        response = complete_structured(backend, request, coerce)
    except BackendUnavailable as exc:
        return DetectionResult(page.key, strategy, True, empty_reason, f"backend unavailable: {exc}")
    if not response.ok:
        return DetectionResult(page.key, strategy, True, empty_reason,
                               f"detection failed validation: {response.errors_seen[-1]}")
    parsed = response.parsed
    found = bool(parsed["has_portfolio_table"])
    chain = None
    if strategy.has_reasoning:
        chain = str(parsed.get("chain_of_thought") or parsed.get("table_chain_of_thought") or "")
    portfolio = None
    if strategy is PromptStrategy.FULL_SCHEMA and found and isinstance(parsed.get("portfolio"), Mapping):
        portfolio = _finish(parsed["portfolio"], page, registry, backend, prompt, FULL_SCHEMA, max_retries)
    return DetectionResult(page.key, strategy, found, chain, None, portfolio)


# --------------------------------------------------------------------------
# fund construction

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")
_SPACES = re.compile(r"\s+")


def normalize_fund_name(name: str | None) -> str:
    if not name:
        return ""
    return _SPACES.sub(" ", _PUNCT.sub(" ", name.casefold())).strip()


def scale_portfolio(portfolio: Portfolio, factor: float) -> Portfolio:
    """Multiply every market value by ``factor`` and clear value_in_thousands."""

    def holding(h: Holding) -> Holding:
        mv = h.values.get("market_value")
        if mv is None:
            return h
        return replace(h, values={**h.values, "market_value": mv * factor})

    def other(o: UnmatchedHolding) -> UnmatchedHolding:
        return o if o.market_value is None else replace(o, market_value=o.market_value * factor)

    return replace(
        portfolio,
        value_in_thousands=False,
        holdings=tuple(holding(h) for h in portfolio.holdings),
        other_instruments=tuple(other(o) for o in portfolio.other_instruments),
    )


def declared_value(portfolio: Portfolio) -> float:
    return sum(h.market_value for h in portfolio.holdings if h.market_value is not None)


def slugify(name: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", name.casefold()).strip("-")
    return slug or "unnamed"


def merge_funds(pages: Iterable[tuple[PageRecord, Portfolio]]) -> list[FundPortfolio]:
    """Merge per-page portfolios into funds.

    A page joins the running fund when it is in the same document and either
    repeats the fund's name, or follows the previous page directly and one of
    the two names is empty. Pages flagged value_in_thousands are scaled x1000
    before merging.
    """
    ordered = sorted(pages, key=lambda item: item[0].key)
    groups: list[dict[str, Any]] = []
    for page, portfolio in ordered:
        norm = normalize_fund_name(portfolio.fund_name)
        if portfolio.value_in_thousands:
            portfolio = scale_portfolio(portfolio, 1000.0)
        current = groups[-1] if groups else None
        joins = (
            current is not None
            and current["doc_id"] == page.doc_id
            and (
                (norm and norm == current["norm"])
                or (page.page_no == current["pages"][-1] + 1 and (not norm or not current["norm"] or norm == current["norm"]))
            )
        )
        if joins:
            current["pages"].append(page.page_no)
            current["parts"].append(portfolio)
            if not current["norm"] and norm:
                current["norm"], current["name"] = norm, portfolio.fund_name
        else:
            groups.append({
                "doc_id": page.doc_id,
                "norm": norm,
                "name": portfolio.fund_name or "",
                "pages": [page.page_no],
                "parts": [portfolio],
            })
    funds = []
    for g in groups:
        merged = Portfolio(
            fund_name=g["name"] or None,
            value_in_thousands=False,
            holdings=tuple(h for p in g["parts"] for h in p.holdings),
            other_instruments=tuple(o for p in g["parts"] for o in p.other_instruments),
            errors=tuple(e for p in g["parts"] for e in p.errors),
        )
        funds.append(FundPortfolio(g["doc_id"], g["name"], tuple(g["pages"]), merged, declared_value(merged)))
    return funds
