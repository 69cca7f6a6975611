import json

import pytest

from taser.agents import (
    declared_value,
    detect,
    extract,
    merge_funds,
    normalize_fund_name,
    scale_portfolio,
    slugify,
)
from taser.ingest import PageRecord
from taser.llm.backends import TransportError
from taser.llm.mock import MockBackend
from taser.llm.prompts import PromptStrategy
from taser.schema import Holding, Portfolio, UnmatchedHolding, initial_registry

TABLE = PageRecord("doc", 2, (
    "Portfolio of Investments - Alpha Fund",
    "1,200 | Acme Industrial Holdings | US | 2,400,000 | 0.76",
    "GBP 4,700,000 | UK Treasury 0% 19/02/2024 | 4,668,000 | 1.48",
    "Bought EUR Sold USD at 0.93035372 11/06/2024 | (282,515)",
    "Cash at bank | 1,844,776",
))
PROSE = PageRecord("doc", 1, ("The fund seeks long-term growth.",))


class Down:
    name = "down"

    def complete(self, prompt):
        raise TransportError("connection refused")


class FirstReplyBroken:
    """Returns an extraction whose debt row fails validation, then defers to the mock."""

    name = "broken-once"

    def __init__(self):
        self.calls = 0
        self.mock = MockBackend()

    def complete(self, prompt):
        self.calls += 1
        if self.calls == 1:
            return json.dumps({"portfolio": {"debt": [{"description": "UK Treasury", "market_value": "lots"}]}})
        return self.mock.complete(prompt)


@pytest.mark.parametrize("strategy", list(PromptStrategy))
def test_detect_each_strategy(strategy):
    reg, mock = initial_registry(), MockBackend()
    hit = detect(TABLE, strategy, reg, mock)
    miss = detect(PROSE, strategy, reg, mock)
    assert hit.has_portfolio_table and not miss.has_portfolio_table
    assert hit.error is None
    assert (hit.chain_of_thought is not None) == strategy.has_reasoning
    assert (hit.portfolio is not None) == (strategy in (PromptStrategy.FULL_SCHEMA, PromptStrategy.DIRECT_SCHEMA))


def test_detect_counts_backend_failure_as_positive():
    result = detect(TABLE, "raw_text", initial_registry(), Down())
    assert result.has_portfolio_table and result.error.startswith("backend unavailable")


def test_extract_splits_matched_and_unmatched():
    portfolio = extract(TABLE, initial_registry(), MockBackend())
    assert portfolio.fund_name == "Alpha Fund"
    assert sorted(h.class_name for h in portfolio.holdings) == ["Debt", "Equity"]
    assert [o.name for o in portfolio.other_instruments] == ["Currency Forward", "Other"]
    assert all(h.source == ("doc", 2) for h in portfolio.holdings)
    assert declared_value(portfolio) == 2_400_000 + 4_668_000


def test_extract_reprompts_once_on_item_errors():
    backend = FirstReplyBroken()
    portfolio = extract(TABLE, initial_registry(), backend)
    assert backend.calls == 2
    assert sorted(h.class_name for h in portfolio.holdings) == ["Debt", "Equity"]


def test_extract_demotes_rows_when_backend_is_down():
    portfolio = extract(TABLE, initial_registry(), Down())
    assert not portfolio.holdings
    assert len(portfolio.other_instruments) == 4
    assert portfolio.other_instruments[3].market_value == 1_844_776.0
    assert portfolio.errors[0].startswith("backend unavailable")


def test_normalize_fund_name_and_slug():
    assert normalize_fund_name("  Alpha-Fund,  Inc. ") == "alpha fund inc"
    assert normalize_fund_name(None) == ""
    assert slugify("Alpha & Omega Fund") == "alpha-omega-fund"
    assert slugify("***") == "unnamed"


def holding(mv):
    return Holding("Equity", {"description": "x", "market_value": mv, "instrument_type": "Equity"})


def page(doc, no):
    return PageRecord(doc, no, ("x",))


def test_scale_portfolio():
    p = Portfolio("F", True, (holding(2.0), holding(None)), (UnmatchedHolding("y", market_value=3.0),))
    scaled = scale_portfolio(p, 1000.0)
    assert not scaled.value_in_thousands
    assert [h.market_value for h in scaled.holdings] == [2000.0, None]
    assert scaled.other_instruments[0].market_value == 3000.0


def test_merge_funds_by_name_and_continuation():
    parts = [
        (page("a", 3), Portfolio(None, False, (holding(3.0),))),
        (page("a", 1), Portfolio("Alpha Fund", False, (holding(1.0),))),
        (page("a", 2), Portfolio(None, True, (holding(2.0),))),
        (page("a", 5), Portfolio("Alpha fund", False, (holding(5.0),))),
        (page("a", 6), Portfolio("Beta Fund", False, (holding(6.0),))),
        (page("b", 7), Portfolio(None, False, (holding(7.0),))),
    ]
    funds = merge_funds(parts)
    assert [(f.doc_id, f.fund_name, f.pages, f.declared_value) for f in funds] == [
        ("a", "Alpha Fund", (1, 2, 3, 5), 2009.0),
        ("a", "Beta Fund", (6,), 6.0),
        ("b", "", (7,), 7.0),
    ]


def test_merge_funds_does_not_bridge_gaps_without_names():
    funds = merge_funds([(page("a", 1), Portfolio("Alpha Fund", False, (holding(1.0),))),
                         (page("a", 3), Portfolio(None, False, (holding(3.0),)))])
    assert [f.pages for f in funds] == [(1,), (3,)]
