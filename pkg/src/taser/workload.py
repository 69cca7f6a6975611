"""Seeded synthetic inputs: a heavy-tailed unmatched-holdings workload and a small demo corpus."""

from __future__ import annotations

import json
import random
from typing import Any

from .ingest import CorpusLabel, _parse_label
from .llm.mock import VARIANT_SUFFIXES, VOCABULARY
from .rows import CASH_WORDS, content_tokens
from .schema import UnmatchedHolding

# balance-sheet families stay out of the suggestion workload
EXCLUDED_FAMILIES = frozenset({"Cash", "Deposit", "Receivable", "Liability"})

_ONSETS = ("b", "br", "c", "d", "dr", "f", "g", "gr", "k", "kr", "l", "m", "n", "p", "qu", "r", "s", "st", "t",
           "tr", "v", "z", "zh")
_VOWELS = ("a", "e", "i", "o", "u", "ae", "io", "ou")
_CODAS = ("", "n", "r", "s", "x", "l", "m", "th", "nd")
_ENTITY_TAILS = ("Corp", "Group", "Industries", "Partners", "Capital", "Energy", "Systems", "Labs", "Resources")


def _banned_tokens() -> set[str]:
    banned = set(CASH_WORDS)
    for name in VOCABULARY:
        banned.update(content_tokens(name))
    for word in VARIANT_SUFFIXES:
        banned.update(content_tokens(word))
    banned.update({"put", "call", "option", "future", "swap", "eln", "forward", "note", "bond", "fund"})
    return banned


def _entity_names(rng: random.Random, count: int) -> list[str]:
    banned = _banned_tokens()
    names: list[str] = []
    seen: set[str] = set()
    while len(names) < count:
        word = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) + rng.choice(_CODAS) for _ in range(rng.randint(2, 3)))
        name = f"{word.capitalize()} {rng.choice(_ENTITY_TAILS)}"
        if name in seen or set(content_tokens(name)) & banned:
            continue
        seen.add(name)
        names.append(name)
    return names


def workload_families() -> list[str]:
    return [name for name in VOCABULARY if name not in EXCLUDED_FAMILIES]


def zipf_weights(n: int, exponent: float) -> list[float]:
    return [1.0 / (rank ** exponent) for rank in range(1, n + 1)]


def heavy_tail_workload(
    size: int = 5000, seed: int = 7, exponent: float = 1.1, entities: int = 1500
) -> list[UnmatchedHolding]:
    """Unmatched holdings whose families follow a Zipf law and whose values are log-normal.

    Each description is "<entity> <family> <year>", where entity names are
    made-up words that share no token with any family name, so the family is
    the only classifiable part of a row.
    """
    rng = random.Random(seed)
    families = workload_families()
    rng.shuffle(families)
    weights = zipf_weights(len(families), exponent)
    names = _entity_names(rng, entities)
    out = []
    for index in range(size):
        family = rng.choices(families, weights)[0]
        description = f"{rng.choice(names)} {family} {rng.randint(2025, 2040)}"
        value = round(rng.lognormvariate(11.0, 2.0), 2)
        out.append(UnmatchedHolding(description, market_value=value, source=("workload", 1 + index // 50)))
    return out


# --------------------------------------------------------------------------
# demo corpus

_DEMO_PAGES: list[dict[str, Any]] = [
    {"doc_id": "demo-annual", "page_no": 1,
     "text": "Annual Report for the year ended 31 December 2024.\nGlobal Balanced Fund\nThis report describes the fund's objectives and "
             "performance over the year.\nPage 1 of 4"},
    {"doc_id": "demo-annual", "page_no": 2,
     "text": "Portfolio of Investments - Global Balanced Fund\n"
             "Holding | Description | Market Value | % of Net Assets\n"
             "GBP 4,700,000 | UK Treasury 0% 19/02/2024 | 4,668,000 | 1.48\n"
             "1,200 | Acme Industrial Holdings | US | 2,400,000 | 0.76\n"
             "Bought EUR Sold USD at 0.93035372 11/06/2024 | (282,515)\n"
             "Bought GBP Sold USD at 0.79635765 11/06/2024 | 86,818\n"
             "Cash at bank | 1,844,776\nPage 2 of 4"},
    {"doc_id": "demo-annual", "page_no": 3,
     "text": "Portfolio of Investments - Global Balanced Fund\n"
             "S&P 500 Index Put Option 4250 February 2024 | -27 | -13,000\n"
             "Bought USD Sold JPY at 141.9 11/06/2024 | 264,010\n"
             "Net other assets | 12,016,000\nPage 3 of 4"},
    {"doc_id": "demo-annual", "page_no": 4,
     "text": "Notes to the Financial Statements\nThe fund values its investments at fair value.\nPage 4 of 4"},
]

_DEMO_LABELS: list[dict[str, Any]] = [
    {"doc_id": "demo-annual", "fund_name": "Global Balanced Fund", "holdings_pages": [2, 3],
     "net_asset_value": 20984089.0, "value_in_thousands": False},
]


def demo_corpus_jsonl() -> str:
    return "".join(json.dumps(p, ensure_ascii=False) + "\n" for p in _DEMO_PAGES)


def demo_labels() -> list[CorpusLabel]:
    return [_parse_label(i, item) for i, item in enumerate(_DEMO_LABELS)]


def demo_labels_json() -> str:
    return json.dumps(_DEMO_LABELS, indent=2) + "\n"
