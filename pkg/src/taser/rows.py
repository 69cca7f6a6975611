"""Line-oriented holdings-row heuristics.

These rules stand in for the language model in the offline mock backend:
they split a page into candidate rows, pick out the description and numeric
cells, and recognize the instrument patterns that appear in fund filings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

from .schema import CoercionError, parse_date, parse_decimal

_DATE = r"\d{1,2}/\d{1,2}/\d{4}"
_MONTH = (
    r"(?:January|February|March|April|May|June|July|August|September|October|November|December"
    r"|Jan|Feb|Mar|Apr|Jun|Jul|Aug|Sep|Sept|Oct|Nov|Dec)"
)
_EXCHANGE = re.compile(r"^[A-Z]{2}$")
_LETTERS = re.compile(r"[A-Za-z]")
_TOKEN = re.compile(r"[A-Za-z0-9]+")
_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")

STOPWORDS = frozenset({"a", "an", "and", "at", "for", "from", "in", "of", "on", "the", "to", "with", "by"})

# words that mark a row as cash, accruals or balance-sheet lines rather than a security
CASH_WORDS = frozenset({
    "cash", "deposit", "receivable", "payable", "liability", "asset", "fee", "expense",
    "total", "subtotal", "net", "margin", "collateral", "dividend", "distribution",
    "interest", "accrued", "prepaid", "other", "balance",
})


def singular(word: str) -> str:
    if len(word) > 4 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) > 3 and word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def tokens(text: str) -> list[str]:
    """Lower-cased, singularized word tokens; camelCase is split."""
    spaced = _CAMEL.sub(" ", text)
    return [singular(t.lower()) for t in _TOKEN.findall(spaced)]


def content_tokens(text: str) -> list[str]:
    return [t for t in tokens(text) if t not in STOPWORDS]


def is_numeric(cell: str) -> bool:
    try:
        parse_decimal(cell)
    except CoercionError:
        return False
    return True


def is_date(cell: str) -> bool:
    try:
        parse_date(cell)
    except CoercionError:
        return False
    return True


@dataclass(frozen=True)
class Row:
    description: str
    quantity: str | None = None
    market_value: str | None = None
    percent: str | None = None
    dates: tuple[str, ...] = ()
    codes: tuple[str, ...] = ()
    line: str = ""

    @property
    def numbers(self) -> int:
        return sum(v is not None for v in (self.quantity, self.market_value))


def split_cells(line: str) -> list[str]:
    if "|" in line:
        return [c.strip() for c in line.split("|") if c.strip()]
    # unpiped rows: peel trailing numeric tokens off the description
    parts = line.split(" ")
    tail: list[str] = []
    while len(parts) > 1 and is_numeric(parts[-1]) and not is_date(parts[-1]):
        tail.insert(0, parts.pop())
    if not tail or line.endswith(".") or len(parts) > 10:
        return [line]
    return [" ".join(parts)] + tail


def parse_row(line: str) -> Row | None:
    """Split one text line into a :class:`Row`, or None when it is not a holdings row."""
    cells = split_cells(line)
    desc_at = next(
        (i for i, c in enumerate(cells) if _LETTERS.search(c) and not is_numeric(c) and not is_date(c)
         and not _EXCHANGE.match(c)),
        None,
    )
    if desc_at is None:
        return None
    before, after = cells[:desc_at], cells[desc_at + 1:]
    pre = [c for c in before if is_numeric(c)]
    post = [c for c in after if is_numeric(c) and not is_date(c)]
    dates = tuple(c for c in after if is_date(c) and not is_numeric(c))
    codes = tuple(c for c in after if _EXCHANGE.match(c))
    if not pre and not post:
        return None
    quantity = pre[0] if pre else None
    mv = pct = None
    if quantity is None:
        if len(post) == 1:
            mv = post[0]
        elif len(post) >= 2:
            quantity, mv = post[0], post[1]
            pct = post[2] if len(post) >= 3 else None
    else:
        mv = post[0] if post else None
        pct = post[1] if len(post) >= 2 else None
    return Row(cells[desc_at], quantity, mv, pct, dates, codes, line)


def parse_rows(lines: Iterable[str]) -> list[Row]:
    return [row for line in lines if (row := parse_row(line)) is not None]


# --------------------------------------------------------------------------
# instrument recognizers


@dataclass
class Match:
    label: str
    values: dict[str, str] = field(default_factory=dict)


_FX = re.compile(rf"^Bought (?P<buy>[A-Z]{{3}}) Sold (?P<sell>[A-Z]{{3}}) at (?P<rate>\d+(?:\.\d+)?) (?P<date>{_DATE})$")
_OPTION_SIDE = re.compile(
    rf"^(?:(?:Purchased|Written|Bought|Sold|Long|Short) )?(?P<type>Put|Call) (?P<under>.+?) "
    rf"(?P<strike>\d+(?:\.\d+)?)(?: (?P<date>{_DATE}|{_MONTH} \d{{4}}))?$"
)
_OPTION_TRAIL = re.compile(
    rf"^(?P<under>.+?) (?P<type>Put|Call)(?: Options?)? (?P<strike>\d+(?:\.\d+)?)"
    rf"(?: (?P<date>{_DATE}|{_MONTH} \d{{4}}))?$"
)
_OPTION_WORD = re.compile(r"\b(?:Put|Call|Options?)\b", re.IGNORECASE)
_PUT_CALL = re.compile(r"\b(Put|Call)\b", re.IGNORECASE)
_FUTURE = re.compile(r"\bfutures?\b", re.IGNORECASE)
_TRAILING_EXPIRY = re.compile(rf"(?P<date>{_DATE}|{_MONTH} \d{{4}})\+?$")
_ELN = re.compile(rf"^(?P<issuer>\S+) \((?P<product>.+)\) ELN(?: (?P<date>{_DATE}))?$")
_ELN_WORD = re.compile(r"\bELNs?\b|\bEquity Linked Notes?\b", re.IGNORECASE)
_SWAP = re.compile(r"\bswaps?\b|^Pay (?:fixed|float)", re.IGNORECASE)
_RATE = re.compile(r"(\d+(?:\.\d+)?)%")
_PARENS = re.compile(r"\(([^()]+)\)")
_DEBT = re.compile(rf"^(?P<issuer>.+?) (?P<coupon>\d+(?:\.\d+)?)% (?P<date>{_DATE})$")
_FX_FORWARD = re.compile(r"^(?P<pair>[A-Z]{3}/[A-Z]{3}) Forward(?: Contract)?$")


def _base(row: Row) -> dict[str, str]:
    values = {"description": row.description}
    if row.quantity is not None:
        values["quantity"] = row.quantity
    if row.market_value is not None:
        values["market_value"] = row.market_value
    return values


def recognize_fx(row: Row) -> Match | None:
    m = _FX.match(row.description)
    if not m:
        return None
    values = _base(row)
    values.update(currency_pair=f"{m['buy']}/{m['sell']}", forward_rate=m["rate"], settlement_date=m["date"])
    return Match("Currency Forward", values)


def recognize_option(row: Row) -> Match | None:
    d = row.description
    if not _OPTION_WORD.search(d):
        return None
    values = _base(row)
    m = _OPTION_SIDE.match(d) or _OPTION_TRAIL.match(d)
    if m:
        values.update(underlying=m["under"], strike_price=m["strike"], option_type=m["type"].title())
        if m["date"]:
            values["expiration_date"] = m["date"]
    else:
        kind = _PUT_CALL.search(d)
        if kind:
            values["option_type"] = kind.group(1).title()
    if "expiration_date" not in values and row.dates:
        values["expiration_date"] = row.dates[0]
    return Match("Option", values)


def recognize_future(row: Row) -> Match | None:
    if not _FUTURE.search(row.description):
        return None
    values = _base(row)
    m = _TRAILING_EXPIRY.search(row.description)
    if m:
        values["expiration_date"] = m["date"]
    elif row.dates:
        values["expiration_date"] = row.dates[0]
    return Match("Future", values)


def recognize_eln(row: Row) -> Match | None:
    d = row.description
    m = _ELN.match(d)
    if m:
        values = _base(row)
        values.update(issuer=m["issuer"], product=m["product"])
        if m["date"]:
            values["maturity_date"] = m["date"]
        return Match("EquityLinkedNote", values)
    if _ELN_WORD.search(d):
        return Match("EquityLinkedNote", _base(row))
    return None


def recognize_swap(row: Row) -> Match | None:
    d = row.description
    if not _SWAP.search(d):
        return None
    values = _base(row)
    rate = _RATE.search(d)
    if rate:
        values["fixed_rate"] = rate.group(1)
    index = _PARENS.search(d)
    if index:
        values["floating_rate_index"] = index.group(1)
    if row.dates:
        values["maturity_date"] = row.dates[0]
    return Match("Swap", values)


def recognize_debt(row: Row) -> Match | None:
    m = _DEBT.match(row.description)
    if not m:
        return None
    values = _base(row)
    values.update(issuer=m["issuer"], coupon_rate=m["coupon"], maturity_date=m["date"])
    return Match("Debt", values)


def recognize_forward(row: Row) -> Match | None:
    m = _FX_FORWARD.match(row.description)
    if not m:
        return None
    values = _base(row)
    if row.dates:
        values["settlement_date"] = row.dates[0]
    return Match("Forward", values)


def recognize_equity(row: Row) -> Match | None:
    """A plain security line: quantity and value (or an exchange code), no cash wording."""
    d = row.description
    if row.market_value is None or "%" in d or re.search(_DATE, d):
        return None
    if not (row.quantity is not None or row.codes):
        return None
    if set(tokens(d)) & CASH_WORDS:
        return None
    values = _base(row)
    if row.codes:
        values["exchange"] = row.codes[-1]
    return Match("Equity", values)


RECOGNIZERS = (
    recognize_fx,
    recognize_option,
    recognize_future,
    recognize_eln,
    recognize_swap,
    recognize_debt,
    recognize_forward,
)


@lru_cache(maxsize=4096)
def _name_tokens(name: str) -> frozenset[str]:
    return frozenset(content_tokens(name))


def match_named_class(row: Row, class_names: Iterable[str]) -> str | None:
    """The longest class name whose content tokens all occur in the description."""
    have = set(content_tokens(row.description))
    best: tuple[int, str] | None = None
    for name in class_names:
        need = _name_tokens(name)
        if need and need <= have:
            key = (len(need), name)
            if best is None or key > best:
                best = key
    return best[1] if best else None


_FUND_HEADING = re.compile(r"^(?:Portfolio|Schedule) of Investments\s*[-–:,]\s*(?P<name>.+)$", re.IGNORECASE)
_FUND_LINE = re.compile(r"^(?P<name>[A-Z][\w&'.,\- ]*\bFund)\b")
_THOUSANDS = re.compile(r"in thousands|\(000\)|'000|\(000s\)", re.IGNORECASE)


def fund_name(lines: Iterable[str]) -> str | None:
    for line in lines:
        if "|" in line:
            continue
        m = _FUND_HEADING.match(line) or _FUND_LINE.match(line)
        if m:
            return m["name"].strip()
    return None


def in_thousands(lines: Iterable[str]) -> bool:
    return any(_THOUSANDS.search(line) for line in lines)
