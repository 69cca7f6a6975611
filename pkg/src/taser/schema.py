"""Dynamic instrument schema, value coercion and holding validation.

The schema is data, not Python types: the refinement loop adds classes at
run time, so every class is a list of :class:`FieldSpec` records that can be
rendered to (and parsed from) JSON Schema.
"""

from __future__ import annotations

import calendar
import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from datetime import date
from typing import Any, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

KINDS = ("text", "decimal", "integer", "boolean", "date", "literal")


class SchemaError(ValueError):
    """A class definition or registry document could not be parsed."""


class CoercionError(ValueError):
    def __init__(self, kind: str, text: Any, reason: str = "unparseable") -> None:
        super().__init__(f"cannot coerce {text!r} to {kind}: {reason}")
        self.kind = kind
        self.text = text
        self.reason = reason


class HoldingValidationError(ValueError):
    """All field failures for one candidate holding."""

    def __init__(self, class_name: str, errors: Sequence[tuple[str, str]]) -> None:
        self.class_name = class_name
        self.errors = list(errors)
        detail = "; ".join(f"{name}: {reason}" for name, reason in self.errors)
        super().__init__(f"{class_name}: {detail}")


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    optional: bool = True
    description: str = ""
    const: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SchemaError(f"field {self.name!r}: unknown kind {self.kind!r}")
        if (self.kind == "literal") != (self.const is not None):
            raise SchemaError(f"field {self.name!r}: literal fields carry exactly one constant")


@dataclass(frozen=True)
class InstrumentClass:
    name: str
    fields: tuple[FieldSpec, ...]
    collection: str
    origin: str = "initial"
    iteration: int | None = None

    def __post_init__(self) -> None:
        names = [f.name for f in self.fields]
        if len(names) != len(set(names)):
            raise SchemaError(f"class {self.name!r}: duplicate field names")

    def field(self, name: str) -> FieldSpec | None:
        for spec in self.fields:
            if spec.name == name:
                return spec
        return None

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    @property
    def instrument_type(self) -> str | None:
        spec = self.field("instrument_type")
        return spec.const if spec is not None else None


@dataclass(frozen=True)
class SchemaSuggestion:
    name: str
    suggested_schema: str
    example: str

    def to_dict(self) -> dict[str, str]:
        return {"name": self.name, "suggested_schema": self.suggested_schema, "example": self.example}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SchemaSuggestion":
        schema = data.get("suggested_schema", "")
        if not isinstance(schema, str):
            schema = json.dumps(schema)
        return cls(name=str(data.get("name", "")), suggested_schema=schema, example=str(data.get("example", "")))


@dataclass(frozen=True)
class SchemaRegistry:
    version: int
    classes: Mapping[str, InstrumentClass]
    history: tuple[Mapping[str, Any], ...] = ()

    def __hash__(self) -> int:
        return hash((self.version, tuple(self.classes)))

    def __getitem__(self, name: str) -> InstrumentClass:
        return self.classes[name]

    def __contains__(self, name: object) -> bool:
        return name in self.classes

    def instrument_classes(self) -> list[InstrumentClass]:
        return [c for c in self.classes.values() if c.name != OTHER]

    @cached_property
    def _collections(self) -> dict[str, InstrumentClass]:
        out: dict[str, InstrumentClass] = {}
        for cls in self.classes.values():
            out.setdefault(cls.collection, cls)
        return out

    @cached_property
    def _folded(self) -> dict[str, InstrumentClass]:
        out: dict[str, InstrumentClass] = {}
        for cls in self.classes.values():
            for tag in (cls.name, cls.collection, cls.instrument_type):
                if tag:
                    out.setdefault(_fold(tag), cls)
        return out

    def by_collection(self, key: str) -> InstrumentClass | None:
        return self._collections.get(key)

    def lookup(self, label: str) -> InstrumentClass | None:
        """Find a class by name, instrument_type tag or collection key (case-insensitive)."""
        if label in self.classes:
            return self.classes[label]
        return self._folded.get(_fold(label))

    def same_classes(self, other: "SchemaRegistry") -> bool:
        return dict(self.classes) == dict(other.classes)


def _fold(text: str) -> str:
    return re.sub(r"[\s_\-]+", "", text).casefold()


# --------------------------------------------------------------------------
# initial schema

OTHER = "Other"

BASE_FIELDS: tuple[FieldSpec, ...] = (
    FieldSpec("cusip", "text", True, "CUSIP identifier"),
    FieldSpec("isin", "text", True, "International Securities Identification Number"),
    FieldSpec("ticker", "text", True, "Ticker Symbol"),
    FieldSpec("description", "text", True, "Description or name of the instrument"),
    FieldSpec("quantity", "decimal", True, "Number of units held"),
    FieldSpec("market_value", "decimal", True, "Market value of the holding"),
)


def _tag(value: str) -> FieldSpec:
    return FieldSpec("instrument_type", "literal", True, "", const=value)


_INITIAL: tuple[tuple[str, str, str, tuple[FieldSpec, ...]], ...] = (
    ("Equity", "equities", "Equity", (
        FieldSpec("exchange", "text", True, "Trading exchange for the equity"),
    )),
    ("Option", "options", "Option", (
        FieldSpec("underlying", "text", True, "Identifier for the underlying asset"),
        FieldSpec("strike_price", "decimal", True, "Strike price of the option"),
        FieldSpec("expiration_date", "date", True, "Expiration date of the option"),
        FieldSpec("option_type", "text", True, "Call or Put option"),
    )),
    ("Swap", "swaps", "Swap", (
        FieldSpec("notional_amount", "decimal", True, "Notional amount of the swap"),
        FieldSpec("fixed_rate", "decimal", True, "Fixed rate component (if applicable)"),
        FieldSpec("floating_rate_index", "text", True, "Index used for floating rate leg"),
        FieldSpec("maturity_date", "date", True, "Maturity date of the swap"),
        FieldSpec("counterparty", "text", True, "The name of the counterparty"),
    )),
    ("Forward", "forwards", "Forward", (
        FieldSpec("forward_price", "decimal", True, "Agreed forward price"),
        FieldSpec("settlement_date", "date", True, "Settlement date for the forward"),
    )),
    ("Future", "futures", "Future", (
        FieldSpec("contract_size", "integer", True, "Size of the contract"),
        FieldSpec("expiration_date", "date", True, "Expiration date of the future"),
    )),
    ("Debt", "debt", "Debt", (
        FieldSpec("coupon_rate", "decimal", True, "Annual coupon rate of the debt/bond"),
        FieldSpec("maturity_date", "date", True, "Maturity date of the debt/bond"),
        FieldSpec("issuer", "text", True, "Issuer of the debt/bond"),
    )),
    ("EquityLinkedNote", "elns", "Equity Linked Note", (
        FieldSpec("issuer", "text", True, "Issuer of the ELN"),
        FieldSpec("product", "text", True, "Underlying product of the ELN"),
        FieldSpec("maturity_date", "date", True, "Maturity date of the ELN"),
    )),
)

OTHER_CLASS = InstrumentClass(
    name=OTHER,
    collection="other_instruments",
    fields=(
        FieldSpec("description", "text", False, "Text of the unknown instrument."),
        FieldSpec("name", "text", False, "Suggested classification of the description or type"),
        FieldSpec("market_value", "decimal", True, "Market value associated with the instrument"),
    ),
)

INITIAL_CLASS_NAMES = frozenset([name for name, *_ in _INITIAL] + [OTHER])


def initial_registry() -> SchemaRegistry:
    classes: dict[str, InstrumentClass] = {}
    for name, collection, tag, extra in _INITIAL:
        classes[name] = InstrumentClass(
            name=name, collection=collection, fields=BASE_FIELDS + (_tag(tag),) + extra
        )
    classes[OTHER] = OTHER_CLASS
    return SchemaRegistry(version=0, classes=classes)


# --------------------------------------------------------------------------
# coercion

_MINUS = {"−": "-", "–": "-", "‒": "-", "‐": "-"}
_CCY_LEAD = re.compile(r"^(?:[A-Z]{2}\$|[A-Z]{3}(?![A-Za-z])|[$€£¥₹₩])\s*")
_CCY_TAIL = re.compile(r"\s*(?:(?<![A-Za-z])[A-Z]{3}|[$€£¥₹₩])$")
_PLAIN = re.compile(r"^(?:\d+(?:\.\d+)?|\.\d+)(?:[eE][+-]?\d+)?$")
_GROUPED = re.compile(r"^\d{1,3}(?:(,)\d{3})+(?:\.\d+)?$|^\d{1,3}(?:( )\d{3})+(?:\.\d+)?$")


def _strip_currency(text: str, notes: list[str] | None) -> str:
    while True:
        m = _CCY_LEAD.match(text) or _CCY_TAIL.search(text)
        if not m or m.group(0).strip() == text:
            return text
        if notes is not None:
            notes.append(f"stripped currency {m.group(0).strip()!r}")
        text = (text[: m.start()] + text[m.end():]).strip()


def parse_decimal(text: str, notes: list[str] | None = None) -> float:
    s = text.strip()
    for bad, good in _MINUS.items():
        s = s.replace(bad, good)
    s = _strip_currency(s, notes)
    if len(s) >= 2 and s[0] == "(" and s[-1] == ")":
        return -parse_decimal(s[1:-1], notes)
    sign = 1.0
    if s[:1] in "+-" and s:
        sign = -1.0 if s[0] == "-" else 1.0
        s = _strip_currency(s[1:].strip(), notes)
    if s.endswith("%"):
        s = s[:-1].rstrip()
    if _GROUPED.match(s):
        s = s.replace(",", "").replace(" ", "")
    if not _PLAIN.match(s):
        raise CoercionError("decimal", text)
    return sign * float(s)


_MONTHS = {name.lower(): i for i, name in enumerate(calendar.month_name) if name}
_MONTHS.update({name.lower(): i for i, name in enumerate(calendar.month_abbr) if name})
_MONTHS["sept"] = 9

_ISO = re.compile(
    r"^(\d{4})-(\d{1,2})-(\d{1,2})(?:[T ]\d{2}:\d{2}(?::\d{2}(?:\.\d+)?)?(?:Z|[+-]\d{2}:?\d{2})?)?$"
)
_YMD = re.compile(r"^(\d{4})[/.](\d{1,2})[/.](\d{1,2})$")
_DMY = re.compile(r"^(\d{1,2})([/.-])(\d{1,2})\2(\d{4})$")
_MONTH_YEAR = re.compile(r"^([A-Za-z]+)\.? (\d{4})$")
_DAY_MONTH_YEAR = re.compile(r"^(\d{1,2}) ([A-Za-z]+)\.?,? (\d{4})$")
_MONTH_DAY_YEAR = re.compile(r"^([A-Za-z]+)\.? (\d{1,2}),? (\d{4})$")


def _mkdate(y: int, m: int, d: int) -> date | None:
    try:
        return date(y, m, d)
    except ValueError:
        return None


def parse_date(text: str, notes: list[str] | None = None) -> date:
    s = text.strip()
    result: date | None = None
    if m := _ISO.match(s):
        result = _mkdate(int(m[1]), int(m[2]), int(m[3]))
    elif m := _YMD.match(s):
        result = _mkdate(int(m[1]), int(m[2]), int(m[3]))
    elif m := _DMY.match(s):
        a, b, y = int(m[1]), int(m[3]), int(m[4])
        dmy, mdy = _mkdate(y, b, a), _mkdate(y, a, b)
        result = dmy or mdy
        if dmy and mdy and dmy != mdy:
            if notes is not None:
                notes.append(f"ambiguous date {s!r} read as DD/MM")
            logger.debug("ambiguous date %r read as DD/MM", s)
    elif m := _MONTH_YEAR.match(s):
        month = _MONTHS.get(m[1].lower())
        result = _mkdate(int(m[2]), month, 1) if month else None
    elif m := _DAY_MONTH_YEAR.match(s):
        month = _MONTHS.get(m[2].lower())
        result = _mkdate(int(m[3]), month, int(m[1])) if month else None
    elif m := _MONTH_DAY_YEAR.match(s):
        month = _MONTHS.get(m[1].lower())
        result = _mkdate(int(m[3]), month, int(m[2])) if month else None
    if result is None:
        raise CoercionError("date", text)
    return result


_TRUE = {"true", "yes", "y", "t", "1"}
_FALSE = {"false", "no", "n", "f", "0"}


def coerce_value(value: Any, kind: str, const: str | None = None, notes: list[str] | None = None) -> Any:
    """Convert a cell value (usually text) to the Python value for ``kind``.

    decimal -> float, integer -> int, boolean -> bool, date -> datetime.date,
    text/literal -> str. Raises :class:`CoercionError` on failure.
    """
    if kind not in KINDS:
        raise SchemaError(f"unknown kind {kind!r}")
    if isinstance(value, bool):
        if kind == "boolean":
            return value
        raise CoercionError(kind, value, "boolean given")
    if isinstance(value, (int, float)):
        if kind == "decimal" and math.isfinite(value):
            return float(value)
        if kind == "integer" and math.isfinite(value) and float(value).is_integer():
            return int(value)
        raise CoercionError(kind, value, "number given")
    if isinstance(value, date):
        if kind == "date":
            return value
        raise CoercionError(kind, value, "date given")
    if not isinstance(value, str):
        raise CoercionError(kind, value, f"unsupported type {type(value).__name__}")

    text = value.strip()
    if not text:
        raise CoercionError(kind, value, "empty")
    if kind == "text":
        return text
    if kind == "literal":
        if text != const:
            raise CoercionError(kind, value, f"literal mismatch ({const!r} expected)")
        return text
    if kind == "decimal":
        return parse_decimal(text, notes)
    if kind == "integer":
        number = parse_decimal(text, notes)
        if not number.is_integer():
            raise CoercionError(kind, value, "not integral")
        return int(number)
    if kind == "boolean":
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise CoercionError(kind, value)
    return parse_date(text, notes)


# --------------------------------------------------------------------------
# holdings


@dataclass(frozen=True)
class Holding:
    class_name: str
    values: Mapping[str, Any]
    source: tuple[str, int] | None = None
    notes: tuple[str, ...] = field(default=(), compare=False)

    @property
    def market_value(self) -> float | None:
        return self.values.get("market_value")

    @property
    def description(self) -> str | None:
        return self.values.get("description")


@dataclass(frozen=True)
class UnmatchedHolding:
    description: str
    name: str = OTHER
    market_value: float | None = None
    source: tuple[str, int] | None = None

    def __post_init__(self) -> None:
        if not self.description.strip():
            raise ValueError("unmatched holding needs a description")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"description": self.description, "name": self.name, "market_value": self.market_value}
        if self.source is not None:
            out["source"] = {"doc_id": self.source[0], "page_no": self.source[1]}
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "UnmatchedHolding":
        src = data.get("source")
        source = (src["doc_id"], int(src["page_no"])) if src else None
        mv = data.get("market_value")
        return cls(
            description=str(data["description"]),
            name=str(data.get("name") or OTHER),
            market_value=None if mv is None else float(mv),
            source=source,
        )


def _is_missing(value: Any) -> bool:
    return value is None or (isinstance(value, str) and not value.strip())


def validate_holding(
    raw: Mapping[str, Any], cls: InstrumentClass, source: tuple[str, int] | None = None
) -> Holding:
    """Validate and coerce ``raw`` against ``cls``; all-or-nothing.

    Unknown keys are ignored. Missing literal fields take their constant.
    Raises :class:`HoldingValidationError` listing every failing field.
    """
    errors: list[tuple[str, str]] = []
    values: dict[str, Any] = {}
    notes: list[str] = []
    for spec in cls.fields:
        value = raw.get(spec.name)
        if _is_missing(value):
            if spec.kind == "literal":
                values[spec.name] = spec.const
            elif not spec.optional:
                errors.append((spec.name, "missing"))
            continue
        try:
            values[spec.name] = coerce_value(value, spec.kind, spec.const, notes)
        except CoercionError as exc:
            reason = exc.reason if exc.reason.startswith("literal mismatch") else f"type: {exc}"
            errors.append((spec.name, reason))
    if errors:
        raise HoldingValidationError(cls.name, errors)
    return Holding(class_name=cls.name, values=values, source=source, notes=tuple(notes))


def unmatched_from_raw(
    raw: Mapping[str, Any], name: str = OTHER, source: tuple[str, int] | None = None
) -> UnmatchedHolding:
    """Demote an arbitrary raw row to an :class:`UnmatchedHolding`; never fails."""
    description = raw.get("description")
    if _is_missing(description):
        description = raw.get("name")
    if _is_missing(description):
        description = json.dumps(dict(raw), sort_keys=True, default=str)
    market_value = None
    mv = raw.get("market_value")
    if not _is_missing(mv):
        try:
            market_value = coerce_value(mv, "decimal")
        except CoercionError:
            market_value = None
    hint = raw.get("name")
    label = name if name != OTHER or _is_missing(hint) else str(hint).strip()
    return UnmatchedHolding(description=str(description).strip(), name=label, market_value=market_value, source=source)


@dataclass(frozen=True)
class Portfolio:
    fund_name: str | None = None
    value_in_thousands: bool = False
    holdings: tuple[Holding, ...] = ()
    other_instruments: tuple[UnmatchedHolding, ...] = ()
    errors: tuple[str, ...] = ()

    def by_class(self) -> dict[str, list[Holding]]:
        grouped: dict[str, list[Holding]] = {}
        for h in self.holdings:
            grouped.setdefault(h.class_name, []).append(h)
        return grouped

    @property
    def row_count(self) -> int:
        return len(self.holdings) + len(self.other_instruments)

    @property
    def is_empty(self) -> bool:
        return self.row_count == 0


_ENVELOPE_KEYS = frozenset({"fund_name", "value_in_thousands", "errors"})


def portfolio_from_payload(
    data: Mapping[str, Any], registry: SchemaRegistry, source: tuple[str, int] | None = None
) -> tuple[Portfolio, list[tuple[Mapping[str, Any], InstrumentClass, HoldingValidationError]]]:
    """Validate a Portfolio JSON object collection by collection.

    Returns the portfolio of rows that validated (plus ``other_instruments``)
    and the failures as (raw item, class, error) triples for the caller to
    re-prompt or demote. Items under unknown collection keys become
    unmatched holdings named after the key.
    """
    holdings: list[Holding] = []
    others: list[UnmatchedHolding] = []
    failures: list[tuple[Mapping[str, Any], InstrumentClass, HoldingValidationError]] = []
    for key, items in data.items():
        if key in _ENVELOPE_KEYS or not isinstance(items, list):
            continue
        cls = registry.by_collection(key) or registry.lookup(key)
        for item in items:
            if not isinstance(item, Mapping):
                item = {"description": json.dumps(item, default=str)}
            if cls is None or cls.name == OTHER:
                others.append(unmatched_from_raw(item, name=key if cls is None else OTHER, source=source))
                continue
            try:
                holdings.append(validate_holding(item, cls, source))
            except HoldingValidationError as exc:
                failures.append((item, cls, exc))
    name = data.get("fund_name")
    portfolio = Portfolio(
        fund_name=name.strip() if isinstance(name, str) and name.strip() else None,
        value_in_thousands=bool(data.get("value_in_thousands") or False),
        holdings=tuple(holdings),
        other_instruments=tuple(others),
    )
    return portfolio, failures


def format_value(value: Any) -> Any:
    if isinstance(value, date):
        return value.isoformat() + "T00:00:00"
    return value


def holding_to_dict(holding: Holding) -> dict[str, Any]:
    return {k: format_value(v) for k, v in holding.values.items()}


def portfolio_to_dict(portfolio: Portfolio, registry: SchemaRegistry) -> dict[str, Any]:
    """Portfolio JSON keyed by collection names, mirroring the Portfolio model."""
    out: dict[str, Any] = {"fund_name": portfolio.fund_name, "value_in_thousands": portfolio.value_in_thousands}
    grouped = portfolio.by_class()
    for cls in registry.instrument_classes():
        out[cls.collection] = [holding_to_dict(h) for h in grouped.pop(cls.name, [])]
    for name in sorted(grouped):  # classes absent from this registry version
        out[name] = [holding_to_dict(h) for h in grouped[name]]
    out["other_instruments"] = [
        {"description": o.description, "name": o.name, "market_value": o.market_value}
        for o in portfolio.other_instruments
    ]
    if portfolio.errors:
        out["errors"] = list(portfolio.errors)
    return out


# --------------------------------------------------------------------------
# JSON Schema rendering / parsing

_JSON_TYPES = {"text": "string", "decimal": "number", "integer": "integer", "boolean": "boolean"}


def _title(name: str) -> str:
    return " ".join(part.capitalize() for part in name.split("_"))


def field_to_json_schema(spec: FieldSpec) -> dict[str, Any]:
    if spec.kind == "literal":
        prop: dict[str, Any] = {"type": "string", "title": _title(spec.name), "const": spec.const, "default": spec.const}
        if spec.description:
            prop["description"] = spec.description
        return prop
    base: dict[str, Any]
    if spec.kind == "date":
        base = {"type": "string", "format": "date-time"}
    else:
        base = {"type": _JSON_TYPES[spec.kind]}
    if spec.optional:
        prop = {"anyOf": [base, {"type": "null"}], "title": _title(spec.name)}
    else:
        prop = dict(base, title=_title(spec.name))
    if spec.description:
        prop["description"] = spec.description
    if spec.optional:
        prop["default"] = None
    return prop


def class_to_json_schema(cls: InstrumentClass) -> dict[str, Any]:
    schema: dict[str, Any] = {
        "title": cls.name,
        "type": "object",
        "properties": {f.name: field_to_json_schema(f) for f in cls.fields},
    }
    required = [f.name for f in cls.fields if not f.optional and f.kind != "literal"]
    if required:
        schema["required"] = required
    return schema


def _prop_kind(name: str, prop: Mapping[str, Any]) -> tuple[str, bool, str | None]:
    """Return (kind, nullable, const) for one JSON Schema property."""
    if "const" in prop:
        return "literal", False, str(prop["const"])
    variants = prop.get("anyOf") or prop.get("oneOf")
    options = list(variants) if variants else [prop]
    nullable = False
    kinds: set[str] = set()
    for option in options:
        types = option.get("type")
        types = types if isinstance(types, list) else [types]
        for t in types:
            if t == "null":
                nullable = True
            elif t == "string":
                fmt = option.get("format")
                kinds.add("date" if fmt in ("date", "date-time") else "text")
            elif t == "number":
                kinds.add("decimal")
            elif t == "integer":
                kinds.add("integer")
            elif t == "boolean":
                kinds.add("boolean")
            elif t is None and "const" in option:
                return "literal", nullable, str(option["const"])
            else:
                raise SchemaError(f"property {name!r}: unsupported type {t!r}")
    if kinds == {"integer", "decimal"}:
        kinds = {"decimal"}
    if len(kinds) != 1:
        raise SchemaError(f"property {name!r}: expected one scalar type, got {sorted(kinds) or 'none'}")
    return kinds.pop(), nullable, None


def fields_from_json_schema(schema: Mapping[str, Any]) -> tuple[FieldSpec, ...]:
    props = schema.get("properties")
    if not isinstance(props, Mapping):
        raise SchemaError("class schema needs a 'properties' object")
    required = set(schema.get("required") or ())
    out = []
    for name, prop in props.items():
        if not isinstance(prop, Mapping):
            raise SchemaError(f"property {name!r} is not an object")
        kind, _, const = _prop_kind(name, prop)
        optional = name not in required
        out.append(FieldSpec(name, kind, optional, str(prop.get("description", "")), const))
    return tuple(out)


def collection_key(name: str) -> str:
    words = re.findall(r"[A-Z]+(?=[A-Z][a-z]|\b|\d)|[A-Z]?[a-z]+|[A-Z]+|\d+", name)
    snake = "_".join(w.lower() for w in words) or "instrument"
    return snake if snake.endswith("s") else snake + "s"


def portfolio_json_schema(registry: SchemaRegistry) -> dict[str, Any]:
    """The Portfolio envelope as JSON Schema, one ``$defs`` entry per class."""
    defs: dict[str, Any] = {}
    props: dict[str, Any] = {
        "fund_name": {"anyOf": [{"type": "string"}, {"type": "null"}], "default": None,
                      "description": "Name of the fund that the portfolio belongs to", "title": "Fund Name"},
        "value_in_thousands": {"type": "boolean", "default": False,
                               "description": "True if the market value is based on thousands",
                               "title": "Value In Thousands"},
    }
    for cls in registry.classes.values():
        defs[cls.name] = class_to_json_schema(cls)
        label = "The list of instruments that do not match any other type" if cls.name == OTHER else f"List of {cls.name}"
        props[cls.collection] = {
            "type": "array",
            "items": {"$ref": f"#/$defs/{cls.name}"},
            "description": label,
            "title": _title(cls.collection),
        }
    return {"$defs": defs, "properties": props, "title": "Portfolio", "type": "object",
            "x-registry-version": registry.version}


def registry_from_portfolio_schema(schema: Mapping[str, Any]) -> SchemaRegistry:
    """Inverse of :func:`portfolio_json_schema` (origin metadata is not carried)."""
    defs = schema.get("$defs") or {}
    classes: dict[str, InstrumentClass] = {}
    for key, prop in (schema.get("properties") or {}).items():
        ref = (prop.get("items") or {}).get("$ref", "") if isinstance(prop, Mapping) else ""
        if not ref.startswith("#/$defs/"):
            continue
        name = ref[len("#/$defs/"):]
        origin = "initial" if name in INITIAL_CLASS_NAMES else "suggested"
        classes[name] = InstrumentClass(name, fields_from_json_schema(defs[name]), key, origin)
    return SchemaRegistry(version=int(schema.get("x-registry-version", 0)), classes=classes)


# --------------------------------------------------------------------------
# registry documents


def registry_to_dict(registry: SchemaRegistry) -> dict[str, Any]:
    classes = {}
    for cls in registry.classes.values():
        fields_out = []
        for f in cls.fields:
            item: dict[str, Any] = {"name": f.name, "kind": f.kind, "optional": f.optional}
            if f.const is not None:
                item["const"] = f.const
            item["description"] = f.description
            fields_out.append(item)
        entry: dict[str, Any] = {"fields": fields_out, "collection": cls.collection, "origin": cls.origin}
        if cls.iteration is not None:
            entry["iteration"] = cls.iteration
        classes[cls.name] = entry
    return {"version": registry.version, "classes": classes, "history": [dict(h) for h in registry.history]}


def serialize_registry(registry: SchemaRegistry) -> str:
    return json.dumps(registry_to_dict(registry), indent=2, ensure_ascii=False) + "\n"


def registry_from_dict(data: Mapping[str, Any]) -> SchemaRegistry:
    try:
        version = int(data["version"])
        raw_classes = data["classes"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"registry document: {exc}") from None
    if version < 0:
        raise SchemaError("registry version must be >= 0")
    classes: dict[str, InstrumentClass] = {}
    for name, entry in raw_classes.items():
        fields_in = tuple(
            FieldSpec(
                name=f["name"],
                kind=f["kind"],
                optional=bool(f.get("optional", True)),
                description=f.get("description", ""),
                const=f.get("const"),
            )
            for f in entry["fields"]
        )
        origin = entry.get("origin") or ("initial" if name in INITIAL_CLASS_NAMES else "suggested")
        classes[name] = InstrumentClass(
            name=name,
            fields=fields_in,
            collection=entry.get("collection") or collection_key(name),
            origin=origin,
            iteration=entry.get("iteration"),
        )
    if OTHER not in classes:
        raise SchemaError("registry must contain the Other class")
    return SchemaRegistry(version=version, classes=classes, history=tuple(data.get("history") or ()))


def parse_registry(text: str) -> SchemaRegistry:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"registry document: {exc.msg}") from None
    return registry_from_dict(data)


# --------------------------------------------------------------------------
# schema updates


def class_from_suggestion(suggestion: SchemaSuggestion, iteration: int) -> InstrumentClass:
    """Build a new class from a suggestion: base fields + tag + suggested fields."""
    try:
        schema = json.loads(suggestion.suggested_schema)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"suggested_schema is not JSON ({exc.msg})") from None
    if not isinstance(schema, Mapping):
        raise SchemaError("suggested_schema must be a JSON object")
    name = str(schema.get("title") or suggestion.name).strip()
    if not name:
        raise SchemaError("suggestion has no class name")
    suggested = fields_from_json_schema(schema)
    own = {f.name for f in suggested}
    merged = [f for f in BASE_FIELDS if f.name not in own]
    if "instrument_type" not in own:
        merged.append(_tag(name))
    merged.extend(suggested)
    return InstrumentClass(name, tuple(merged), collection_key(name), "suggested", iteration)


def update_schema(registry: SchemaRegistry, selected: Iterable[SchemaSuggestion]) -> SchemaRegistry:
    """Apply selected suggestions, returning the next registry version.

    New class names become classes; suggestions for an existing suggested
    class contribute only their new fields, added as optional. Initial
    classes are never modified. Rejections are recorded in ``history``.
    """
    version = registry.version + 1
    classes = dict(registry.classes)
    applied: list[str] = []
    rejected: list[dict[str, str]] = []
    for suggestion in selected:
        try:
            incoming = class_from_suggestion(suggestion, version)
        except SchemaError as exc:
            rejected.append({"name": suggestion.name, "reason": str(exc)})
            continue
        existing = classes.get(incoming.name)
        if existing is None:
            clash = next((c for c in classes.values() if c.collection == incoming.collection), None)
            if clash is not None or incoming.name in INITIAL_CLASS_NAMES:
                rejected.append({"name": incoming.name, "reason": "name collides with an existing class"})
                continue
            classes[incoming.name] = incoming
            applied.append(incoming.name)
            continue
        if existing.origin == "initial":
            rejected.append({"name": incoming.name, "reason": "initial classes are immutable"})
            continue
        additions = []
        for spec in incoming.fields:
            current = existing.field(spec.name)
            if current is None:
                additions.append(replace(spec, optional=True) if spec.kind != "literal" else spec)
            elif current.kind != spec.kind or current.const != spec.const:
                rejected.append({
                    "name": incoming.name,
                    "reason": f"field {spec.name!r} kind {spec.kind} conflicts with {current.kind}",
                })
        if additions:
            classes[incoming.name] = replace(existing, fields=existing.fields + tuple(additions))
        applied.append(incoming.name)
    entry: dict[str, Any] = {"version": version, "applied": applied}
    if rejected:
        entry["rejected"] = rejected
    return SchemaRegistry(version=version, classes=classes, history=registry.history + (entry,))
