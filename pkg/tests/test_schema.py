import json
from datetime import date

import pytest

from taser.llm.mock import CURRENCY_FORWARD_SCHEMA
from taser.schema import (
    BASE_FIELDS,
    INITIAL_CLASS_NAMES,
    OTHER,
    CoercionError,
    FieldSpec,
    HoldingValidationError,
    SchemaError,
    SchemaSuggestion,
    class_from_suggestion,
    coerce_value,
    collection_key,
    initial_registry,
    parse_date,
    parse_decimal,
    parse_registry,
    portfolio_from_payload,
    portfolio_json_schema,
    portfolio_to_dict,
    registry_from_portfolio_schema,
    serialize_registry,
    unmatched_from_raw,
    update_schema,
    validate_holding,
)

CF = SchemaSuggestion("Currency Forward", json.dumps(CURRENCY_FORWARD_SCHEMA), "Bought EUR Sold USD at 0.93 11/06/2024")


def suggestion(name, **props):
    schema = {"title": name, "type": "object",
              "properties": {k: {"anyOf": [{"type": t}, {"type": "null"}]} for k, t in props.items()}}
    return SchemaSuggestion(name, json.dumps(schema), f"{name} example")


def test_initial_registry_contents():
    reg = initial_registry()
    assert reg.version == 0
    assert set(reg.classes) == {"Equity", "Option", "Swap", "Forward", "Future", "Debt", "EquityLinkedNote", OTHER}
    assert set(reg.classes) == INITIAL_CLASS_NAMES
    assert reg["Debt"].field_names[:6] == tuple(f.name for f in BASE_FIELDS)
    assert reg["EquityLinkedNote"].instrument_type == "Equity Linked Note"
    assert reg[OTHER].field_names == ("description", "name", "market_value")


def test_lookup_is_case_and_separator_insensitive():
    reg = initial_registry()
    assert reg.lookup("equity linked note").name == "EquityLinkedNote"
    assert reg.lookup("ELNS").name == "EquityLinkedNote"
    assert reg.by_collection("other_instruments").name == OTHER
    assert reg.lookup("Currency Forward") is None


@pytest.mark.parametrize("text, value", [
    ("1,234.50", 1234.5),
    ("(282,515)", -282515.0),
    ("-27", -27.0),
    ("−13,000", -13000.0),
    ("$1,000", 1000.0),
    ("1 000 000", 1000000.0),
    ("USD 12.5", 12.5),
    ("4.125%", 4.125),
    (".5", 0.5),
])
def test_parse_decimal(text, value):
    assert parse_decimal(text) == value


@pytest.mark.parametrize("text", ["1,23", "abc", "1.2.3", "()", "12,34,567"])
def test_parse_decimal_rejects(text):
    with pytest.raises(CoercionError):
        parse_decimal(text)


def test_currency_stripping_is_noted():
    notes = []
    assert parse_decimal("GBP 4,700,000", notes) == 4700000.0
    assert notes == ["stripped currency 'GBP'"]


@pytest.mark.parametrize("text, value", [
    ("19/02/2024", date(2024, 2, 19)),
    ("02/19/2024", date(2024, 2, 19)),
    ("2024-06-11", date(2024, 6, 11)),
    ("2024-06-11T00:00:00", date(2024, 6, 11)),
    ("February 2024", date(2024, 2, 1)),
    ("Sept 2025", date(2025, 9, 1)),
    ("21 March 2025", date(2025, 3, 21)),
    ("March 21, 2025", date(2025, 3, 21)),
])
def test_parse_date(text, value):
    assert parse_date(text) == value


def test_ambiguous_date_reads_day_first_and_notes_it():
    notes = []
    assert parse_date("06/02/2025", notes) == date(2025, 2, 6)
    assert "ambiguous" in notes[0]


@pytest.mark.parametrize("text", ["31/02/2024", "Smarch 2024", "2024"])
def test_parse_date_rejects(text):
    with pytest.raises(CoercionError):
        parse_date(text)


def test_coerce_value_kinds():
    assert coerce_value("12", "integer") == 12
    assert coerce_value("yes", "boolean") is True
    assert coerce_value(3, "decimal") == 3.0
    assert coerce_value(" x ", "text") == "x"
    assert coerce_value("Debt", "literal", "Debt") == "Debt"
    with pytest.raises(CoercionError, match="literal mismatch"):
        coerce_value("Equity", "literal", "Debt")
    with pytest.raises(CoercionError):
        coerce_value("1.5", "integer")
    with pytest.raises(CoercionError):
        coerce_value(True, "decimal")
    with pytest.raises(CoercionError):
        coerce_value(float("nan"), "decimal")
    with pytest.raises(SchemaError):
        coerce_value("x", "money")


def test_literal_field_needs_constant():
    with pytest.raises(SchemaError):
        FieldSpec("instrument_type", "literal")
    with pytest.raises(SchemaError):
        FieldSpec("x", "text", const="y")


def test_validate_holding_fills_tag_and_coerces():
    reg = initial_registry()
    h = validate_holding({"description": "UK Treasury 0% 19/02/2024", "quantity": "4,700,000",
                          "market_value": "4668", "coupon_rate": "0", "maturity_date": "19/02/2024",
                          "unknown_key": "dropped"}, reg["Debt"], ("d", 1))
    assert h.values["instrument_type"] == "Debt"
    assert h.values["maturity_date"] == date(2024, 2, 19)
    assert h.market_value == 4668.0
    assert "unknown_key" not in h.values
    assert h.source == ("d", 1)


def test_validate_holding_reports_every_failure():
    reg = initial_registry()
    with pytest.raises(HoldingValidationError) as info:
        validate_holding({"market_value": "lots", "maturity_date": "never", "instrument_type": "Equity"}, reg["Debt"])
    fields = [name for name, _ in info.value.errors]
    assert fields == ["market_value", "instrument_type", "maturity_date"]


def test_other_requires_description_and_name():
    with pytest.raises(HoldingValidationError):
        validate_holding({"market_value": 1}, initial_registry()[OTHER])


def test_unmatched_from_raw_never_fails():
    u = unmatched_from_raw({"name": "Currency Forward", "market_value": "n/a", "rate": 1})
    assert u.description == "Currency Forward"
    assert u.market_value is None
    u = unmatched_from_raw({"rate": 1})
    assert u.description == '{"rate": 1}'


def test_portfolio_from_payload_routes_collections():
    reg = initial_registry()
    payload = {
        "fund_name": " Global Fund ",
        "equities": [{"description": "Acme", "market_value": "10"}],
        "debt": [{"description": "Bad", "market_value": "x"}],
        "currency_forwards": [{"description": "Bought EUR Sold USD", "market_value": "(5)"}],
        "other_instruments": [{"description": "Cash", "name": "Other", "market_value": 3}],
    }
    portfolio, failures = portfolio_from_payload(payload, reg, ("d", 2))
    assert portfolio.fund_name == "Global Fund"
    assert [h.class_name for h in portfolio.holdings] == ["Equity"]
    assert [(o.name, o.market_value) for o in portfolio.other_instruments] == [
        ("currency_forwards", -5.0), ("Other", 3.0)]
    assert len(failures) == 1 and failures[0][1].name == "Debt"


def test_portfolio_to_dict_lists_every_collection():
    reg = initial_registry()
    portfolio, _ = portfolio_from_payload({"options": [{"description": "x", "strike_price": 1,
                                                        "expiration_date": "2024-02-01"}]}, reg)
    out = portfolio_to_dict(portfolio, reg)
    assert list(out)[:2] == ["fund_name", "value_in_thousands"]
    assert out["options"][0]["expiration_date"] == "2024-02-01T00:00:00"
    assert out["equities"] == [] and out["other_instruments"] == []


@pytest.mark.parametrize("name, key", [
    ("Currency Forward", "currency_forwards"),
    ("EquityLinkedNote", "equity_linked_notes"),
    ("CDS", "cds"),
    ("Repo Agreements", "repo_agreements"),
])
def test_collection_key(name, key):
    assert collection_key(name) == key


def test_json_schema_round_trip():
    reg = update_schema(initial_registry(), [CF])
    back = registry_from_portfolio_schema(portfolio_json_schema(reg))
    assert back.version == reg.version
    for name, cls in reg.classes.items():
        assert back[name].fields == cls.fields
        assert back[name].collection == cls.collection


def test_registry_document_round_trip():
    reg = update_schema(initial_registry(), [CF, suggestion("Bad", x="object")])
    assert parse_registry(serialize_registry(reg)) == reg


def test_registry_document_needs_other():
    doc = json.loads(serialize_registry(initial_registry()))
    del doc["classes"][OTHER]
    with pytest.raises(SchemaError, match="Other"):
        parse_registry(json.dumps(doc))


def test_class_from_suggestion_layout():
    cls = class_from_suggestion(CF, 1)
    assert cls.name == "Currency Forward"
    assert cls.collection == "currency_forwards"
    # base fields the suggestion does not redefine come first, then the suggestion's own
    assert cls.field_names == ("cusip", "isin", "ticker", "quantity", "description", "market_value",
                               "instrument_type", "currency_pair", "forward_rate", "settlement_date")
    assert cls.instrument_type == "Currency Forward"
    assert cls.origin == "suggested" and cls.iteration == 1


@pytest.mark.parametrize("schema", ["not json", "[1]", json.dumps({"title": "X"}),
                                    json.dumps({"title": "X", "properties": {"a": {"type": "object"}}})])
def test_class_from_suggestion_rejects(schema):
    with pytest.raises(SchemaError):
        class_from_suggestion(SchemaSuggestion("X", schema, ""), 1)


def test_update_schema_adds_class_and_bumps_version():
    reg = update_schema(initial_registry(), [CF])
    assert reg.version == 1
    assert "Currency Forward" in reg
    assert reg.history[-1] == {"version": 1, "applied": ["Currency Forward"]}


def test_update_schema_merges_new_fields_as_optional():
    first = update_schema(initial_registry(), [suggestion("Repo", rate="number")])
    strict = SchemaSuggestion("Repo", json.dumps({"title": "Repo", "type": "object", "required": ["collateral"],
                                                  "properties": {"collateral": {"type": "string"},
                                                                 "rate": {"type": "string"}}}), "")
    second = update_schema(first, [strict])
    repo = second["Repo"]
    assert repo.field("collateral").optional is True
    assert repo.field("rate").kind == "decimal"
    assert "conflicts" in second.history[-1]["rejected"][0]["reason"]


def test_update_schema_never_touches_initial_classes():
    reg = update_schema(initial_registry(), [suggestion("Equity", sector="string"),
                                             suggestion("Equities", sector="string")])
    assert reg["Equity"] == initial_registry()["Equity"]
    assert [r["name"] for r in reg.history[-1]["rejected"]] == ["Equity", "Equities"]


def test_unmatched_holding_round_trip():
    u = unmatched_from_raw({"description": "x", "market_value": "(1)"}, source=("d", 4))
    assert type(u).from_dict(u.to_dict()) == u
    with pytest.raises(ValueError):
        type(u)(" ")
