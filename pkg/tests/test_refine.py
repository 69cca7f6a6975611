import json

import pytest

from taser.llm.backends import TransportError
from taser.llm.mock import CURRENCY_FORWARD_SCHEMA, MockBackend, canonical_schema
from taser.refine import (
    RefinementConfig,
    SuggestionPool,
    aggregate_and_select,
    best_match_score,
    cluster_suggestions,
    filter_false_positives,
    holding_text,
    is_spurious,
    partition_batches,
    reextract,
    refinement_loop,
    review_id,
    suggest_batch,
    suggestion_report,
)
from taser.schema import SchemaSuggestion, UnmatchedHolding, initial_registry, update_schema

FORWARDS = [
    UnmatchedHolding("Bought EUR Sold USD at 0.93035372 11/06/2024", "Currency Forward", -282515.0, ("d", 2)),
    UnmatchedHolding("Bought USD Sold GBP at 1.25473636 31/05/2024", "Currency Forward", 20651.0, ("d", 2)),
    UnmatchedHolding("Bought GBP Sold USD at 0.79368122 16/05/2024", "Currency Forward", 1429313.0, ("d", 3)),
]
CASH = UnmatchedHolding("Cash at bank", market_value=1844776.0, source=("d", 3))
CF = SchemaSuggestion("Currency Forward", json.dumps(CURRENCY_FORWARD_SCHEMA), FORWARDS[0].description)


def family(name, example):
    return SchemaSuggestion(name, canonical_schema(name), example)


class Down:
    name = "down"

    def complete(self, prompt):
        raise TransportError("down")


def test_config_validation():
    with pytest.raises(ValueError):
        RefinementConfig(batch_size=0)
    with pytest.raises(ValueError):
        RefinementConfig(dedup_similarity=1.5)
    with pytest.raises(ValueError):
        RefinementConfig(coverage_threshold=-1)


@pytest.mark.parametrize("text", ["Total investments", "Subtotal", "Market Value", "% of Net Assets",
                                  "* Non-income producing", "See note 4", "Total net assets 100"])
def test_spurious_rows(text):
    assert is_spurious(text)


def test_real_rows_are_not_spurious():
    assert not any(is_spurious(h.description) for h in FORWARDS + [CASH])


def test_filter_drops_rows_that_fit_an_existing_class():
    reg = update_schema(initial_registry(), [CF])
    keep, drop = filter_false_positives(FORWARDS + [CASH, UnmatchedHolding("Total investments")], reg)
    assert keep == [CASH]
    assert len(drop) == 4


def test_partition_batches():
    assert partition_batches(list(range(5)), 2) == [[0, 1], [2, 3], [4]]
    assert partition_batches([], 3) == []
    with pytest.raises(ValueError):
        partition_batches([1], 0)


def test_holding_text():
    assert holding_text(FORWARDS[0]) == "Bought EUR Sold USD at 0.93035372 11/06/2024 | -282515"
    assert holding_text(UnmatchedHolding("x", market_value=1.5)) == "x | 1.5"
    assert holding_text(UnmatchedHolding("x")) == "x"


def test_suggest_batch_with_mock():
    out, note = suggest_batch(FORWARDS, initial_registry(), [], MockBackend())
    assert note is None
    assert [s.name for s in out] == ["Currency Forward"]


def test_suggest_batch_reports_backend_failure():
    assert suggest_batch(FORWARDS, initial_registry(), [], Down()) == ([], "backend unavailable: down")
    with pytest.raises(ValueError):
        suggest_batch([], initial_registry(), [], MockBackend())


def test_suggest_batch_drops_unparseable():
    class Reply:
        name = "reply"

        def complete(self, prompt):
            return json.dumps({"suggestions": [CF.to_dict(), {"name": "X", "suggested_schema": "nope",
                                                               "example": "x"}]})

    out, note = suggest_batch(FORWARDS, initial_registry(), [], Reply())
    assert out == [CF] and note == "1 unparseable suggestion(s) dropped"


def test_pool_dedups_near_duplicates():
    pool = SuggestionPool(0.9)
    pool.extend([CF, CF, SchemaSuggestion("Currency Forwards", CF.suggested_schema, "x"),
                 family("Warrant", "w")])
    assert pool.unique == 2 and pool.total == 4 and pool.collisions == 2
    assert pool.counts == [3, 1]


def test_pool_keeps_distinct_schemas_apart():
    pool = SuggestionPool(0.9)
    pool.extend([family("Bank Loan", "a"), SchemaSuggestion("Bank Loan", json.dumps({"title": "Bank Loan"}), "a")])
    assert pool.unique == 2


def test_cluster_suggestions_falls_back_to_singletons():
    assert cluster_suggestions(["a", "b"], Down()) == ([[0], [1]], "clustering unavailable: down")
    assert cluster_suggestions(["only"], Down()) == ([[0]], None)

    class Bad:
        name = "bad"

        def complete(self, prompt):
            return json.dumps({"clusters": [[0], [0]]})

    assert cluster_suggestions(["a", "b"], Bad())[1] == "clustering is not a partition of the names"


def test_aggregate_prefers_frequency_then_fields():
    rich = family("Currency Forward", FORWARDS[0].description)
    thin = SchemaSuggestion("Currency Forward Contract",
                            json.dumps({"title": "Currency Forward Contract", "type": "object",
                                        "properties": {"description": {"type": "string"}}}), FORWARDS[1].description)
    agg = aggregate_and_select([thin, rich, rich], 0.9, FORWARDS, MockBackend())
    assert [s.name for s in agg.selected] == ["Currency Forward"]
    assert agg.collisions == 1 and agg.frequencies == [1, 2]
    assert agg.clusters == [[0, 1]]


def test_aggregate_sends_ties_to_review():
    a = SchemaSuggestion("Currency Forward", json.dumps({"title": "Currency Forward", "properties": {
        "pair": {"type": "string"}}}), FORWARDS[0].description)
    b = SchemaSuggestion("Currency Forward Deal", json.dumps({"title": "Currency Forward Deal", "properties": {
        "rate": {"type": "number"}}}), FORWARDS[1].description)
    agg = aggregate_and_select([a, b], 0.9, FORWARDS, MockBackend())
    assert agg.selected == []
    assert [r["id"] for r in agg.review] == [review_id(a), review_id(b)]
    assert all(r["status"] == "pending" for r in agg.review)


def test_aggregate_requires_coverage():
    stray = family("Warrant", "Zzyzx Warrant 2031")
    agg = aggregate_and_select([stray], 0.9, FORWARDS, MockBackend())
    assert agg.selected == [] and agg.dropped == [stray]


def test_best_match_score():
    assert best_match_score(FORWARDS[0].description, [CF]) == 100.0
    assert best_match_score("x", []) == 0.0


def test_reextract_after_update():
    reg = update_schema(initial_registry(), [CF])
    out = reextract(FORWARDS + [CASH], reg, MockBackend(), workers=4)
    assert [h.class_name if h else None for h in out] == ["Currency Forward"] * 3 + [None]
    assert out[0].source == ("d", 2)


def test_loop_with_mock_resolves_forwards():
    final, trace = refinement_loop(FORWARDS + [CASH], initial_registry(), RefinementConfig(), MockBackend())
    assert "Currency Forward" in final
    assert trace.registries[0].version == 0 and trace.registries[-1] is final
    assert [r.h_size for r in trace.records] == sorted((r.h_size for r in trace.records), reverse=True)
    assert {h.description for h, _ in trace.resolved} == {f.description for f in FORWARDS}
    # the lone cash row earns only a loosely named variant that no row validates under
    assert [r.selected for r in trace.records] == [["Currency Forward", "Cash Holding"], []]
    assert trace.remaining == [CASH]
    assert trace.stop_reason == "no schema changes selected"


def test_loop_stops_when_nothing_is_unmatched():
    _, trace = refinement_loop([], initial_registry(), RefinementConfig(), MockBackend())
    assert trace.stop_reason == "no unmatched holdings" and trace.iterations == 0


def test_loop_honours_max_iterations():
    holdings = [UnmatchedHolding(f"Zorb{i} Corp Warrant {2030 + i}", market_value=1.0) for i in range(3)]
    _, trace = refinement_loop(holdings, initial_registry(), RefinementConfig(max_iterations=1), MockBackend())
    assert trace.iterations == 1


def test_loop_survives_backend_outage():
    final, trace = refinement_loop(FORWARDS, initial_registry(), RefinementConfig(), Down())
    assert final == initial_registry()
    assert trace.stop_reason == "no schema changes selected"
    assert trace.records[0].batch_errors == ["batch 0: backend unavailable: down"]


def test_suggestion_report_counts():
    holdings = FORWARDS + [CASH]
    _, trace = refinement_loop(holdings, initial_registry(), RefinementConfig(), MockBackend())
    report = suggestion_report(trace, holdings, 10)
    assert report.emitted == trace.pool.total
    assert report.total_unique == trace.pool.unique
    assert 0 <= report.utilized <= report.total_unique
    assert report.coverage.count >= 3
    assert report.to_dict()["batch_size"] == 10
