"""Schema refinement: suggestion batching, aggregation and the iterative update loop."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence, TypeVar

from rapidfuzz import fuzz, process
from rapidfuzz.distance import Levenshtein

from .agents import extract
from .ingest import PageRecord
from .llm.backends import Backend, BackendUnavailable
from .llm.prompts import build_cluster_prompt, build_recommender_prompt
from .llm.structured import CLUSTERS, SUGGESTIONS, StructuredRequest, complete_structured, dumps
from .metrics import SuggestionReport, coverage, diversity
from .schema import (
    OTHER,
    Holding,
    HoldingValidationError,
    SchemaError,
    SchemaRegistry,
    SchemaSuggestion,
    UnmatchedHolding,
    class_from_suggestion,
    update_schema,
    validate_holding,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class RefinementConfig:
    batch_size: int = 10
    max_iterations: int = 10
    dedup_similarity: float = 0.9
    coverage_threshold: float = 70.0
    use_previous: bool = True
    workers: int = 1

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0.0 <= self.dedup_similarity <= 1.0:
            raise ValueError("dedup_similarity must be in [0, 1]")
        if not 0.0 <= self.coverage_threshold <= 100.0:
            raise ValueError("coverage_threshold must be in [0, 100]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


# --------------------------------------------------------------------------
# false-positive filtering

SPURIOUS_PATTERNS: tuple[re.Pattern[str], ...] = tuple(
    re.compile(p, re.IGNORECASE)
    for p in (
        r"^(?:sub[- ]?)?totals?\b",
        r"\btotal (?:net )?(?:investments?|assets|portfolio|holdings|value)\b",
        r"^(?:description|holdings?|security|securities|investments?|market value|quantity|nominal|"
        r"% of net assets|percentage of net assets|fair value)$",
        r"^(?:\*+|†|‡|\(\w\)|\d+\))\s",
        r"^(?:see|refer to) (?:note|the accompanying)",
        r"\bof net assets\b",
        r"^(?:portfolio|schedule) of investments\b",
    )
)


def is_spurious(description: str) -> bool:
    """Subtotal, header and footnote lines that are not holdings."""
    text = description.strip()
    return any(p.search(text) for p in SPURIOUS_PATTERNS)


def filter_false_positives(
    candidates: Sequence[UnmatchedHolding], registry: SchemaRegistry
) -> tuple[list[UnmatchedHolding], list[UnmatchedHolding]]:
    """Split candidates into (true positives, false positives).

    A candidate is a false positive when it matches the spurious-row rules or
    when its suggested name maps to an existing class it validates under.
    """
    keep: list[UnmatchedHolding] = []
    drop: list[UnmatchedHolding] = []
    for item in candidates:
        if is_spurious(item.description):
            drop.append(item)
            continue
        cls = registry.lookup(item.name) if item.name and item.name != OTHER else None
        if cls is not None and cls.name != OTHER:
            try:
                validate_holding({"description": item.description, "market_value": item.market_value}, cls)
            except HoldingValidationError:
                pass
            else:
                drop.append(item)
                continue
        keep.append(item)
    return keep, drop


def partition_batches(items: Sequence[T], batch_size: int) -> list[list[T]]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [list(items[i:i + batch_size]) for i in range(0, len(items), batch_size)]


# --------------------------------------------------------------------------
# suggestion


def _valid_suggestion(s: SchemaSuggestion) -> bool:
    if not (s.name.strip() and s.suggested_schema.strip() and s.example.strip()):
        return False
    try:
        class_from_suggestion(s, 0)
    except SchemaError:
        return False
    return True


def suggest_batch(
    batch: Sequence[UnmatchedHolding],
    registry: SchemaRegistry,
    previous: Sequence[SchemaSuggestion],
    backend: Backend,
    max_retries: int = 3,
) -> tuple[list[SchemaSuggestion], str | None]:
    """Suggestions for one batch plus an error note when the backend gave up."""
    if not batch:
        raise ValueError("batch must be non-empty")
    prompt = build_recommender_prompt(registry, batch, previous)
    try:
        response = complete_structured(backend, StructuredRequest(prompt, dumps(SUGGESTIONS), max_retries))
    except BackendUnavailable as exc:
        return [], f"backend unavailable: {exc}"
    if not response.ok:
        return [], f"suggestions failed validation: {response.errors_seen[-1]}"
    out = [SchemaSuggestion.from_dict(item) for item in response.parsed["suggestions"]]
    valid = [s for s in out if _valid_suggestion(s)]
    note = None if len(valid) == len(out) else f"{len(out) - len(valid)} unparseable suggestion(s) dropped"
    return valid, note


def suggest(
    batch: Sequence[UnmatchedHolding],
    registry: SchemaRegistry,
    previous: Sequence[SchemaSuggestion],
    backend: Backend,
) -> list[SchemaSuggestion]:
    return suggest_batch(batch, registry, previous, backend)[0]


# --------------------------------------------------------------------------
# aggregation


def canonical_schema_text(schema: str) -> str:
    try:
        return json.dumps(json.loads(schema), sort_keys=True, separators=(",", ":"))
    except json.JSONDecodeError:
        return schema


def field_count(s: SchemaSuggestion) -> int:
    try:
        return len(json.loads(s.suggested_schema).get("properties") or {})
    except (json.JSONDecodeError, AttributeError):
        return 0


class SuggestionPool:
    """Greedy leader clustering of near-duplicate suggestions.

    Two suggestions are duplicates when both their names and their canonical
    schema texts have normalized Levenshtein similarity >= ``threshold``.
    """

    def __init__(self, threshold: float = 0.9) -> None:
        self.threshold = threshold
        self.leaders: list[SchemaSuggestion] = []
        self.counts: list[int] = []
        self._schemas: list[str] = []
        self._exact: dict[tuple[str, str], int] = {}
        self.total = 0

    def add(self, s: SchemaSuggestion) -> tuple[int, bool]:
        self.total += 1
        schema = canonical_schema_text(s.suggested_schema)
        key = (s.name, schema)
        hit = self._exact.get(key)
        if hit is None:
            for i, leader in enumerate(self.leaders):
                if Levenshtein.normalized_similarity(s.name, leader.name, score_cutoff=self.threshold) and \
                        Levenshtein.normalized_similarity(schema, self._schemas[i], score_cutoff=self.threshold):
                    hit = i
                    break
        if hit is not None:
            self.counts[hit] += 1
            self._exact.setdefault(key, hit)
            return hit, False
        self.leaders.append(s)
        self.counts.append(1)
        self._schemas.append(schema)
        self._exact[key] = len(self.leaders) - 1
        return len(self.leaders) - 1, True

    def extend(self, items: Iterable[SchemaSuggestion]) -> None:
        for s in items:
            self.add(s)

    @property
    def unique(self) -> int:
        return len(self.leaders)

    @property
    def collisions(self) -> int:
        return self.total - self.unique


@dataclass
class Aggregation:
    selected: list[SchemaSuggestion]
    collisions: int
    unique: list[SchemaSuggestion] = field(default_factory=list)
    frequencies: list[int] = field(default_factory=list)
    clusters: list[list[int]] = field(default_factory=list)
    review: list[dict[str, Any]] = field(default_factory=list)
    dropped: list[SchemaSuggestion] = field(default_factory=list)
    error: str | None = None

    def __iter__(self):
        # unpacks as (selected, collisions)
        return iter((self.selected, self.collisions))


def cluster_suggestions(names: Sequence[str], backend: Backend, max_retries: int = 3) -> tuple[list[list[int]], str | None]:
    """Ask the backend to group names; falls back to singletons on any failure."""
    singletons = [[i] for i in range(len(names))]
    if len(names) < 2:
        return singletons, None
    try:
        response = complete_structured(
            backend, StructuredRequest(build_cluster_prompt(names), dumps(CLUSTERS), max_retries)
        )
    except BackendUnavailable as exc:
        return singletons, f"clustering unavailable: {exc}"
    if not response.ok:
        return singletons, "clustering failed validation"
    clusters = [list(c) for c in response.parsed["clusters"] if c]
    flat = sorted(i for c in clusters for i in c)
    if flat != list(range(len(names))):
        return singletons, "clustering is not a partition of the names"
    return clusters, None


def review_id(s: SchemaSuggestion) -> str:
    digest = hashlib.sha256(f"{s.name}\n{canonical_schema_text(s.suggested_schema)}".encode("utf-8"))
    return digest.hexdigest()[:12]


def best_match_score(text: str, suggestions: Sequence[SchemaSuggestion]) -> float:
    """max over suggestions of indel similarity with the example or the name."""
    if not suggestions:
        return 0.0
    choices = [s.example for s in suggestions] + [s.name for s in suggestions]
    hit = process.extractOne(text, choices, scorer=fuzz.ratio)
    return float(hit[1]) if hit else 0.0


def _matches_any(s: SchemaSuggestion, descriptions: Sequence[str], threshold: float) -> bool:
    for probe in (s.example, s.name):
        if process.extractOne(probe, descriptions, scorer=fuzz.ratio, score_cutoff=threshold):
            return True
    return False


def aggregate_and_select(
    suggestions: Sequence[SchemaSuggestion],
    dedup_similarity: float,
    unmatched: Sequence[UnmatchedHolding],
    backend: Backend,
    coverage_threshold: float = 70.0,
) -> Aggregation:
    """Deduplicate, cluster, select one suggestion per cluster, and validate the choice.

    Clusters whose best candidates tie on both frequency and field count go
    to manual review instead of being guessed.
    """
    if not suggestions:
        return Aggregation([], 0)
    pool = SuggestionPool(dedup_similarity)
    pool.extend(suggestions)
    unique, freq = pool.leaders, pool.counts
    clusters, error = cluster_suggestions([s.name for s in unique], backend)
    picked: list[SchemaSuggestion] = []
    review: list[dict[str, Any]] = []
    for members in clusters:
        ranked = sorted(members, key=lambda i: (-freq[i], -field_count(unique[i]), i))
        top = ranked[0]
        tied = [i for i in ranked if freq[i] == freq[top] and field_count(unique[i]) == field_count(unique[top])]
        if len(tied) > 1:
            cluster = [unique[i].to_dict() for i in members]
            for i in tied:
                review.append({"id": review_id(unique[i]), "suggestion": unique[i].to_dict(),
                               "cluster": cluster, "status": "pending"})
            continue
        picked.append(unique[top])
    descriptions = [h.description for h in unmatched]
    selected = [s for s in picked if _matches_any(s, descriptions, coverage_threshold)]
    dropped = [s for s in picked if s not in selected]
    return Aggregation(selected, pool.collisions, list(unique), list(freq), clusters, review, dropped, error)


# --------------------------------------------------------------------------
# the loop


def format_amount(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(value)


def holding_text(h: UnmatchedHolding) -> str:
    if h.market_value is None:
        return h.description
    return f"{h.description} | {format_amount(h.market_value)}"


@dataclass
class IterationRecord:
    iteration: int
    h_size: int
    filtered: int
    batch_sizes: list[int]
    emitted: int
    unique: list[dict[str, Any]]
    collisions: int
    selected: list[str]
    registry_version: int
    newly_matched: int
    matched_by_class: dict[str, int]
    recovered_value: float
    h_after: int
    pending_review: int
    batch_errors: list[str]
    unique_curve: list[int]
    stop_reason: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class RefinementTrace:
    records: list[IterationRecord] = field(default_factory=list)
    emitted: list[SchemaSuggestion] = field(default_factory=list)
    pool: SuggestionPool = field(default_factory=SuggestionPool)
    resolved: list[tuple[UnmatchedHolding, Holding]] = field(default_factory=list)
    review: list[dict[str, Any]] = field(default_factory=list)
    false_positives: list[UnmatchedHolding] = field(default_factory=list)
    remaining: list[UnmatchedHolding] = field(default_factory=list)
    curve: list[int] = field(default_factory=list)
    registries: list[SchemaRegistry] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def unique_suggestions(self) -> list[SchemaSuggestion]:
        return list(self.pool.leaders)

    def match_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for _, holding in self.resolved:
            counts[holding.class_name] = counts.get(holding.class_name, 0) + 1
        return counts

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True, default=str) + "\n" for r in self.records)


def _map(fn: Callable[[Any], T], items: Sequence[Any], workers: int) -> list[T]:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def reextract(
    holdings: Sequence[UnmatchedHolding], registry: SchemaRegistry, backend: Backend, workers: int = 1
) -> list[Holding | None]:
    """Re-run extraction on each unmatched holding; None where it stays unmatched."""

    def one(h: UnmatchedHolding) -> Holding | None:
        doc, page = h.source or ("", 1)
        record = PageRecord(doc_id=doc, page_no=page, blocks=(holding_text(h),))
        portfolio = extract(record, registry, backend)
        if len(portfolio.holdings) == 1 and not portfolio.other_instruments:
            return portfolio.holdings[0]
        return None

    return _map(one, holdings, workers)


def refinement_loop(
    unmatched: Sequence[UnmatchedHolding],
    registry: SchemaRegistry,
    cfg: RefinementConfig,
    backend: Backend,
) -> tuple[SchemaRegistry, RefinementTrace]:
    """Iterate suggest -> aggregate -> update -> re-extract until nothing changes.

    Stops when no unmatched holdings remain, when an iteration selects no
    schema change, or after ``cfg.max_iterations`` iterations.
    """
    trace = RefinementTrace(pool=SuggestionPool(cfg.dedup_similarity), registries=[registry])
    current = list(unmatched)
    previous: list[SchemaSuggestion] = []
    seen_previous: set[tuple[str, str]] = set()
    if not current:
        trace.stop_reason = "no unmatched holdings"
        return registry, trace

    for iteration in range(cfg.max_iterations):
        h_size = len(current)
        current, dropped = filter_false_positives(current, registry)
        trace.false_positives.extend(dropped)
        if not current:
            trace.stop_reason = "no unmatched holdings"
            break
        batches = partition_batches(current, cfg.batch_size)
        frozen_previous = list(previous) if cfg.use_previous else []
        results = _map(lambda b: suggest_batch(b, registry, frozen_previous, backend), batches, cfg.workers)
        emitted: list[SchemaSuggestion] = []
        errors: list[str] = []
        curve: list[int] = []
        for index, (items, err) in enumerate(results):
            emitted.extend(items)
            trace.pool.extend(items)
            curve.append(trace.pool.unique)
            if err:
                errors.append(f"batch {index}: {err}")
        trace.emitted.extend(emitted)
        trace.curve.extend(curve)

        agg = aggregate_and_select(emitted, cfg.dedup_similarity, current, backend, cfg.coverage_threshold)
        trace.review.extend(agg.review)
        if agg.error:
            errors.append(agg.error)
        for s in agg.unique:
            key = (s.name, canonical_schema_text(s.suggested_schema))
            if key not in seen_previous:
                seen_previous.add(key)
                previous.append(s)

        stop = None
        matched: list[tuple[UnmatchedHolding, Holding]] = []
        if not agg.selected:
            stop = "no schema changes selected"
        else:
            updated = update_schema(registry, agg.selected)
            if updated.same_classes(registry):
                stop = "selected suggestions changed nothing"
            else:
                registry = updated
                trace.registries.append(registry)
                outcome = reextract(current, registry, backend, cfg.workers)
                matched = [(h, r) for h, r in zip(current, outcome) if r is not None]
                current = [h for h, r in zip(current, outcome) if r is None]
                trace.resolved.extend(matched)

        by_class: dict[str, int] = {}
        for _, holding in matched:
            by_class[holding.class_name] = by_class.get(holding.class_name, 0) + 1
        trace.records.append(IterationRecord(
            iteration=iteration,
            h_size=h_size,
            filtered=len(dropped),
            batch_sizes=[len(b) for b in batches],
            emitted=len(emitted),
            unique=[dict(s.to_dict(), frequency=f) for s, f in zip(agg.unique, agg.frequencies)],
            collisions=agg.collisions,
            selected=[s.name for s in agg.selected] if stop is None else [],
            registry_version=registry.version,
            newly_matched=len(matched),
            matched_by_class=dict(sorted(by_class.items())),
            recovered_value=sum(abs(h.market_value or 0.0) for h, _ in matched),
            h_after=len(current),
            pending_review=len(agg.review),
            batch_errors=errors,
            unique_curve=curve,
            stop_reason=stop,
        ))
        if stop is not None:
            trace.stop_reason = stop
            break
        if not current:
            trace.stop_reason = "no unmatched holdings"
            break
    else:
        trace.stop_reason = "max iterations reached"
    trace.remaining = current
    return registry, trace


# --------------------------------------------------------------------------
# reporting


def suggestion_class_name(s: SchemaSuggestion) -> str:
    """The class name ``s`` becomes once applied to a registry."""
    try:
        return class_from_suggestion(s, 0).name
    except SchemaError:
        return s.name


def suggestion_match_counts(trace: RefinementTrace) -> dict[SchemaSuggestion, int]:
    """Holdings resolved by each unique suggestion's class during the loop."""
    by_class = trace.match_counts()
    return {s: by_class.get(suggestion_class_name(s), 0) for s in trace.unique_suggestions}


def suggestion_report(
    trace: RefinementTrace, unmatched: Sequence[UnmatchedHolding], batch_size: int, coverage_threshold: float = 70.0
) -> SuggestionReport:
    unique = trace.unique_suggestions
    counts = suggestion_match_counts(trace)
    return SuggestionReport(
        batch_size=batch_size,
        coverage=coverage(unmatched, unique, coverage_threshold),
        total_unique=len(unique),
        utilized=sum(1 for s in unique if counts[s] >= 1),
        collisions=trace.pool.collisions,
        emitted=trace.pool.total,
        diversity=diversity(unique),
    )
