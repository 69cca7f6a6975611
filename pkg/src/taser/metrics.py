"""Evaluation kernels: string distances, detection, TAD, and suggestion-quality metrics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from rapidfuzz import fuzz
from rapidfuzz.distance import Indel, Levenshtein

from .agents import FundPortfolio, normalize_fund_name
from .ingest import CorpusLabel
from .schema import SchemaSuggestion, UnmatchedHolding


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance (insert, delete, substitute)."""
    return Levenshtein.distance(a, b)


def indel_similarity(a: str, b: str) -> float:
    """100 * (1 - indel(a, b) / (|a| + |b|)); 100 when both are empty."""
    if not a and not b:
        return 100.0
    return 100.0 * (1.0 - Indel.distance(a, b) / (len(a) + len(b)))


def f1_score(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


# --------------------------------------------------------------------------
# detection


@dataclass(frozen=True)
class DetectionReport:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    @property
    def accuracy(self) -> float:
        return _ratio(self.tp + self.tn, self.total)

    def to_dict(self) -> dict[str, Any]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "accuracy": self.accuracy, "no_data": self.total == 0}


def detection_metrics(
    preds: Iterable[tuple[tuple[str, int], bool]], labels: Sequence[CorpusLabel]
) -> DetectionReport:
    """Confusion counts over pages; a page is positive when any label lists it."""
    positives: dict[str, set[int]] = {}
    for label in labels:
        positives.setdefault(label.doc_id, set()).update(label.holdings_pages)
    tp = fp = fn = tn = 0
    for (doc_id, page_no), predicted in preds:
        if doc_id not in positives:
            raise KeyError(f"no label for document {doc_id!r}")
        truth = page_no in positives[doc_id]
        if predicted and truth:
            tp += 1
        elif predicted:
            fp += 1
        elif truth:
            fn += 1
        else:
            tn += 1
    return DetectionReport(tp, fp, fn, tn)


# --------------------------------------------------------------------------
# extraction fidelity


@dataclass
class FundResult:
    doc_id: str
    fund_name: str
    ground_truth_nav: float
    declared_value: float

    @property
    def absolute_difference(self) -> float:
        return abs(self.declared_value - self.ground_truth_nav)

    def to_dict(self) -> dict[str, Any]:
        return {"doc_id": self.doc_id, "fund_name": self.fund_name, "ground_truth_nav": self.ground_truth_nav,
                "declared_value": self.declared_value, "absolute_difference": self.absolute_difference}


@dataclass
class ExtractionReport:
    funds: list[FundResult]
    unlabeled: list[dict[str, Any]] = field(default_factory=list)

    @property
    def total_absolute_difference(self) -> float:
        return math.fsum(f.absolute_difference for f in self.funds)

    @property
    def total_nav(self) -> float:
        return math.fsum(f.ground_truth_nav for f in self.funds)

    @property
    def unaccounted_pct(self) -> float:
        return 100.0 * _ratio(self.total_absolute_difference, self.total_nav)

    def to_dict(self) -> dict[str, Any]:
        return {"funds": [f.to_dict() for f in self.funds], "unlabeled": self.unlabeled,
                "total_absolute_difference": self.total_absolute_difference, "total_nav": self.total_nav,
                "unaccounted_pct": self.unaccounted_pct}


def tad(funds: Sequence[FundPortfolio], labels: Sequence[CorpusLabel]) -> ExtractionReport:
    """Join funds to labels and sum per-fund |declared - NAV|.

    Funds join on (doc_id, normalized fund name), falling back to page
    overlap. Several funds joined to one label add up; a label with no fund
    counts as declared 0; funds with no label are listed separately.
    """
    by_name = {(l.doc_id, normalize_fund_name(l.fund_name)): i for i, l in enumerate(labels)}
    declared = [0.0] * len(labels)
    unlabeled: list[dict[str, Any]] = []
    for fund in funds:
        index = by_name.get((fund.doc_id, normalize_fund_name(fund.fund_name)))
        if index is None:
            overlap = [
                (len(set(fund.pages) & set(l.holdings_pages)), -i)
                for i, l in enumerate(labels)
                if l.doc_id == fund.doc_id
            ]
            best = max(overlap, default=(0, 0))
            index = -best[1] if best[0] > 0 else None
        if index is None:
            unlabeled.append({"doc_id": fund.doc_id, "fund_name": fund.fund_name,
                              "pages": list(fund.pages), "declared_value": fund.declared_value})
            continue
        declared[index] += fund.declared_value
    results = [FundResult(l.doc_id, l.fund_name, l.net_asset_value, declared[i]) for i, l in enumerate(labels)]
    return ExtractionReport(results, unlabeled)


def tad_from_values(declared: Sequence[float], truth: Sequence[float]) -> float:
    if len(declared) != len(truth):
        raise ValueError("declared and truth lengths differ")
    return math.fsum(abs(d - t) for d, t in zip(declared, truth))


# --------------------------------------------------------------------------
# suggestion quality


@dataclass(frozen=True)
class Coverage:
    count: int
    pct: float
    nav_pct: float


def coverage(
    unmatched: Sequence[UnmatchedHolding], suggestions: Sequence[SchemaSuggestion], threshold: float = 70.0
) -> Coverage:
    """Share of holdings whose description resembles some suggestion's example or name."""
    if not unmatched:
        return Coverage(0, 0.0, 0.0)
    probes = sorted({s.example for s in suggestions} | {s.name for s in suggestions})
    covered = 0
    covered_value = total_value = 0.0
    for h in unmatched:
        value = abs(h.market_value or 0.0)
        total_value += value
        if probes and _best(h.description, probes, threshold):
            covered += 1
            covered_value += value
    return Coverage(covered, 100.0 * covered / len(unmatched), 100.0 * _ratio(covered_value, total_value))


def _best(text: str, probes: Sequence[str], threshold: float) -> bool:
    from rapidfuzz import process

    return process.extractOne(text, probes, scorer=fuzz.ratio, score_cutoff=threshold) is not None


@dataclass(frozen=True)
class Spread:
    avg: float
    min: float
    max: float


@dataclass(frozen=True)
class Diversity:
    name: Spread
    schema: Spread
    insufficient: bool = False


def _spread(values: Sequence[str]) -> Spread:
    dists = [levenshtein(a, b) for a, b in itertools.combinations(values, 2)]
    return Spread(sum(dists) / len(dists), float(min(dists)), float(max(dists)))


def diversity(suggestions: Sequence[SchemaSuggestion]) -> Diversity:
    """Average/min/max pairwise Levenshtein distance over names and over schemas."""
    if len(suggestions) < 2:
        zero = Spread(0.0, 0.0, 0.0)
        return Diversity(zero, zero, insufficient=True)
    return Diversity(_spread([s.name for s in suggestions]), _spread([s.suggested_schema for s in suggestions]))


def collision_rate(total_emitted: int, unique: int) -> float:
    if unique > total_emitted:
        raise ValueError("unique cannot exceed total emitted")
    return 100.0 * _ratio(total_emitted - unique, total_emitted)


def utilization(selected: Sequence[Any], match_counts: Mapping[Any, int]) -> float:
    """Percent of ``selected`` with at least one match (0 for an empty list)."""
    if not selected:
        return 0.0
    used = sum(1 for s in selected if match_counts.get(s, 0) >= 1)
    return 100.0 * used / len(selected)


def utilization_from_counts(total: int, utilized: int) -> float:
    return 100.0 * _ratio(utilized, total)


def lorenz_points(values: Sequence[float]) -> list[tuple[float, float]]:
    """Cumulative value share of the top-k values, k = 1..N, as (k/N, share)."""
    if any(v < 0 for v in values):
        raise ValueError("values must be non-negative")
    n = len(values)
    if n == 0:
        return []
    total = math.fsum(values)
    ordered = sorted(values, reverse=True)
    points = []
    running = 0.0
    for k, v in enumerate(ordered, start=1):
        running += v
        share = k / n if total == 0 else running / total
        points.append((k / n, share))
    return points


@dataclass
class SuggestionReport:
    batch_size: int
    coverage: Coverage
    total_unique: int
    utilized: int
    collisions: int
    emitted: int
    diversity: Diversity

    @property
    def utilization_pct(self) -> float:
        return utilization_from_counts(self.total_unique, self.utilized)

    @property
    def collision_rate_pct(self) -> float:
        return collision_rate(self.emitted, self.total_unique)

    def to_dict(self) -> dict[str, Any]:
        return {
            "batch_size": self.batch_size,
            "coverage_count": self.coverage.count,
            "coverage_pct": round(self.coverage.pct, 1),
            "coverage_nav_pct": round(self.coverage.nav_pct, 2),
            "total_unique": self.total_unique,
            "utilized": self.utilized,
            "utilization_pct": round(self.utilization_pct, 1),
            "collisions": self.collisions,
            "emitted": self.emitted,
            "collision_rate_pct": round(self.collision_rate_pct, 1),
            "diversity_name": [round(self.diversity.name.avg, 2), self.diversity.name.min, self.diversity.name.max],
            "diversity_schema": [round(self.diversity.schema.avg, 2), self.diversity.schema.min,
                                 self.diversity.schema.max],
        }
