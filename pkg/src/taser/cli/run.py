"""Pipeline stages behind the command-line tool, and the artifact tree they write."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence, TypeVar

from ..agents import DetectionResult, FundPortfolio, detect, extract, merge_funds, slugify
from ..ingest import CorpusLabel, PageRecord, load_corpus, load_labels
from ..llm.backends import Backend, LiveBackend, RecordingBackend, ScriptedBackend, prompt_digest
from ..llm.mock import MockBackend
from ..llm.prompts import PromptStrategy
from ..metrics import DetectionReport, ExtractionReport, detection_metrics, lorenz_points, tad
from ..refine import RefinementConfig, RefinementTrace, refinement_loop, suggestion_report
from ..schema import (
    Portfolio,
    SchemaRegistry,
    UnmatchedHolding,
    initial_registry,
    parse_registry,
    portfolio_to_dict,
    serialize_registry,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BACKEND = 3

# share of pages whose backend calls may give out before the run fails
BACKEND_FAILURE_LIMIT = 0.10


class InputError(Exception):
    """Bad or missing input; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    corpus_path: str | None = None
    labels_path: str | None = None
    registry_path: str | None = None
    backend: str = "mock"
    transcript: str | None = None
    base_url: str | None = None
    model: str | None = None
    strategy: str = PromptStrategy.FULL_SCHEMA.value
    workers: int = 20
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    output_dir: str = "runs"
    dump_prompts: bool = False
    format: str = "json"
    record: str | None = None

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise InputError("--workers must be >= 1")
        if self.backend not in ("mock", "scripted", "live"):
            raise InputError(f"unknown backend {self.backend!r}")
        if self.format not in ("json", "csv"):
            raise InputError(f"unknown format {self.format!r}")
        try:
            PromptStrategy(self.strategy)
        except ValueError:
            raise InputError(f"unknown strategy {self.strategy!r}") from None

    def echo(self) -> dict[str, Any]:
        """The configuration as written into the run directory.

        Worker count, output location and the recording path are left out:
        they change wall time and side files, never results.
        """
        data = asdict(self)
        for key in ("workers", "output_dir", "record"):
            data.pop(key)
        data["refinement"].pop("workers")
        return data


# --------------------------------------------------------------------------
# helpers


def parallel_map(fn: Callable[[Any], T], items: Sequence[Any], workers: int) -> list[T]:
    """Order-preserving map over a bounded thread pool."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def file_digest(path: str | None, what: str = "file") -> str | None:
    if not path:
        return None
    if not Path(path).is_file():
        raise InputError(f"{what} not found: {path}")
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def run_id(command: str, cfg: RunConfig, extra: Mapping[str, Any] | None = None) -> str:
    inputs = {
        "corpus": file_digest(cfg.corpus_path, "corpus"),
        "labels": file_digest(cfg.labels_path, "labels"),
        "registry": file_digest(cfg.registry_path, "registry"),
        "transcript": file_digest(cfg.transcript, "transcript"),
    }
    blob = json.dumps({"command": command, "config": cfg.echo(), "inputs": inputs, "extra": extra or {}},
                      sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def dumps_json(value: Any) -> str:
    return json.dumps(value, indent=2, sort_keys=True, ensure_ascii=False, default=str) + "\n"


def csv_text(rows: Iterable[Mapping[str, Any]], columns: Sequence[str] | None = None) -> str:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(v) for k, v in row.items()})
    return buf.getvalue()


def _cell(value: Any) -> Any:
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(value, sort_keys=True)
    return value


class ArtifactSink:
    """Serialized writer for every file under one run directory."""

    def __init__(self, root: Path) -> None:
        self.root = root
        self._lock = threading.Lock()
        self.written: list[str] = []

    def write(self, relpath: str, text: str) -> Path:
        path = self.root / relpath
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
            self.written.append(relpath)
        return path

    def json(self, relpath: str, value: Any) -> Path:
        return self.write(relpath, dumps_json(value))

    def report(self, stem: str, value: Mapping[str, Any], rows: Sequence[Mapping[str, Any]], fmt: str) -> Path:
        if fmt == "csv":
            return self.write(f"{stem}.csv", csv_text(rows))
        return self.json(f"{stem}.json", value)


class PromptLog:
    """Backend wrapper that remembers every distinct prompt it forwards."""

    def __init__(self, inner: Backend) -> None:
        self.inner = inner
        self.name = inner.name
        self._prompts: dict[str, str] = {}
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            self._prompts.setdefault(prompt_digest(prompt), prompt)
        return self.inner.complete(prompt)

    def dump(self) -> str:
        with self._lock:
            items = sorted(self._prompts.items())
        return "".join(json.dumps({"prompt_sha256": k, "prompt": v}, ensure_ascii=False) + "\n" for k, v in items)


def make_backend(cfg: RunConfig) -> Backend:
    if cfg.backend == "mock":
        return MockBackend()
    if cfg.backend == "scripted":
        if not cfg.transcript:
            raise InputError("--backend scripted needs --transcript")
        try:
            return ScriptedBackend.from_file(cfg.transcript)
        except OSError as exc:
            raise InputError(f"cannot read transcript {cfg.transcript}: {exc.strerror}") from None
        except ValueError as exc:
            raise InputError(str(exc)) from None
    if not (cfg.base_url and cfg.model):
        raise InputError("--backend live needs --base-url and --model")
    try:
        return LiveBackend(cfg.base_url, cfg.model)
    except ValueError as exc:
        raise InputError(str(exc)) from None


class Session:
    """Backend, run directory and inputs shared by one command invocation."""

    def __init__(self, command: str, cfg: RunConfig, extra: Mapping[str, Any] | None = None) -> None:
        self.cfg = cfg
        self.command = command
        self.run_id = run_id(command, cfg, extra)
        self.sink = ArtifactSink(Path(cfg.output_dir) / self.run_id)
        backend = make_backend(cfg)
        self.recorder = RecordingBackend(backend) if cfg.record else None
        backend = self.recorder or backend
        self.prompt_log = PromptLog(backend) if cfg.dump_prompts else None
        self.backend: Backend = self.prompt_log or backend
        self.extra = dict(extra or {})
        self.pages_seen: set[tuple[str, int]] = set()
        self.failed_pages: set[tuple[str, int]] = set()

    def registry(self) -> SchemaRegistry:
        if not self.cfg.registry_path:
            return initial_registry()
        try:
            return parse_registry(Path(self.cfg.registry_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read registry {self.cfg.registry_path}: {exc.strerror}") from None
        except ValueError as exc:
            raise InputError(f"bad registry {self.cfg.registry_path}: {exc}") from None

    def corpus(self) -> list[PageRecord]:
        if not self.cfg.corpus_path:
            raise InputError("--corpus is required")
        if not Path(self.cfg.corpus_path).is_file():
            raise InputError(f"corpus not found: {self.cfg.corpus_path}")
        try:
            return load_corpus(self.cfg.corpus_path)
        except ValueError as exc:
            raise InputError(f"{self.cfg.corpus_path}: {exc}") from None

    def labels(self) -> list[CorpusLabel] | None:
        if not self.cfg.labels_path:
            return None
        if not Path(self.cfg.labels_path).is_file():
            raise InputError(f"labels not found: {self.cfg.labels_path}")
        try:
            return load_labels(self.cfg.labels_path)
        except ValueError as exc:
            raise InputError(f"{self.cfg.labels_path}: {exc}") from None

    def note_failures(self, outcomes: Iterable[tuple[tuple[str, int], str | None]]) -> None:
        for key, error in outcomes:
            self.pages_seen.add(key)
            if error and error.startswith("backend unavailable"):
                self.failed_pages.add(key)

    def finish(self) -> int:
        self.sink.json("config.json", {"command": self.command, "config": self.cfg.echo(), "extra": self.extra})
        if self.prompt_log is not None:
            self.sink.write("prompts.jsonl", self.prompt_log.dump())
        if self.recorder is not None and self.cfg.record:
            self.recorder.save(self.cfg.record)
        if self.pages_seen and len(self.failed_pages) / len(self.pages_seen) > BACKEND_FAILURE_LIMIT:
            logger.error("backend unavailable on %d of %d pages", len(self.failed_pages), len(self.pages_seen))
            return EXIT_BACKEND
        return EXIT_OK


# --------------------------------------------------------------------------
# stages


DETECTION_COLUMNS = ("doc_id", "page_no", "strategy", "has_portfolio_table", "latency_ignored")


def detection_rows(results: Sequence[DetectionResult]) -> list[dict[str, Any]]:
    return [
        {"doc_id": r.page[0], "page_no": r.page[1], "strategy": r.strategy.value,
         "has_portfolio_table": str(r.has_portfolio_table).lower(), "latency_ignored": ""}
        for r in results
    ]


def detection_report(results: Sequence[DetectionResult], labels: Sequence[CorpusLabel] | None) -> dict[str, Any]:
    if labels is None:
        return {"no_labels": True, "no_data": not results, "pages": len(results),
                "positives": sum(r.has_portfolio_table for r in results)}
    labeled = {l.doc_id for l in labels}
    preds = [(r.page, r.has_portfolio_table) for r in results if r.page[0] in labeled]
    report: DetectionReport = detection_metrics(preds, labels)
    out = report.to_dict()
    out["unlabeled_pages"] = len(results) - len(preds)
    out["errors"] = sum(1 for r in results if r.error)
    return out


def run_detection(session: Session, pages: Sequence[PageRecord], strategy: PromptStrategy,
                  registry: SchemaRegistry) -> list[DetectionResult]:
    results = parallel_map(lambda p: detect(p, strategy, registry, session.backend), pages, session.cfg.workers)
    session.note_failures((r.page, r.error) for r in results)
    return results


def write_detection(session: Session, results: Sequence[DetectionResult], labels: Sequence[CorpusLabel] | None,
                    prefix: str = "") -> dict[str, Any]:
    sink = session.sink
    sink.write(f"{prefix}detection.csv", csv_text(detection_rows(results), DETECTION_COLUMNS))
    errors = [{"doc_id": r.page[0], "page_no": r.page[1], "error": r.error} for r in results if r.error]
    if errors:
        sink.write(f"{prefix}detection_errors.jsonl", "".join(json.dumps(e, sort_keys=True) + "\n" for e in errors))
    reasons = [{"doc_id": r.page[0], "page_no": r.page[1], "chain_of_thought": r.chain_of_thought}
               for r in results if r.chain_of_thought is not None]
    if reasons:
        sink.write(f"{prefix}chain_of_thought.jsonl",
                   "".join(json.dumps(e, sort_keys=True, ensure_ascii=False) + "\n" for e in reasons))
    report = detection_report(results, labels)
    session.sink.report(f"{prefix}detection_report", report, [report], session.cfg.format)
    return report


@dataclass
class Extraction:
    pages: list[tuple[PageRecord, Portfolio]]
    funds: list[FundPortfolio]
    unmatched: list[UnmatchedHolding]
    report: ExtractionReport | None


def extract_positive(session: Session, pages: Sequence[PageRecord], detections: Sequence[DetectionResult],
                     registry: SchemaRegistry, reuse: bool = True) -> list[tuple[PageRecord, Portfolio]]:
    """Portfolios for pages detected positive, reusing combined detect+extract output when ``reuse``."""
    todo = [(p, d) for p, d in zip(pages, detections) if d.has_portfolio_table]

    def one(item: tuple[PageRecord, DetectionResult]) -> Portfolio:
        page, det = item
        if reuse and det.portfolio is not None:
            return det.portfolio
        return extract(page, registry, session.backend)

    portfolios = parallel_map(one, todo, session.cfg.workers)
    session.note_failures((page.key, p.errors[0] if p.errors else None) for (page, _), p in zip(todo, portfolios))
    return [(page, portfolio) for (page, _), portfolio in zip(todo, portfolios)]


def build_extraction(pages: list[tuple[PageRecord, Portfolio]], labels: Sequence[CorpusLabel] | None) -> Extraction:
    funds = merge_funds(pages)
    unmatched = [o for f in funds for o in f.portfolio.other_instruments]
    report = tad(funds, labels) if labels is not None else None
    return Extraction(pages, funds, unmatched, report)


def fund_document(fund: FundPortfolio, registry: SchemaRegistry) -> dict[str, Any]:
    return {
        "doc_id": fund.doc_id,
        "fund_name": fund.fund_name,
        "pages": list(fund.pages),
        "declared_value": fund.declared_value,
        "unmatched_value": fund.unmatched_value,
        "registry_version": registry.version,
        "portfolio": portfolio_to_dict(fund.portfolio, registry),
    }


def error_stack_text(unmatched: Iterable[UnmatchedHolding]) -> str:
    return "".join(json.dumps(u.to_dict(), sort_keys=True, ensure_ascii=False) + "\n" for u in unmatched)


def read_error_stack(path: str) -> list[UnmatchedHolding]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read error stack {path}: {exc.strerror}") from None
    out = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            out.append(UnmatchedHolding.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"{path} line {lineno}: {exc}") from None
    return out


def extraction_rows(report: ExtractionReport) -> list[dict[str, Any]]:
    rows = [f.to_dict() for f in report.funds]
    rows.append({"doc_id": "", "fund_name": "TOTAL", "ground_truth_nav": report.total_nav,
                 "declared_value": sum(f.declared_value for f in report.funds),
                 "absolute_difference": report.total_absolute_difference})
    return rows


def write_extraction(session: Session, result: Extraction, registry: SchemaRegistry, prefix: str = "") -> None:
    sink = session.sink
    used: dict[tuple[str, str], int] = {}
    for fund in result.funds:
        slug = slugify(fund.fund_name)
        n = used.get((fund.doc_id, slug), 0) + 1
        used[(fund.doc_id, slug)] = n
        name = slug if n == 1 else f"{slug}-{n}"
        sink.json(f"{prefix}portfolios/{slugify(fund.doc_id)}/{name}.json", fund_document(fund, registry))
    sink.write(f"{prefix}error_stack.jsonl", error_stack_text(result.unmatched))
    if result.report is not None:
        sink.report(f"{prefix}extraction_report", result.report.to_dict(), extraction_rows(result.report),
                    session.cfg.format)


def write_registry_chain(session: Session, registries: Sequence[SchemaRegistry]) -> None:
    for reg in registries:
        session.sink.write(f"registry/v{reg.version:04d}.json", serialize_registry(reg) + "\n")


def write_trace(session: Session, trace: RefinementTrace, unmatched: Sequence[UnmatchedHolding],
                batch_size: int, prefix: str = "") -> dict[str, Any]:
    sink = session.sink
    sink.write(f"{prefix}trace.jsonl", trace.to_jsonl())
    sink.write(f"{prefix}review.jsonl",
               "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in trace.review))
    sink.write(f"{prefix}remaining.jsonl", error_stack_text(trace.remaining))
    report = suggestion_report(trace, unmatched, batch_size, session.cfg.refinement.coverage_threshold).to_dict()
    report["iterations"] = trace.iterations
    report["stop_reason"] = trace.stop_reason
    report["resolved"] = len(trace.resolved)
    report["false_positives"] = len(trace.false_positives)
    sink.report(f"{prefix}suggestion_report", report, [report], session.cfg.format)
    return report


def refine_unmatched(session: Session, unmatched: Sequence[UnmatchedHolding], registry: SchemaRegistry,
                     batch_size: int | None = None) -> tuple[SchemaRegistry, RefinementTrace]:
    cfg = replace(session.cfg.refinement, workers=session.cfg.workers)
    if batch_size is not None:
        cfg = replace(cfg, batch_size=batch_size)
    return refinement_loop(unmatched, registry, cfg, session.backend)


# --------------------------------------------------------------------------
# sweep outputs


def curve_rows(trace: RefinementTrace, holdings: int) -> list[dict[str, Any]]:
    return [
        {"call": i + 1, "cumulative_unique": n, "per_holding": n / holdings if holdings else 0.0}
        for i, n in enumerate(trace.curve)
    ]


def calls_to_fraction(curve: Sequence[int], fraction: float = 0.8) -> int:
    """First 1-based call index at which the curve reaches ``fraction`` of its final value."""
    if not curve or curve[-1] == 0:
        return 0
    goal = fraction * curve[-1]
    return next(i + 1 for i, n in enumerate(curve) if n >= goal)


def iterations_to_fraction(trace: RefinementTrace, fraction: float = 0.8) -> int:
    """First 1-based loop iteration whose end count reaches ``fraction`` of the final unique count."""
    ends = [r.unique_curve[-1] for r in trace.records if r.unique_curve]
    if not ends or ends[-1] == 0:
        return 0
    goal = fraction * ends[-1]
    return next(i + 1 for i, n in enumerate(ends) if n >= goal)


def lorenz_rows(trace: RefinementTrace) -> list[dict[str, Any]]:
    values = [abs(h.market_value or 0.0) for h, _ in trace.resolved]
    return [{"fraction_holdings": x, "fraction_value": y} for x, y in lorenz_points(values)]


__all__ = [
    "ArtifactSink",
    "EXIT_BACKEND",
    "EXIT_INPUT",
    "EXIT_OK",
    "InputError",
    "RunConfig",
    "Session",
]
