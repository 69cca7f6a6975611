"""Command-line entry point: ``taser <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from ..llm.prompts import PromptStrategy
from ..refine import RefinementConfig
from ..schema import SchemaSuggestion, initial_registry, parse_registry, serialize_registry, update_schema
from ..workload import heavy_tail_workload
from . import run
from .run import EXIT_INPUT, EXIT_OK, InputError, RunConfig, Session

logger = logging.getLogger("taser")


def _common(parser: argparse.ArgumentParser, corpus: bool = True) -> None:
    if corpus:
        parser.add_argument("--corpus", help="corpus JSONL, one page per line")
        parser.add_argument("--labels", help="labels JSON array")
        parser.add_argument("--strategy", default=PromptStrategy.FULL_SCHEMA.value,
                            choices=[s.value for s in PromptStrategy])
    parser.add_argument("--registry", help="registry JSON (default: the initial schema)")
    parser.add_argument("--backend", default="mock", choices=["mock", "scripted", "live"])
    parser.add_argument("--transcript", help="transcript JSONL for the scripted backend")
    parser.add_argument("--base-url", help="OpenAI-compatible endpoint for the live backend")
    parser.add_argument("--model", help="model name for the live backend")
    parser.add_argument("--workers", type=int, default=20)
    parser.add_argument("--output", default="runs", help="root directory for run artifacts")
    parser.add_argument("--dump-prompts", action="store_true", help="write every prompt to prompts.jsonl")
    parser.add_argument("--format", default="json", choices=["json", "csv"], help="report file format")
    parser.add_argument("--record", help="save a replayable transcript of this run here")


def _refinement(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--batch-size", type=int, default=10)
    parser.add_argument("--max-iterations", type=int, default=10)
    parser.add_argument("--dedup-similarity", type=float, default=0.9)
    parser.add_argument("--coverage-threshold", type=float, default=70.0)
    parser.add_argument("--no-previous-suggestions", action="store_true",
                        help="leave earlier suggestions out of the recommender prompt")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taser", description="Holdings-table detection, extraction and schema refinement.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="classify every page as holdings table or not")
    _common(p)

    p = sub.add_parser("extract", help="detect, extract and merge funds; compute TAD against labels")
    _common(p)

    p = sub.add_parser("refine", help="run the schema refinement loop on unmatched holdings")
    _common(p)
    _refinement(p)
    p.add_argument("--error-stack", help="unmatched holdings JSONL; default: extract the corpus first")

    p = sub.add_parser("review", help="approve or reject suggestions waiting for manual review")
    p.add_argument("review_file")
    p.add_argument("--registry", help="registry JSON to update (default: the initial schema)")
    p.add_argument("--approve", nargs="*", default=[], metavar="ID")
    p.add_argument("--reject", nargs="*", default=[], metavar="ID")
    p.add_argument("--output-registry", help="where to write the updated registry")

    p = sub.add_parser("evaluate", help="detection and extraction metrics for all four prompt strategies")
    _common(p)

    p = sub.add_parser("report", help="print the reports of a finished run")
    p.add_argument("run_dir")
    p.add_argument("--format", default="json", choices=["json", "csv"])

    p = sub.add_parser("sweep", help="replay one unmatched workload at several batch sizes")
    _common(p, corpus=False)
    _refinement(p)
    p.add_argument("--batch-sizes", default="10,500", help="comma-separated batch sizes")
    p.add_argument("--error-stack", help="unmatched holdings JSONL; default: the synthetic workload")
    p.add_argument("--workload-size", type=int, default=5000)
    p.add_argument("--seed", type=int, default=7)
    return parser


def config_from(args: argparse.Namespace) -> RunConfig:
    refinement = RefinementConfig()
    if hasattr(args, "batch_size"):
        try:
            refinement = RefinementConfig(
                batch_size=args.batch_size,
                max_iterations=args.max_iterations,
                dedup_similarity=args.dedup_similarity,
                coverage_threshold=args.coverage_threshold,
                use_previous=not args.no_previous_suggestions,
            )
        except ValueError as exc:
            raise InputError(str(exc)) from None
    return RunConfig(
        corpus_path=getattr(args, "corpus", None),
        labels_path=getattr(args, "labels", None),
        registry_path=args.registry,
        backend=args.backend,
        transcript=args.transcript,
        base_url=args.base_url,
        model=args.model,
        strategy=getattr(args, "strategy", PromptStrategy.FULL_SCHEMA.value),
        workers=args.workers,
        refinement=refinement,
        output_dir=args.output,
        dump_prompts=args.dump_prompts,
        format=args.format,
        record=args.record,
    )


def _say(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = config_from(args)
    session = Session("detect", cfg)
    pages, labels, registry = session.corpus(), session.labels(), session.registry()
    results = run.run_detection(session, pages, PromptStrategy(cfg.strategy), registry)
    report = run.write_detection(session, results, labels)
    _say(f"run {session.run_id}: {sum(r.has_portfolio_table for r in results)} of {len(pages)} pages positive")
    _say(json.dumps(report, sort_keys=True))
    return session.finish()


def _extract(session: Session) -> tuple[run.Extraction, Any, Any, Any]:
    cfg = session.cfg
    pages, labels, registry = session.corpus(), session.labels(), session.registry()
    detections = run.run_detection(session, pages, PromptStrategy(cfg.strategy), registry)
    run.write_detection(session, detections, labels)
    result = run.build_extraction(run.extract_positive(session, pages, detections, registry), labels)
    run.write_extraction(session, result, registry)
    return result, (pages, detections), labels, registry


def cmd_extract(args: argparse.Namespace) -> int:
    session = Session("extract", config_from(args))
    result, _, _, _ = _extract(session)
    _say(f"run {session.run_id}: {len(result.funds)} fund(s), {len(result.unmatched)} unmatched holding(s)")
    if result.report is not None:
        _say(f"TAD {result.report.total_absolute_difference:.2f}  unaccounted {result.report.unaccounted_pct:.4f}%")
    return session.finish()


def cmd_refine(args: argparse.Namespace) -> int:
    cfg = config_from(args)
    extra = {"error_stack": run.file_digest(args.error_stack, "error stack")} if args.error_stack else {}
    session = Session("refine", cfg, extra)
    before = None
    if args.error_stack:
        registry = session.registry()
        unmatched = run.read_error_stack(args.error_stack)
    else:
        before, (pages, detections), labels, registry = _extract(session)
        unmatched = before.unmatched
    if not unmatched:
        _say("error stack is empty; nothing to refine")
        return session.finish()
    final, trace = run.refine_unmatched(session, unmatched, registry)
    run.write_registry_chain(session, trace.registries)
    report = run.write_trace(session, trace, unmatched, cfg.refinement.batch_size)
    summary: dict[str, Any] = {
        "registry_version_before": registry.version,
        "registry_version_after": final.version,
        "iterations": trace.iterations,
        "stop_reason": trace.stop_reason,
        "unmatched_before": len(unmatched),
        "unmatched_after": len(trace.remaining),
    }
    if before is not None:
        after = run.build_extraction(run.extract_positive(session, pages, detections, final, reuse=False), labels)
        run.write_extraction(session, after, final, prefix="refined/")
        if before.report is not None and after.report is not None:
            summary["tad_before"] = before.report.total_absolute_difference
            summary["tad_after"] = after.report.total_absolute_difference
            summary["tad_delta"] = summary["tad_after"] - summary["tad_before"]
    session.sink.json("refine_summary.json", summary)
    _say(f"run {session.run_id}: registry v{registry.version} -> v{final.version}, "
         f"{len(unmatched)} -> {len(trace.remaining)} unmatched ({trace.stop_reason})")
    _say(json.dumps({**summary, "coverage_pct": report["coverage_pct"],
                     "utilization_pct": report["utilization_pct"]}, sort_keys=True))
    return session.finish()


def _read_review(path: str) -> list[dict[str, Any]]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read review file {path}: {exc.strerror}") from None
    try:
        return [json.loads(line) for line in lines if line.strip()]
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_review(args: argparse.Namespace) -> int:
    entries = _read_review(args.review_file)
    ids = [e.get("id") for e in entries]
    unknown = [i for i in dict.fromkeys(list(args.approve) + list(args.reject)) if i not in ids]
    if unknown:
        raise InputError(f"unknown suggestion id(s) {', '.join(unknown)}; valid ids: {', '.join(map(str, ids))}")
    both = set(args.approve) & set(args.reject)
    if both:
        raise InputError(f"id(s) both approved and rejected: {', '.join(sorted(both))}")
    if not args.approve and not args.reject:
        _say("no decisions given; review file unchanged")
        return EXIT_OK
    if args.registry:
        try:
            registry = parse_registry(Path(args.registry).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read registry {args.registry}: {exc.strerror}") from None
        except ValueError as exc:
            raise InputError(f"bad registry {args.registry}: {exc}") from None
    else:
        registry = initial_registry()
    approved = []
    for entry in entries:
        if entry.get("status") != "pending":
            continue
        if entry["id"] in args.approve:
            entry["status"] = "approved"
            approved.append(SchemaSuggestion.from_dict(entry["suggestion"]))
        elif entry["id"] in args.reject:
            entry["status"] = "rejected"
    Path(args.review_file).write_text(
        "".join(json.dumps(e, sort_keys=True, ensure_ascii=False) + "\n" for e in entries), encoding="utf-8"
    )
    if approved:
        registry = update_schema(registry, approved)
        target = args.output_registry or args.registry
        if target:
            Path(target).write_text(serialize_registry(registry), encoding="utf-8")
        else:
            _say(serialize_registry(registry))
    _say(f"{len(approved)} approved, {len(args.reject)} rejected; registry version {registry.version}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = config_from(args)
    session = Session("evaluate", cfg)
    pages, labels, registry = session.corpus(), session.labels(), session.registry()
    if labels is None:
        raise InputError("evaluate needs --labels")
    rows = []
    for strategy in PromptStrategy:
        prefix = f"{strategy.value}/"
        detections = run.run_detection(session, pages, strategy, registry)
        det = run.write_detection(session, detections, labels, prefix=prefix)
        result = run.build_extraction(run.extract_positive(session, pages, detections, registry), labels)
        run.write_extraction(session, result, registry, prefix=prefix)
        rows.append({
            "strategy": strategy.value,
            "recall": round(100 * det["recall"], 2),
            "precision": round(100 * det["precision"], 2),
            "f1": round(100 * det["f1"], 2),
            "accuracy": round(100 * det["accuracy"], 2),
            "tad": result.report.total_absolute_difference,
            "unaccounted_pct": round(result.report.unaccounted_pct, 4),
        })
    session.sink.report("evaluation", {"strategies": rows}, rows, cfg.format)
    _say(run.csv_text(rows).rstrip("\n"))
    return session.finish()


REPORT_FILES = ("detection_report", "extraction_report", "suggestion_report", "refine_summary", "sweep", "evaluation")


def cmd_report(args: argparse.Namespace) -> int:
    root = Path(args.run_dir)
    if not root.is_dir():
        raise InputError(f"run directory not found: {root}")
    found = {}
    for stem in REPORT_FILES:
        for ext in ("json", "csv"):
            path = root / f"{stem}.{ext}"
            if path.is_file():
                found[stem] = (ext, path.read_text(encoding="utf-8"))
    if not found:
        raise InputError(f"no reports in {root}")
    if args.format == "json":
        out = {stem: json.loads(text) if ext == "json" else text for stem, (ext, text) in found.items()}
        _say(json.dumps(out, indent=2, sort_keys=True))
    else:
        for stem, (ext, text) in found.items():
            _say(f"# {stem}")
            if ext == "csv":
                _say(text)
                continue
            value = json.loads(text)
            rows = value.get("funds") or value.get("rows") or value.get("strategies") or [value]
            _say(run.csv_text(rows))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = config_from(args)
    try:
        sizes = [int(x) for x in args.batch_sizes.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"bad --batch-sizes {args.batch_sizes!r}") from None
    if len(sizes) < 2 or any(b < 1 for b in sizes):
        raise InputError("--batch-sizes needs at least two sizes, each >= 1")
    if args.error_stack:
        extra: dict[str, Any] = {"error_stack": run.file_digest(args.error_stack, "error stack"), "batch_sizes": sizes}
    else:
        extra = {"workload_size": args.workload_size, "seed": args.seed, "batch_sizes": sizes}
    session = Session("sweep", cfg, extra)
    registry = session.registry()
    if args.error_stack:
        unmatched = run.read_error_stack(args.error_stack)
    else:
        unmatched = heavy_tail_workload(args.workload_size, seed=args.seed)
        session.sink.write("workload.jsonl", run.error_stack_text(unmatched))
    rows = []
    for size in sizes:
        _, trace = run.refine_unmatched(session, unmatched, registry, batch_size=size)
        report = run.write_trace(session, trace, unmatched, size, prefix=f"batch_{size}/")
        report["calls_to_80pct"] = run.calls_to_fraction(trace.curve)
        report["iterations_to_80pct"] = run.iterations_to_fraction(trace)
        report["suggestion_calls"] = len(trace.curve)
        report["final_unique_per_holding"] = (trace.curve[-1] / len(unmatched)) if trace.curve and unmatched else 0.0
        rows.append(report)
        session.sink.write(f"curve_B{size}.csv", run.csv_text(run.curve_rows(trace, len(unmatched)),
                                                              ["call", "cumulative_unique", "per_holding"]))
        session.sink.write(f"lorenz_B{size}.csv", run.csv_text(run.lorenz_rows(trace),
                                                               ["fraction_holdings", "fraction_value"]))
    session.sink.report("sweep", {"rows": rows}, rows, cfg.format)
    columns = ["batch_size", "coverage_pct", "utilization_pct", "collision_rate_pct", "total_unique", "utilized",
               "collisions", "calls_to_80pct"]
    _say(run.csv_text(rows, columns).rstrip("\n"))
    return session.finish()


COMMANDS = {
    "detect": cmd_detect,
    "extract": cmd_extract,
    "refine": cmd_refine,
    "review": cmd_review,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "sweep": cmd_sweep,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        sys.stderr.write(f"taser: error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
