#!/usr/bin/env python
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from rich.console import Console
from rich.markup import escape

from security_triage_team.corpus_stats import (
    compute_summary,
    render_sample_text,
    render_summary_text,
    sample_findings,
    select_prevalent_flags,
)
from security_triage_team.errors import ConfigError, EmptyInputError, PairingError, StartupError
from security_triage_team.evaluation import (
    PriceConfig,
    binary_metrics,
    cost_summary,
    format_cost,
    gold_label_map,
    load_gold_annotations,
    multiclass_metrics,
    render_confusion_text,
)
from security_triage_team.logging_setup import configure_logging
from security_triage_team.models import FindingRef, ScanWarning
from security_triage_team.pipeline import (
    ASSESSMENTS_FILE,
    ERRORS_FILE,
    FINDINGS_FILE,
    TRACES_FILE,
    analyze_findings,
    build_report,
    create_backend,
    open_repo,
    read_assessment_records,
    read_errors,
    read_findings,
    read_traces,
    run_pipeline,
    scan_findings,
    write_analysis,
    write_findings,
    write_report,
)
from security_triage_team.reasoning.agent import BackendKind, Budget
from security_triage_team.reasoning.backends import ScriptedBackend
from security_triage_team.report import ReportFormat, render_report, summary_line
from security_triage_team.settings import RunConfig, default_budget, make_run_config, parse_price

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ANALYSIS_ERRORS = 2

BACKEND_CHOICES = {
    "heuristic": BackendKind.HEURISTIC,
    "remote": BackendKind.REMOTE_MODEL,
    "crew": BackendKind.CREW,
}

console = Console()


# --- Arguments ---

def _add_repo_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--repo", type=Path, required=True, help="Repository to assess.")
    parser.add_argument("--artifact-id", help="Artifact identifier (defaults to the repository directory name).")
    parser.add_argument("--out", type=Path, default=Path("output"), help="Directory for the run's files.")


def _add_scan_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--semgrep-report", type=Path, action="append", default=[],
                        help="Semgrep JSON report; may be given more than once.")
    parser.add_argument("--trivy-report", type=Path, action="append", default=[],
                        help="Trivy JSON report; may be given more than once.")
    parser.add_argument("--rules", type=Path, help="Builtin rule file (TOML or JSON) replacing the default rules.")
    parser.add_argument("--no-builtin", action="store_true", help="Skip the builtin pattern scan.")


def _add_backend_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=sorted(BACKEND_CHOICES), default="heuristic")
    parser.add_argument("--endpoint", help="Chat-completions endpoint URL for remote backends.")
    parser.add_argument("--model", help="Model name for remote backends.")
    parser.add_argument("--max-steps", type=int, help="Step budget per finding.")
    parser.add_argument("--timeout", type=float, help="Seconds allowed per finding.")
    parser.add_argument("--workers", type=int, default=4, help="Findings analyzed in parallel.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--input-price", default="2.50", help="Price per 1M input tokens.")
    parser.add_argument("--output-price", default="10.00", help="Price per 1M output tokens.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="security_triage_team",
        description="Context-aware assessment of static analysis findings in research artifacts.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Scan, analyze and report in one go.")
    _add_repo_arguments(run_parser)
    _add_scan_arguments(run_parser)
    _add_backend_arguments(run_parser)
    run_parser.add_argument("--format", choices=[f.value for f in ReportFormat], default="markdown")

    scan_parser = commands.add_parser("scan", help="Normalize scanner reports and run the builtin scan.")
    _add_repo_arguments(scan_parser)
    _add_scan_arguments(scan_parser)

    analyze_parser = commands.add_parser("analyze", help="Assess every finding of a findings file.")
    _add_repo_arguments(analyze_parser)
    _add_backend_arguments(analyze_parser)
    analyze_parser.add_argument("--findings", type=Path, help=f"Findings file (default: <out>/{FINDINGS_FILE}).")

    report_parser = commands.add_parser("report", help="Build the report from the files of earlier stages.")
    _add_repo_arguments(report_parser)
    _add_backend_arguments(report_parser)
    report_parser.add_argument("--trivy-report", type=Path, action="append", default=[],
                               help="Trivy reports used for the findings, if any.")
    report_parser.add_argument("--format", choices=[f.value for f in ReportFormat], default="markdown")

    stats_parser = commands.add_parser("stats", help="Corpus tables for a findings file.")
    stats_parser.add_argument("--findings", type=Path, required=True)
    stats_parser.add_argument("--top", type=int, default=10, help="How many CWEs to list.")
    stats_parser.add_argument("--format", choices=["text", "json"], default="text")

    sample_parser = commands.add_parser("sample", help="Prevalence-based sample of findings.")
    sample_parser.add_argument("--findings", type=Path, required=True)
    sample_parser.add_argument("--k", type=int, default=50, help="Number of flags to keep.")
    sample_parser.add_argument("--min-artifacts", type=int, default=30)
    sample_parser.add_argument("--per-flag", type=int, default=5)
    sample_parser.add_argument("--seed", type=int, default=0)
    sample_parser.add_argument("--format", choices=["text", "json"], default="text")

    evaluate_parser = commands.add_parser("evaluate", help="Score assessments against gold labels.")
    evaluate_parser.add_argument("--gold", type=Path, required=True)
    evaluate_parser.add_argument("--assessments", type=Path, required=True)
    evaluate_parser.add_argument("--mode", choices=["binary", "multiclass", "both"], default="both")
    evaluate_parser.add_argument("--traces", type=Path, help="Traces for cost accounting.")
    evaluate_parser.add_argument("--artifacts", type=int, help="Artifact count for per-artifact cost.")
    evaluate_parser.add_argument("--input-price", default="2.50")
    evaluate_parser.add_argument("--output-price", default="10.00")
    evaluate_parser.add_argument("--rounding", choices=["half_up", "ceiling"], default="half_up")
    evaluate_parser.add_argument("--format", choices=["text", "json"], default="text")
    return parser


def _budget(args: argparse.Namespace) -> Budget:
    budget = default_budget()
    updates = {}
    if getattr(args, "max_steps", None) is not None:
        updates["max_steps"] = args.max_steps
    if getattr(args, "timeout", None) is not None:
        updates["timeout_seconds"] = args.timeout
    if not updates:
        return budget
    try:
        return Budget(**{**budget.model_dump(), **updates})
    except ValueError as e:
        raise ConfigError(f"Invalid budget: {e}") from e


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = {
        "repo_path": args.repo,
        "artifact_id": args.artifact_id,
        "output_dir": args.out,
        "semgrep_report_paths": tuple(getattr(args, "semgrep_report", ())),
        "trivy_report_paths": tuple(getattr(args, "trivy_report", ())),
        "builtin_rules_path": getattr(args, "rules", None),
        "builtin_scan": not getattr(args, "no_builtin", False),
    }
    if hasattr(args, "backend"):
        values.update(
            backend=BACKEND_CHOICES[args.backend],
            endpoint_url=args.endpoint,
            model_name=args.model,
            budget=_budget(args),
            prices=PriceConfig(input_price=parse_price(args.input_price), output_price=parse_price(args.output_price)),
            seed=args.seed,
            worker_count=args.workers,
        )
    return make_run_config(**values)


# --- Subcommands ---

def _print_warnings(warnings_seen: List[ScanWarning]) -> None:
    if warnings_seen:
        console.print(f"[yellow]{len(warnings_seen)} warning(s) while scanning[/yellow]")


def command_run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    doc = run_pipeline(config)
    if args.format == ReportFormat.JSON.value:
        console.print(render_report(doc, ReportFormat.JSON), markup=False, highlight=False, soft_wrap=True)
        logger.info("Written: %s", config.output_dir)
        logger.info("%s", summary_line(doc))
    else:
        console.print(f"✅ Written: {config.output_dir}")
        console.print(summary_line(doc), markup=False)
    return EXIT_ANALYSIS_ERRORS if doc.errors else EXIT_OK


def command_scan(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    repo = open_repo(config.repo_path)
    warnings_seen: List[ScanWarning] = []
    findings = scan_findings(config, repo, warnings_seen)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    write_findings(config.output_dir / FINDINGS_FILE, findings)
    _print_warnings(warnings_seen)
    console.print(f"✅ Written: {config.output_dir / FINDINGS_FILE} ({len(findings)} findings)")
    return EXIT_OK


def command_analyze(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    repo = open_repo(config.repo_path)
    findings = read_findings(args.findings or config.output_dir / FINDINGS_FILE)
    backend = create_backend(config)
    outcomes = analyze_findings(findings.findings, repo, backend, config.budget, config.worker_count)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    write_analysis(config.output_dir, outcomes)
    failed = sum(1 for outcome in outcomes if outcome.error is not None)
    console.print(f"✅ Written: {config.output_dir / ASSESSMENTS_FILE} "
                  f"({len(outcomes) - failed} assessed, {failed} failed)")
    return EXIT_ANALYSIS_ERRORS if failed else EXIT_OK


def command_report(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    repo = open_repo(config.repo_path)
    out = config.output_dir
    findings = read_findings(out / FINDINGS_FILE)
    try:
        records = read_assessment_records(out / ASSESSMENTS_FILE)
    except OSError as e:
        raise StartupError(f"Cannot read {out / ASSESSMENTS_FILE}: {e}") from e
    errors = read_errors(out / ERRORS_FILE)
    doc = build_report(findings, records, errors, read_traces(out / TRACES_FILE), repo, config)
    write_report(out, doc)
    console.print(render_report(doc, ReportFormat(args.format)), markup=False, highlight=False, soft_wrap=True)
    return EXIT_ANALYSIS_ERRORS if doc.errors else EXIT_OK


def command_stats(args: argparse.Namespace) -> int:
    summary = compute_summary(read_findings(args.findings), top_n=args.top)
    if args.format == "json":
        console.print(summary.model_dump_json(indent=2), markup=False, highlight=False, soft_wrap=True)
    else:
        console.print(render_summary_text(summary), markup=False, highlight=False, soft_wrap=True)
    return EXIT_OK


def command_sample(args: argparse.Namespace) -> int:
    findings = read_findings(args.findings)
    flags = select_prevalent_flags(findings, args.k, args.min_artifacts)
    plan = sample_findings(findings, flags, args.per_flag, args.seed, k=args.k, min_artifacts=args.min_artifacts)
    if args.format == "json":
        console.print(plan.model_dump_json(indent=2), markup=False, highlight=False, soft_wrap=True)
    else:
        console.print(render_sample_text(plan), markup=False, highlight=False, soft_wrap=True)
    return EXIT_OK


def command_evaluate(args: argparse.Namespace) -> int:
    try:
        gold = gold_label_map(load_gold_annotations(args.gold))
        records = read_assessment_records(args.assessments)
    except OSError as e:
        raise StartupError(f"Cannot read evaluation input: {e}") from e
    predicted = {record.finding_ref.key: record.assessment.security_label for record in records}
    reports = []
    if args.mode in ("binary", "both"):
        reports.append(binary_metrics(gold, predicted))
    if args.mode in ("multiclass", "both"):
        reports.append(multiclass_metrics(gold, predicted))

    cost = None
    if args.traces:
        prices = PriceConfig(input_price=parse_price(args.input_price), output_price=parse_price(args.output_price))
        cost = cost_summary(read_traces(args.traces), prices, artifact_count=args.artifacts)

    if args.format == "json":
        payload = {report.mode.value: report.model_dump(mode="json") for report in reports}
        if cost is not None:
            payload["cost"] = cost.model_dump(mode="json")
        console.print(json.dumps(payload, indent=2), markup=False, highlight=False, soft_wrap=True)
        return EXIT_OK
    for report in reports:
        console.print(f"\n[bold]{report.mode.value}[/bold]")
        console.print(render_confusion_text(report), markup=False, highlight=False, soft_wrap=True)
    if cost is not None:
        console.print("\n[bold]cost[/bold]")
        for name, value in format_cost(cost, args.rounding).items():
            console.print(f"{name}: {value}", markup=False)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "run": command_run,
    "scan": command_scan,
    "analyze": command_analyze,
    "report": command_report,
    "stats": command_stats,
    "sample": command_sample,
    "evaluate": command_evaluate,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, StartupError, PairingError, EmptyInputError) as e:
        console.print(f"[red]❌ {escape(str(e))}[/red]", soft_wrap=True)
        return EXIT_USAGE


def run():
    """
    Run the pipeline from the command line.
    """
    try:
        sys.exit(main())
    except SystemExit:
        raise
    except Exception as e:
        raise Exception(f"An error occurred while running the triage: {e}")


# --- Transcript replay ---

def build_replay_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="replay", description="Replay saved agent traces without a model.")
    parser.add_argument("traces", type=Path, help="Traces file written by an earlier run.")
    _add_repo_arguments(parser)
    parser.add_argument("--findings", type=Path, help=f"Findings file (default: <out>/{FINDINGS_FILE}).")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main_replay(argv: Optional[List[str]] = None) -> int:
    parser = build_replay_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    configure_logging(args.verbose)
    try:
        config = make_run_config(repo_path=args.repo, artifact_id=args.artifact_id, output_dir=args.out,
                                 worker_count=1)
        repo = open_repo(config.repo_path)
        findings = read_findings(args.findings or config.output_dir / FINDINGS_FILE)
        traces = read_traces(args.traces)
        if not traces:
            raise StartupError(f"No traces in {args.traces}")
        backend = ScriptedBackend.from_traces(traces)
        recorded = {trace.finding_ref.key for trace in traces}
        selected = [f for f in findings.findings if FindingRef.of(f).key in recorded]
        budget = Budget(max_steps=max(len(trace.steps) for trace in traces))
        outcomes = analyze_findings(selected, repo, backend, budget)
    except (ConfigError, StartupError) as e:
        console.print(f"[red]❌ {escape(str(e))}[/red]", soft_wrap=True)
        return EXIT_USAGE

    replay_dir = config.output_dir / "replay"
    replay_dir.mkdir(parents=True, exist_ok=True)
    write_analysis(replay_dir, outcomes)
    failed = sum(1 for outcome in outcomes if outcome.error is not None)
    console.print(f"✅ Replayed {len(outcomes)} traces into {replay_dir / ASSESSMENTS_FILE} ({failed} failed)")
    return EXIT_ANALYSIS_ERRORS if failed else EXIT_OK


def replay():
    """
    Replay saved agent traces through the reasoning loop.
    """
    try:
        sys.exit(main_replay())
    except SystemExit:
        raise
    except Exception as e:
        raise Exception(f"An error occurred while replaying the traces: {e}")
