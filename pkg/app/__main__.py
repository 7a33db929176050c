"""Command-line entry point for the resilient demand-response simulator."""

from __future__ import annotations

import argparse
import logging
import multiprocessing as mp
import sys
from pathlib import Path
from typing import Callable, Sequence

from app.constants import EXIT_DATA, EXIT_OK, EXIT_USAGE
from app.errors import ConfigError, ContractError, DataFormatError
from app.services.clustering import ClusterModel, fit_clusters
from app.services.detection import ClassifierKind
from app.services.experiments import (
    DetectionPlan,
    Scenario,
    calibrated_plan,
    run_detection,
    run_isolation,
    run_simulation,
)
from app.services.generator import Corpus, generate, magnitude_histogram
from app.services.reports import (
    CorrectionRow,
    DetectionRow,
    EvaluationService,
    FitTraceRow,
    IsolationRow,
    SimulationRow,
    write_evaluation,
)
from app.services.reports.evaluation import EvaluationTables
from app.settings import ExperimentSettings, load_experiment_settings, save_experiment_settings
from app.storage import (
    ExperimentPaths,
    load_cluster_model,
    load_corpus,
    read_rows,
    save_cluster_model,
    save_corpus,
    write_rows,
)

logger = logging.getLogger("app")

DEFAULT_OUT = "results"


class _ArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the configuration code."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _day_list(text: str) -> list[int]:
    try:
        days = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated day ids, got {text!r}") from None
    if not days or min(days) < 0:
        raise argparse.ArgumentTypeError(f"expected non-negative day ids, got {text!r}")
    return days


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment settings JSON")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("--out", type=Path, default=Path(DEFAULT_OUT), help="output directory")
    common.add_argument("--workers", type=int, help="worker processes (0 = one per CPU)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="log debug messages")
    verbosity.add_argument("--quiet", action="store_true", help="log warnings only")

    inputs = _ArgumentParser(add_help=False)
    inputs.add_argument("--corpus", type=Path, help="corpus directory (default <out>/corpus)")
    inputs.add_argument("--model", type=Path, help="cluster model file (default <out>/model.json)")

    detector = _ArgumentParser(add_help=False)
    detector.add_argument("--classifier", choices=[kind.value for kind in ClassifierKind])
    detector.add_argument("--isolator", choices=["beam", "lof", "csr"])

    parser = _ArgumentParser(
        prog="resilient-dr",
        description="Simulate demand response under false data injection, detect and mitigate it.",
    )
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    commands.add_parser("generate", parents=[common], help="generate a synthetic corpus")

    train = commands.add_parser("train", parents=[common, inputs], help="fit the cluster model")
    train.add_argument("--k", type=int, help="cluster count (default: one per 25 train days)")

    commands.add_parser(
        "detect", parents=[common, inputs, detector], help="classify the test split"
    )
    commands.add_parser(
        "isolate", parents=[common, inputs, detector], help="isolate attacked slots of flagged days"
    )

    simulate = commands.add_parser(
        "simulate", parents=[common, inputs, detector], help="run the optimisation per scenario"
    )
    simulate.add_argument("--scenario", choices=[scenario.value for scenario in Scenario])
    simulate.add_argument("--method", choices=["1", "2", "3", "4", "5", "6", "none"])
    simulate.add_argument("--days", type=_day_list, help="comma-separated day ids")

    commands.add_parser("evaluate", parents=[common], help="build the evaluation views")

    pipeline = commands.add_parser(
        "pipeline", parents=[common, detector], help="generate, train, detect, isolate, simulate, evaluate"
    )
    pipeline.add_argument("--k", type=int, help="cluster count")
    pipeline.add_argument("--method", choices=["1", "2", "3", "4", "5", "6", "none"])
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _settings(args: argparse.Namespace) -> ExperimentSettings:
    settings = load_experiment_settings(args.config)
    return settings.with_overrides(
        seed=args.seed,
        workers=args.workers,
        classifier=getattr(args, "classifier", None),
        isolator=getattr(args, "isolator", None),
        method=getattr(args, "method", None) or "keep",
        scenario=getattr(args, "scenario", None),
        k=getattr(args, "k", None),
        days=getattr(args, "days", None),
    )


def _print_table(title: str, rows: Sequence[object], columns: Sequence[str]) -> None:
    print(title)
    if not rows:
        print("  (no rows)")
        return
    cells = [[_cell(getattr(row, column)) for column in columns] for row in rows]
    widths = [max(len(column), *(len(line[i]) for line in cells)) for i, column in enumerate(columns)]
    print("  " + "  ".join(column.ljust(width) for column, width in zip(columns, widths)))
    for line in cells:
        print("  " + "  ".join(cell.ljust(width) for cell, width in zip(line, widths)))


def _cell(value: object) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


class _Run:
    """Shared state for one command invocation."""

    def __init__(self, args: argparse.Namespace, settings: ExperimentSettings) -> None:
        self.args = args
        self.settings = settings
        self.paths = ExperimentPaths.for_directory(args.out)

    def corpus(self) -> Corpus:
        return load_corpus(getattr(self.args, "corpus", None) or self.paths.corpus)

    def model(self) -> ClusterModel:
        return load_cluster_model(getattr(self.args, "model", None) or self.paths.model)


def cmd_generate(run: _Run) -> int:
    settings = run.settings
    corpus = generate(settings.generator, settings.grid, workers=settings.workers)
    directory = save_corpus(corpus, run.paths.corpus)
    attacked = corpus.attacked_days
    print(f"corpus: {directory}")
    print(f"days: {len(corpus.days)} (train {len(corpus.train)}, test {len(corpus.test)})")
    print(f"attacked: {len(attacked)}")
    for magnitude, count in magnitude_histogram(corpus).items():
        print(f"  magnitude {magnitude:g}: {count}")
    return EXIT_OK


def cmd_train(run: _Run) -> int:
    corpus = run.corpus()
    model = fit_clusters(corpus.train_forecasts(), run.settings.detector.k, run.settings.seed)
    save_cluster_model(model, run.paths.model)
    write_rows(
        run.paths.fit_trace,
        [FitTraceRow(i, value) for i, value in enumerate(model.objective_trace)],
        FitTraceRow,
    )
    print(f"model: {run.paths.model}")
    print(f"clusters: {model.k} fitted on {model.database.shape[0]} train forecasts")
    print(f"objective: {model.objective_trace[0]:.6g} -> {model.objective_trace[-1]:.6g}")
    return EXIT_OK


def _detection_inputs(run: _Run, corpus: Corpus) -> tuple[ClusterModel | None, DetectionPlan]:
    detector = run.settings.detector
    model = run.model() if detector.classifier is ClassifierKind.CSR else None
    plan = calibrated_plan(corpus, model, run.settings.detection_plan(), detector.threshold)
    logger.info("Detection threshold %.6g (%s)", plan.csr.threshold, plan.classifier)
    return model, plan


def cmd_detect(run: _Run) -> int:
    corpus = run.corpus()
    model, plan = _detection_inputs(run, corpus)
    rows = run_detection(corpus, model, plan, workers=run.settings.workers)
    path = write_rows(run.paths.detection(str(plan.classifier)), rows, DetectionRow)
    print(f"report: {path}")
    _print_table(
        "detection",
        EvaluationService(detection=[rows]).detection_summary(),
        ("classifier", "count", "accuracy", "precision", "recall", "f1", "fpr"),
    )
    return EXIT_OK


def cmd_isolate(run: _Run) -> int:
    corpus = run.corpus()
    model = run.model()
    _, plan = _detection_inputs(run, corpus)
    isolation = run.settings.isolation
    rows = run_isolation(
        corpus, model, plan, isolation.isolator, isolation.config, workers=run.settings.workers
    )
    path = write_rows(run.paths.isolation(str(isolation.isolator)), rows, IsolationRow)
    service = EvaluationService(isolation=[rows])
    print(f"report: {path}")
    _print_table(
        "isolation",
        service.isolation_summary(),
        ("isolator", "cases", "exact_matches", "recall", "mean_jaccard"),
    )
    _print_table(
        "isolation recall per magnitude",
        service.recall_buckets(),
        ("isolator", "magnitude", "cases", "recall", "mean_jaccard"),
    )
    return EXIT_OK


def cmd_simulate(run: _Run) -> int:
    settings = run.settings
    scenario = settings.simulation.scenario
    method = settings.mitigation.method
    if scenario is Scenario.MITIGATED and method is None:
        raise ConfigError("mitigation.method", "the mitigated scenario needs a method (1..6)")
    corpus = run.corpus()
    model = None
    detection = settings.detection_plan()
    if scenario is Scenario.MITIGATED:
        model = run.model()
        detection = calibrated_plan(corpus, model, detection, settings.detector.threshold)
    plan = settings.simulation_plan(detection)
    rows, corrections = run_simulation(
        corpus,
        scenario,
        plan,
        model,
        day_ids=settings.simulation.days,
        workers=settings.workers,
    )
    label = method.label if scenario is Scenario.MITIGATED and method is not None else "none"
    path = write_rows(run.paths.simulation(str(scenario), label), rows, SimulationRow)
    print(f"report: {path}")
    if scenario is Scenario.MITIGATED:
        audit = write_rows(run.paths.corrections(label), corrections, CorrectionRow)
        print(f"corrections: {audit}")
    _print_table(
        "simulation",
        EvaluationService(simulation=[rows]).simulation_summary(),
        (
            "scenario",
            "method",
            "days",
            "attacker_bill_delta_mean",
            "attacker_bill_delta_median",
            "community_cost_delta_mean",
            "mape_median",
        ),
    )
    return EXIT_OK


def _print_evaluation(tables: EvaluationTables) -> None:
    _print_table(
        "detection", tables.detection, ("classifier", "count", "precision", "recall", "f1", "fpr")
    )
    _print_table(
        "isolation", tables.isolation, ("isolator", "cases", "exact_matches", "recall", "mean_jaccard")
    )
    _print_table(
        "simulation",
        tables.simulation,
        ("scenario", "method", "days", "attacker_bill_delta_mean", "community_cost_delta_mean", "mape_median"),
    )


def cmd_evaluate(run: _Run) -> int:
    paths = run.paths
    service = EvaluationService(
        detection=[read_rows(path, DetectionRow) for path in paths.reports("detection")],
        isolation=[read_rows(path, IsolationRow) for path in paths.reports("isolation")],
        simulation=[read_rows(path, SimulationRow) for path in paths.reports("simulation")],
        corrections=[read_rows(path, CorrectionRow) for path in paths.reports("corrections")],
    )
    tables = service.tables()
    written = write_evaluation(tables, paths.evaluation)
    print(f"evaluation: {paths.evaluation} ({len(written)} files)")
    _print_evaluation(tables)
    return EXIT_OK


def cmd_pipeline(run: _Run) -> int:
    settings = run.settings
    save_experiment_settings(settings, run.paths.settings)
    cmd_generate(run)
    cmd_train(run)
    cmd_detect(run)
    cmd_isolate(run)
    run.settings = settings.with_overrides(scenario=Scenario.ATTACK)
    cmd_simulate(run)
    if settings.mitigation.method is not None:
        run.settings = settings.with_overrides(scenario=Scenario.MITIGATED)
        cmd_simulate(run)
    run.settings = settings
    return cmd_evaluate(run)


COMMANDS: dict[str, Callable[[_Run], int]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "detect": cmd_detect,
    "isolate": cmd_isolate,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args)
    try:
        run = _Run(args, _settings(args))
        return COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ContractError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    mp.freeze_support()
    sys.exit(main())
