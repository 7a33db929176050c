"""End-to-end tests for complete experiment runs.

Tests the command line from a settings file to every report and evaluation view.
"""

from pathlib import Path

import pytest

from app.__main__ import main
from app.constants import EXIT_OK
from app.services.reports import CorrectionRow, DetectionSummaryRow, SimulationRow, SimulationSummaryRow
from app.settings import load_experiment_settings, save_experiment_settings
from app.storage import ExperimentPaths, load_corpus, read_rows
from tests.helpers.factories import small_settings


def _run_pipeline(directory: Path, *extra: str) -> ExperimentPaths:
    config = directory / "settings.json"
    save_experiment_settings(small_settings(), config)
    out = directory / "out"
    code = main(["pipeline", "--config", str(config), "--out", str(out), "--method", "2", *extra])
    assert code == EXIT_OK
    return ExperimentPaths.for_directory(out)


class TestExperimentPipeline:
    """The pipeline command runs every stage into one output directory."""

    def test_pipeline_writes_every_artefact(self, scratch_dir: Path, capsys) -> None:
        paths = _run_pipeline(scratch_dir)

        for path in (
            paths.settings,
            paths.model,
            paths.fit_trace,
            paths.detection("csr"),
            paths.isolation("isolation_path"),
            paths.simulation("attack", "none"),
            paths.simulation("mitigated", "method-2"),
            paths.corrections("method-2"),
        ):
            assert path.exists(), path
        assert len(load_corpus(paths.corpus).days) == 30

        out = capsys.readouterr().out
        assert "attacked: 6" in out
        assert f"evaluation: {paths.evaluation} (5 files)" in out

    def test_settings_document_records_the_run(self, scratch_dir: Path) -> None:
        paths = _run_pipeline(scratch_dir)

        assert load_experiment_settings(paths.settings) == small_settings().with_overrides(method=2)

    def test_evaluation_views(self, scratch_dir: Path) -> None:
        paths = _run_pipeline(scratch_dir)

        (detection,) = read_rows(paths.evaluation / "detection_summary.csv", DetectionSummaryRow)
        assert detection.classifier == "csr"
        assert detection.count == 15
        assert detection.true_positives + detection.false_negatives == 6

        simulation = read_rows(paths.evaluation / "simulation_summary.csv", SimulationSummaryRow)
        assert [(row.scenario, row.method, row.days) for row in simulation] == [
            ("attack", "none", 6),
            ("mitigated", "method-2", 6),
        ]

        mitigated = read_rows(paths.simulation("mitigated", "method-2"), SimulationRow)
        corrections = read_rows(paths.evaluation / "corrections.csv", CorrectionRow)
        flagged_days = {row.day_id for row in mitigated if row.isolated}
        assert {row.day_id for row in corrections} <= flagged_days
        assert all(row.method == "method-2" for row in corrections)

    def test_evaluate_again_is_idempotent(self, scratch_dir: Path) -> None:
        paths = _run_pipeline(scratch_dir)
        before = {path.name: path.read_bytes() for path in paths.evaluation.iterdir()}

        assert main(["evaluate", "--out", str(paths.root)]) == EXIT_OK

        after = {path.name: path.read_bytes() for path in paths.evaluation.iterdir()}
        assert after == before

    def test_method_none_skips_mitigation(self, scratch_dir: Path) -> None:
        paths = _run_pipeline(scratch_dir, "--method", "none", "--classifier", "sr", "--isolator", "csr")

        assert paths.detection("sr").exists()
        assert paths.isolation("csr").exists()
        assert paths.reports("corrections") == []
        simulation = read_rows(paths.evaluation / "simulation_summary.csv", SimulationSummaryRow)
        assert [(row.scenario, row.method) for row in simulation] == [("attack", "none")]


@pytest.mark.slow
def test_reports_do_not_depend_on_worker_count(scratch_dir: Path) -> None:
    serial = _run_pipeline(scratch_dir / "serial", "--workers", "1")
    parallel = _run_pipeline(scratch_dir / "parallel", "--workers", "2")

    for name in (
        "detection-csr.csv",
        "isolation-isolation_path.csv",
        "simulation-attack-none.csv",
        "simulation-mitigated-method-2.csv",
        "corrections-method-2.csv",
    ):
        assert (serial.root / name).read_bytes() == (parallel.root / name).read_bytes(), name
