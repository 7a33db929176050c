"""Unit tests for file persistence."""

import json
from pathlib import Path

import numpy as np
import pytest

from app.errors import DataFormatError, FormatVersionError
from app.models import SlotGrid
from app.services.clustering import fit_clusters
from app.services.generator import Corpus
from app.services.pricing import PriceForm, PriceModel
from app.services.reports.models import DetectionRow, FitTraceRow
from app.services.scheduler import run_dr
from app.storage import (
    ExperimentPaths,
    atomic_write_text,
    format_value,
    load_cluster_model,
    load_corpus,
    load_outcome,
    read_rows,
    save_cluster_model,
    save_corpus,
    save_outcome,
    write_rows,
)
from tests.helpers.factories import make_appliance, make_house


def _detection_row(day_id: int = 20, **overrides) -> DetectionRow:
    values = dict(
        day_id=day_id,
        classifier="csr",
        attacked=True,
        flagged=False,
        peak_saliency=0.1 + 0.2,
        peak_slot=4,
        threshold=0.5,
        nearest_cluster=None,
        distance=1e-300,
        kind="pulse",
        magnitude=0.05,
        planted=(3, 4),
    )
    values.update(overrides)
    return DetectionRow(**values)


class TestCorpusFiles:
    """Test suite for corpus persistence."""

    def test_round_trip(self, small_corpus: Corpus, scratch_dir: Path) -> None:
        directory = save_corpus(small_corpus, scratch_dir / "corpus")
        assert load_corpus(directory) == small_corpus

    def test_bad_cell_reports_line_and_field(self, small_corpus: Corpus, scratch_dir: Path) -> None:
        directory = save_corpus(small_corpus, scratch_dir / "corpus")
        path = directory / "forecasts.csv"
        lines = path.read_text(encoding="utf-8").splitlines()
        cells = lines[2].split(",")
        cells[3] = "abc"
        lines[2] = ",".join(cells)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

        with pytest.raises(DataFormatError) as excinfo:
            load_corpus(directory)
        assert excinfo.value.line == 3
        assert excinfo.value.field == "slot_1"
        assert "forecasts.csv" in str(excinfo.value)

    def test_short_row(self, small_corpus: Corpus, scratch_dir: Path) -> None:
        directory = save_corpus(small_corpus, scratch_dir / "corpus")
        path = directory / "houses.csv"
        path.write_text(path.read_text(encoding="utf-8") + "0,h\n", encoding="utf-8")
        with pytest.raises(DataFormatError, match="expected 9 fields"):
            load_corpus(directory)

    def test_missing_attacked_forecast(self, small_corpus: Corpus, scratch_dir: Path) -> None:
        directory = save_corpus(small_corpus, scratch_dir / "corpus")
        path = directory / "forecasts.csv"
        kept = [line for line in path.read_text(encoding="utf-8").splitlines() if ",attacked," not in line]
        path.write_text("\n".join(kept) + "\n", encoding="utf-8")
        with pytest.raises(DataFormatError, match="must both exist"):
            load_corpus(directory)

    def test_unsupported_version(self, small_corpus: Corpus, scratch_dir: Path) -> None:
        directory = save_corpus(small_corpus, scratch_dir / "corpus")
        header = directory / "corpus.json"
        document = json.loads(header.read_text(encoding="utf-8"))
        document["format_version"] = 99
        header.write_text(json.dumps(document), encoding="utf-8")
        with pytest.raises(FormatVersionError) as excinfo:
            load_corpus(directory)
        assert excinfo.value.found == 99

    def test_missing_directory(self, scratch_dir: Path) -> None:
        with pytest.raises(FileNotFoundError):
            load_corpus(scratch_dir / "nowhere")


class TestModelAndOutcomeFiles:
    """Test suite for cluster model and outcome documents."""

    def test_cluster_model_round_trip(self, scratch_dir: Path) -> None:
        model = fit_clusters(np.random.default_rng(1).random((30, 5)), k=3, seed=4)
        path = save_cluster_model(model, scratch_dir / "model.json")
        assert load_cluster_model(path) == model

    def test_wrong_document_kind(self, scratch_dir: Path) -> None:
        model = fit_clusters(np.random.default_rng(1).random((10, 3)), k=2)
        path = save_cluster_model(model, scratch_dir / "model.json")
        with pytest.raises(DataFormatError, match="expected a dr_outcome document"):
            load_outcome(path)

    def test_invalid_json(self, scratch_dir: Path) -> None:
        path = scratch_dir / "model.json"
        path.write_text("{\n  \"format_version\": 1,\n  oops\n}", encoding="utf-8")
        with pytest.raises(DataFormatError) as excinfo:
            load_cluster_model(path)
        assert excinfo.value.line == 3

    def test_outcome_round_trip(self, scratch_dir: Path) -> None:
        house = make_house("h1", make_appliance("a", duration=2, latest=3, penalty=0.01))
        outcome = run_dr([house], SlotGrid(2, 2), PriceModel(PriceForm.LINEAR, base=0.0, slope=1.0))
        loaded = load_outcome(save_outcome(outcome, scratch_dir / "outcome.json"))
        assert loaded.schedules == outcome.schedules
        assert loaded.forecast == outcome.forecast
        assert loaded.prices == outcome.prices
        assert loaded.converged == outcome.converged
        assert [r.total_cost for r in loaded.trace] == [r.total_cost for r in outcome.trace]
        np.testing.assert_array_equal(loaded.profiles["h1"], outcome.profiles["h1"])


class TestReportRows:
    """Test suite for dataclass rows as CSV."""

    def test_rows_read_back_exactly(self, scratch_dir: Path) -> None:
        rows = [_detection_row(), _detection_row(21, kind=None, magnitude=None, planted=(), flagged=True)]
        path = write_rows(scratch_dir / "detection-csr.csv", rows)
        assert read_rows(path, DetectionRow) == rows

    def test_empty_report_keeps_header(self, scratch_dir: Path) -> None:
        path = write_rows(scratch_dir / "trace.csv", [], FitTraceRow)
        assert path.read_text(encoding="utf-8") == "iteration,objective\n"
        assert read_rows(path, FitTraceRow) == []

    def test_empty_report_needs_row_type(self, scratch_dir: Path) -> None:
        with pytest.raises(ValueError, match="row_type"):
            write_rows(scratch_dir / "x.csv", [])

    def test_header_mismatch(self, scratch_dir: Path) -> None:
        path = write_rows(scratch_dir / "trace.csv", [FitTraceRow(0, 1.5)])
        with pytest.raises(DataFormatError, match="unexpected header"):
            read_rows(path, DetectionRow)

    def test_bad_cell(self, scratch_dir: Path) -> None:
        path = scratch_dir / "trace.csv"
        path.write_text("iteration,objective\n0,1.5\nx,2.0\n", encoding="utf-8")
        with pytest.raises(DataFormatError) as excinfo:
            read_rows(path, FitTraceRow)
        assert (excinfo.value.line, excinfo.value.field) == (3, "iteration")

    @pytest.mark.parametrize(
        "value, text",
        [(None, ""), (True, "true"), (np.int64(3), "3"), (0.1, "0.1"), ((1, 2), "1;2"), ("csr", "csr")],
    )
    def test_format_value(self, value, text: str) -> None:
        assert format_value(value) == text


class TestPaths:
    """Test suite for the output directory layout."""

    def test_layout(self, scratch_dir: Path) -> None:
        paths = ExperimentPaths.for_directory(scratch_dir)
        assert paths.model == scratch_dir / "model.json"
        assert paths.detection("sr").name == "detection-sr.csv"
        assert paths.simulation("mitigated", "method-2").name == "simulation-mitigated-method-2.csv"
        assert paths.corrections("method-2").name == "corrections-method-2.csv"

    def test_reports_are_sorted(self, scratch_dir: Path) -> None:
        paths = ExperimentPaths.for_directory(scratch_dir)
        for name in ("detection-sr.csv", "detection-csr.csv", "isolation-lof.csv"):
            atomic_write_text(scratch_dir / name, "x\n")
        assert [p.name for p in paths.reports("detection")] == ["detection-csr.csv", "detection-sr.csv"]

    def test_atomic_write_leaves_no_temporary(self, scratch_dir: Path) -> None:
        target = scratch_dir / "nested" / "file.txt"
        atomic_write_text(target, "hello")
        assert target.read_text(encoding="utf-8") == "hello"
        assert sorted(p.name for p in target.parent.iterdir()) == ["file.txt"]
