"""Unit tests for the evaluation views."""

from dataclasses import replace

import pytest

from app.services.reports import EvaluationService, merge_rows, write_evaluation
from app.services.reports.models import (
    CorrectionRow,
    DetectionRow,
    DetectionSummaryRow,
    IsolationRow,
    SimulationRow,
)
from app.storage import read_rows


def _detection(day_id: int, attacked: bool, flagged: bool, classifier: str = "csr") -> DetectionRow:
    return DetectionRow(
        day_id=day_id,
        classifier=classifier,
        attacked=attacked,
        flagged=flagged,
        peak_saliency=0.5,
        peak_slot=3,
        threshold=0.4,
        nearest_cluster=0,
        distance=1.0,
        kind="pulse" if attacked else None,
        magnitude=0.1 if attacked else None,
        planted=(3,) if attacked else (),
    )


def _isolation(day_id: int, magnitude: float, isolated: tuple[int, ...], planted: tuple[int, ...] = (3,)) -> IsolationRow:
    found, truth = set(isolated), set(planted)
    return IsolationRow(
        day_id=day_id,
        isolator="isolation_path",
        kind="pulse",
        magnitude=magnitude,
        planted=planted,
        isolated=isolated,
        exact_match=found == truth,
        jaccard=len(found & truth) / len(found | truth),
        subspaces_scored=12,
    )


def _simulation(day_id: int, scenario: str, method: str, bill_delta: float | None) -> SimulationRow:
    return SimulationRow(
        day_id=day_id,
        scenario=scenario,
        method=method,
        attacked=True,
        magnitude=0.1,
        attacker_bill=9.0,
        attacker_bill_clean=10.0,
        attacker_bill_delta_pct=bill_delta,
        community_cost=100.0,
        community_cost_clean=100.0,
        community_cost_delta_pct=0.0,
        mape_pct=2.0,
        mape_excluded_slots=0,
        converged=True,
        iterations_used=4,
        flagged=False,
        isolated=(),
        diagnostics="",
    )


def _correction(day_id: int, iteration: int, slot: int) -> CorrectionRow:
    return CorrectionRow(
        day_id=day_id,
        method="method-2",
        iteration=iteration,
        slot=slot,
        received=5.0,
        rectified=4.0,
        pattern=4.0,
    )


class TestMergeRows:
    """Merging reports keeps one row per key."""

    def test_duplicates_collapse_in_first_seen_order(self) -> None:
        first = [_detection(2, True, True), _detection(1, False, False)]
        second = [_detection(1, False, False), _detection(5, True, False)]

        merged = merge_rows([first, second], lambda row: row.day_id)

        assert [row.day_id for row in merged] == [2, 1, 5]

    def test_conflicting_rows_raise(self) -> None:
        first = [_detection(1, False, False)]
        second = [_detection(1, False, True)]

        with pytest.raises(ValueError, match="conflicting rows"):
            merge_rows([first, second], lambda row: row.day_id)

    def test_same_day_under_two_classifiers_is_not_a_conflict(self) -> None:
        service = EvaluationService(
            detection=[[_detection(1, True, True, "csr")], [_detection(1, True, False, "sr")]]
        )

        assert len(service.detection_rows) == 2


class TestDetectionSummary:
    """Confusion-matrix metrics per classifier."""

    def test_one_of_each_outcome(self) -> None:
        rows = [
            _detection(1, True, True),
            _detection(2, False, True),
            _detection(3, False, False),
            _detection(4, True, False),
        ]
        summary = EvaluationService(detection=[rows]).detection_summary()

        assert summary == [
            DetectionSummaryRow(
                classifier="csr",
                count=4,
                accuracy=0.5,
                precision=0.5,
                recall=0.5,
                f1=0.5,
                fpr=0.5,
                true_positives=1,
                false_positives=1,
                true_negatives=1,
                false_negatives=1,
            )
        ]

    def test_undefined_rates_are_none(self) -> None:
        summary = EvaluationService(detection=[[_detection(1, True, True, "sr")]]).detection_summary()

        assert summary[0].classifier == "sr"
        assert summary[0].recall == 1.0
        assert summary[0].fpr is None

    def test_classifiers_sorted(self) -> None:
        service = EvaluationService(
            detection=[[_detection(1, True, True, "sr"), _detection(1, True, True, "csr")]]
        )

        assert [row.classifier for row in service.detection_summary()] == ["csr", "sr"]

    def test_passing_a_report_twice_changes_nothing(self) -> None:
        rows = [_detection(1, True, True), _detection(2, False, True)]

        once = EvaluationService(detection=[rows]).detection_summary()
        twice = EvaluationService(detection=[rows, rows]).detection_summary()

        assert once == twice


class TestIsolationViews:
    """Exact-match recall overall and per magnitude."""

    def test_summary_and_buckets(self) -> None:
        rows = [
            _isolation(1, 0.1, (3,)),
            _isolation(2, 0.1, (3, 4)),
            _isolation(3, 0.2, (3,)),
        ]
        service = EvaluationService(isolation=[rows])

        (summary,) = service.isolation_summary()
        assert summary.cases == 3
        assert summary.exact_matches == 2
        assert summary.recall == pytest.approx(2 / 3)
        assert summary.mean_jaccard == pytest.approx((1.0 + 0.5 + 1.0) / 3)

        buckets = service.recall_buckets()
        assert [(b.magnitude, b.cases, b.exact_matches) for b in buckets] == [(0.1, 2, 1), (0.2, 1, 1)]
        assert buckets[0].recall == 0.5
        assert buckets[0].mean_jaccard == pytest.approx(0.75)

    def test_empty_isolation_report(self) -> None:
        service = EvaluationService()

        assert service.isolation_summary() == []
        assert service.recall_buckets() == []


class TestSimulationSummary:
    """Mean and median deltas per scenario and method."""

    def test_groups_and_ignores_undefined_deltas(self) -> None:
        rows = [
            _simulation(1, "attack", "none", -10.0),
            _simulation(2, "attack", "none", -20.0),
            _simulation(3, "attack", "none", None),
            _simulation(1, "mitigated", "method-2", -1.0),
        ]
        summary = EvaluationService(simulation=[rows]).simulation_summary()

        assert [(row.scenario, row.method, row.days) for row in summary] == [
            ("attack", "none", 3),
            ("mitigated", "method-2", 1),
        ]
        assert summary[0].attacker_bill_delta_mean == pytest.approx(-15.0)
        assert summary[0].attacker_bill_delta_median == pytest.approx(-15.0)
        assert summary[0].community_cost_delta_mean == 0.0
        assert summary[1].mape_median == 2.0

    def test_all_deltas_undefined(self) -> None:
        (summary,) = EvaluationService(simulation=[[_simulation(1, "attack", "none", None)]]).simulation_summary()

        assert summary.attacker_bill_delta_mean is None
        assert summary.attacker_bill_delta_median is None


def test_correction_series_is_ordered() -> None:
    rows = [_correction(2, 0, 1), _correction(1, 3, 0), _correction(1, 0, 5), _correction(1, 0, 2)]

    series = EvaluationService(corrections=[rows]).correction_series()

    assert [(row.day_id, row.iteration, row.slot) for row in series] == [
        (1, 0, 2),
        (1, 0, 5),
        (1, 3, 0),
        (2, 0, 1),
    ]


def test_write_evaluation_round_trip(scratch_dir) -> None:
    service = EvaluationService(
        detection=[[_detection(1, True, True), _detection(2, False, False)]],
        isolation=[[_isolation(1, 0.1, (3,))]],
        simulation=[[_simulation(1, "attack", "none", -5.0)]],
        corrections=[[_correction(1, 0, 3)]],
    )
    tables = service.tables()

    written = write_evaluation(tables, scratch_dir / "evaluation")

    assert [path.name for path in written] == [
        "detection_summary.csv",
        "isolation_summary.csv",
        "isolation_recall.csv",
        "simulation_summary.csv",
        "corrections.csv",
    ]
    assert all(path.exists() for path in written)
    assert tuple(read_rows(written[0], DetectionSummaryRow)) == tables.detection
    assert tuple(read_rows(written[4], CorrectionRow)) == tables.corrections


def test_write_evaluation_with_empty_views(scratch_dir) -> None:
    tables = EvaluationService().tables()

    written = write_evaluation(tables, scratch_dir)

    header = written[0].read_text(encoding="utf-8").splitlines()
    assert header[0].startswith("classifier,count,accuracy")
    assert len(header) == 1


def test_rows_differing_only_in_diagnostics_conflict() -> None:
    row = _simulation(1, "attack", "none", -5.0)

    with pytest.raises(ValueError):
        EvaluationService(simulation=[[row], [replace(row, diagnostics="fallback")]])
