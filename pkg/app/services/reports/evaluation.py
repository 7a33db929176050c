"""Evaluation views built from per-day detection, isolation and simulation reports."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Hashable, Iterable, Sequence, TypeVar

from ...storage import write_rows
from ...utils import mean_or_none, median_or_none
from ..detection import classification_metrics
from ..isolation import isolation_recall
from .models import (
    CorrectionRow,
    DetectionRow,
    DetectionSummaryRow,
    IsolationRow,
    IsolationSummaryRow,
    RecallBucketRow,
    SimulationRow,
    SimulationSummaryRow,
)

logger = logging.getLogger(__name__)

RowT = TypeVar("RowT")


def merge_rows(
    reports: Iterable[Sequence[RowT]], key: Callable[[RowT], Hashable]
) -> list[RowT]:
    """Concatenate reports keeping one row per key, in first-seen order.

    Raises:
        ValueError: If two rows share a key but differ.
    """
    merged: dict[Hashable, RowT] = {}
    for report in reports:
        for row in report:
            row_key = key(row)
            existing = merged.get(row_key)
            if existing is None:
                merged[row_key] = row
            elif existing != row:
                raise ValueError(f"conflicting rows for key {row_key!r}")
    return list(merged.values())


def detection_key(row: DetectionRow) -> Hashable:
    return (row.classifier, row.day_id)


def isolation_key(row: IsolationRow) -> Hashable:
    return (row.isolator, row.day_id)


def simulation_key(row: SimulationRow) -> Hashable:
    return (row.scenario, row.method, row.day_id)


def correction_key(row: CorrectionRow) -> Hashable:
    return (row.method, row.day_id, row.iteration, row.slot)


@dataclass(frozen=True, slots=True)
class EvaluationTables:
    detection: tuple[DetectionSummaryRow, ...]
    isolation: tuple[IsolationSummaryRow, ...]
    recall_buckets: tuple[RecallBucketRow, ...]
    simulation: tuple[SimulationSummaryRow, ...]
    corrections: tuple[CorrectionRow, ...]


class EvaluationService:
    """Build the evaluation views from any number of per-day reports.

    Reports of the same kind are merged by key first, so passing a report
    twice changes nothing.
    """

    def __init__(
        self,
        detection: Iterable[Sequence[DetectionRow]] = (),
        isolation: Iterable[Sequence[IsolationRow]] = (),
        simulation: Iterable[Sequence[SimulationRow]] = (),
        corrections: Iterable[Sequence[CorrectionRow]] = (),
    ) -> None:
        self.detection_rows = merge_rows(detection, detection_key)
        self.isolation_rows = merge_rows(isolation, isolation_key)
        self.simulation_rows = merge_rows(simulation, simulation_key)
        self.correction_rows = merge_rows(corrections, correction_key)

    def detection_summary(self) -> list[DetectionSummaryRow]:
        grouped: dict[str, list[DetectionRow]] = defaultdict(list)
        for row in self.detection_rows:
            grouped[row.classifier].append(row)
        summary: list[DetectionSummaryRow] = []
        for classifier in sorted(grouped):
            rows = grouped[classifier]
            metrics = classification_metrics([r.flagged for r in rows], [r.attacked for r in rows])
            summary.append(
                DetectionSummaryRow(
                    classifier=classifier,
                    count=metrics.count,
                    accuracy=metrics.accuracy,
                    precision=metrics.precision,
                    recall=metrics.recall,
                    f1=metrics.f1,
                    fpr=metrics.fpr,
                    true_positives=metrics.true_positives,
                    false_positives=metrics.false_positives,
                    true_negatives=metrics.true_negatives,
                    false_negatives=metrics.false_negatives,
                )
            )
        return summary

    def _isolation_groups(self) -> dict[str, list[IsolationRow]]:
        grouped: dict[str, list[IsolationRow]] = defaultdict(list)
        for row in self.isolation_rows:
            grouped[row.isolator].append(row)
        return {isolator: grouped[isolator] for isolator in sorted(grouped)}

    def isolation_summary(self) -> list[IsolationSummaryRow]:
        summary = []
        for isolator, rows in self._isolation_groups().items():
            hits = sum(row.exact_match for row in rows)
            summary.append(
                IsolationSummaryRow(
                    isolator=isolator,
                    cases=len(rows),
                    exact_matches=hits,
                    recall=hits / len(rows) if rows else None,
                    mean_jaccard=mean_or_none(row.jaccard for row in rows),
                )
            )
        return summary

    def recall_buckets(self) -> list[RecallBucketRow]:
        """One row per isolator and injection magnitude."""
        buckets = []
        for isolator, rows in self._isolation_groups().items():
            for bucket in isolation_recall(
                [row.isolated for row in rows],
                [row.planted for row in rows],
                [row.magnitude for row in rows],
            ):
                buckets.append(
                    RecallBucketRow(
                        isolator=isolator,
                        magnitude=bucket.magnitude,
                        cases=bucket.cases,
                        exact_matches=bucket.exact_matches,
                        recall=bucket.recall,
                        mean_jaccard=bucket.mean_jaccard,
                    )
                )
        return buckets

    def simulation_summary(self) -> list[SimulationSummaryRow]:
        grouped: dict[tuple[str, str], list[SimulationRow]] = defaultdict(list)
        for row in self.simulation_rows:
            grouped[(row.scenario, row.method)].append(row)
        summary = []
        for (scenario, method) in sorted(grouped):
            rows = grouped[(scenario, method)]
            bill = [row.attacker_bill_delta_pct for row in rows]
            cost = [row.community_cost_delta_pct for row in rows]
            error = [row.mape_pct for row in rows]
            summary.append(
                SimulationSummaryRow(
                    scenario=scenario,
                    method=method,
                    days=len(rows),
                    attacker_bill_delta_mean=mean_or_none(bill),
                    attacker_bill_delta_median=median_or_none(bill),
                    community_cost_delta_mean=mean_or_none(cost),
                    community_cost_delta_median=median_or_none(cost),
                    mape_mean=mean_or_none(error),
                    mape_median=median_or_none(error),
                )
            )
        return summary

    def correction_series(self) -> list[CorrectionRow]:
        """Per-iteration rectification audit, ordered for plotting."""
        return sorted(self.correction_rows, key=correction_key)

    def tables(self) -> EvaluationTables:
        return EvaluationTables(
            detection=tuple(self.detection_summary()),
            isolation=tuple(self.isolation_summary()),
            recall_buckets=tuple(self.recall_buckets()),
            simulation=tuple(self.simulation_summary()),
            corrections=tuple(self.correction_series()),
        )


EVALUATION_FILES = {
    "detection": ("detection_summary.csv", DetectionSummaryRow),
    "isolation": ("isolation_summary.csv", IsolationSummaryRow),
    "recall_buckets": ("isolation_recall.csv", RecallBucketRow),
    "simulation": ("simulation_summary.csv", SimulationSummaryRow),
    "corrections": ("corrections.csv", CorrectionRow),
}


def write_evaluation(tables: EvaluationTables, directory: Path) -> list[Path]:
    """Write every view as CSV under ``directory``; returns the written paths."""
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for attribute, (name, row_type) in EVALUATION_FILES.items():
        path = directory / name
        write_rows(path, getattr(tables, attribute), row_type)
        written.append(path)
    logger.info("Wrote %d evaluation views to %s", len(written), directory)
    return written
