"""Typed rows for the per-day reports and the evaluation views.

Every row is flat so it maps one-to-one onto a CSV record. Optional numbers
are ``None`` when the quantity is undefined for the row (for example the
magnitude of an attack-free day).
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True, slots=True)
class DetectionRow:
    """Classifier outcome for one test day."""

    day_id: int
    classifier: str
    attacked: bool
    flagged: bool
    peak_saliency: float
    peak_slot: int
    threshold: float
    nearest_cluster: int | None
    distance: float | None
    kind: str | None
    magnitude: float | None
    planted: tuple[int, ...]


@dataclass(frozen=True, slots=True)
class IsolationRow:
    """Isolator outcome for one flagged, attacked day."""

    day_id: int
    isolator: str
    kind: str
    magnitude: float
    planted: tuple[int, ...]
    isolated: tuple[int, ...]
    exact_match: bool
    jaccard: float
    subspaces_scored: int


@dataclass(frozen=True, slots=True)
class SimulationRow:
    """One day simulated under one scenario, compared with the clean run."""

    day_id: int
    scenario: str
    method: str
    attacked: bool
    magnitude: float | None
    attacker_bill: float
    attacker_bill_clean: float
    attacker_bill_delta_pct: float | None
    community_cost: float
    community_cost_clean: float
    community_cost_delta_pct: float | None
    mape_pct: float | None
    mape_excluded_slots: int
    converged: bool
    iterations_used: int
    flagged: bool
    isolated: tuple[int, ...]
    diagnostics: str


@dataclass(frozen=True, slots=True)
class CorrectionRow:
    """One rectified slot at one optimisation iteration."""

    day_id: int
    method: str
    iteration: int
    slot: int
    received: float
    rectified: float
    pattern: float


@dataclass(frozen=True, slots=True)
class DetectionSummaryRow:
    """Confusion-matrix metrics for one classifier."""

    classifier: str
    count: int
    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    fpr: float | None
    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int


@dataclass(frozen=True, slots=True)
class IsolationSummaryRow:
    """Exact-match and partial-credit isolation scores for one isolator."""

    isolator: str
    cases: int
    exact_matches: int
    recall: float | None
    mean_jaccard: float | None


@dataclass(frozen=True, slots=True)
class RecallBucketRow:
    """Isolation recall for one isolator at one injection magnitude."""

    isolator: str
    magnitude: float
    cases: int
    exact_matches: int
    recall: float
    mean_jaccard: float


@dataclass(frozen=True, slots=True)
class SimulationSummaryRow:
    """Mean and median deltas for one scenario and method."""

    scenario: str
    method: str
    days: int
    attacker_bill_delta_mean: float | None
    attacker_bill_delta_median: float | None
    community_cost_delta_mean: float | None
    community_cost_delta_median: float | None
    mape_mean: float | None
    mape_median: float | None


@dataclass(frozen=True, slots=True)
class FitTraceRow:
    """k-means objective after one Lloyd iteration (0 is the seeding)."""

    iteration: int
    objective: float
