"""Per-day report rows and the evaluation views built from them."""

from .evaluation import EvaluationService, EvaluationTables, merge_rows, write_evaluation
from .models import (
    CorrectionRow,
    DetectionRow,
    DetectionSummaryRow,
    FitTraceRow,
    IsolationRow,
    IsolationSummaryRow,
    RecallBucketRow,
    SimulationRow,
    SimulationSummaryRow,
)

__all__ = [
    "CorrectionRow",
    "DetectionRow",
    "DetectionSummaryRow",
    "EvaluationService",
    "EvaluationTables",
    "FitTraceRow",
    "IsolationRow",
    "IsolationSummaryRow",
    "RecallBucketRow",
    "SimulationRow",
    "SimulationSummaryRow",
    "merge_rows",
    "write_evaluation",
]
