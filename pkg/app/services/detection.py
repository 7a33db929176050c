"""Attack detection: spectral-residual saliency and the CSR / SR classifiers.

The cluster-based spectral residual (CSR) classifier subtracts the nearest
attack-free centroid from the received forecast, whitens the residual's
amplitude spectrum and flags the forecast when the saliency peak reaches the
threshold. The plain SR baseline skips the centroid subtraction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import StrEnum
from typing import Sequence

import numpy as np

from ..constants import DEFAULT_SALIENCY_WINDOW, DEFAULT_THRESHOLD_PERCENTILE, LOG_EPSILON
from ..models import DemandForecast
from .clustering import ClusterModel, closest_centroid

logger = logging.getLogger(__name__)


class SpectralOrder(StrEnum):
    """Sign convention of the spectral residual.

    ``averaged_minus_log`` subtracts the log amplitude from its moving
    average; ``log_minus_averaged`` is the conventional saliency ordering.
    """

    AVERAGED_MINUS_LOG = "averaged_minus_log"
    LOG_MINUS_AVERAGED = "log_minus_averaged"


class ClassifierKind(StrEnum):
    CSR = "csr"
    SR = "sr"


class Verdict(StrEnum):
    ATTACKED = "attacked"
    NORMAL = "normal"


@dataclass(frozen=True, slots=True, eq=False)
class SaliencyMap:
    """Non-negative saliency per pricing slot."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def peak_index(self) -> int:
        return int(np.argmax(self.values))

    @property
    def peak_value(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True, slots=True)
class CsrConfig:
    """Classifier parameters.

    Args:
        q: Moving-average window over the log amplitude spectrum (odd).
        threshold: Saliency cutoff, strictly positive.
        k: Cluster count, ``None`` for the desk-scale default.
        order: Spectral residual sign convention.
        percentile: Percentile used when calibrating the threshold.
    """

    q: int = DEFAULT_SALIENCY_WINDOW
    threshold: float = 0.5
    k: int | None = None
    order: SpectralOrder = SpectralOrder.AVERAGED_MINUS_LOG
    percentile: float = DEFAULT_THRESHOLD_PERCENTILE

    def __post_init__(self) -> None:
        object.__setattr__(self, "order", SpectralOrder(self.order))
        if self.q < 1 or self.q % 2 == 0:
            raise ValueError(f"q must be a positive odd integer, got {self.q}")
        if not self.threshold > 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")
        if self.k is not None and self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0 < self.percentile <= 100:
            raise ValueError(f"percentile must be in (0, 100], got {self.percentile}")

    def with_threshold(self, threshold: float) -> CsrConfig:
        return replace(self, threshold=threshold)


@dataclass(frozen=True, slots=True, eq=False)
class DetectionReport:
    """Classifier output for one forecast."""

    verdict: Verdict
    saliency: SaliencyMap
    residual: np.ndarray
    threshold: float
    nearest_cluster: int | None = None
    distance: float | None = None
    day_id: int = 0

    @property
    def is_attacked(self) -> bool:
        return self.verdict is Verdict.ATTACKED


@dataclass(frozen=True, slots=True)
class ClassificationMetrics:
    """Confusion-matrix metrics; attacked is the positive class.

    A metric is ``None`` when its denominator is empty.
    """

    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    fpr: float | None
    true_positives: int
    false_positives: int
    true_negatives: int
    false_negatives: int

    @property
    def count(self) -> int:
        return self.true_positives + self.false_positives + self.true_negatives + self.false_negatives


def _circular_moving_average(values: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    if half == 0:
        return values.copy()
    padded = np.concatenate([values[-half:], values, values[:half]])
    return np.convolve(padded, np.full(window, 1.0 / window), mode="valid")


def spectral_saliency(
    residual: Sequence[float] | np.ndarray,
    q: int = DEFAULT_SALIENCY_WINDOW,
    order: SpectralOrder = SpectralOrder.AVERAGED_MINUS_LOG,
) -> SaliencyMap:
    """Spectral-residual saliency map of a residual vector.

    Args:
        residual: Length-P residual.
        q: Odd moving-average window over the log amplitude spectrum,
            applied with circular padding.
        order: Which way round the residual of the log spectrum is taken.

    Returns:
        Saliency map of the same length.

    Raises:
        ValueError: If ``q`` is even, non-positive or longer than the residual.
    """
    values = np.asarray(residual, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError(f"residual must be 1-d, got shape {values.shape}")
    if q < 1 or q % 2 == 0:
        raise ValueError(f"q must be a positive odd integer, got {q}")
    if q > values.size:
        raise ValueError(f"q={q} exceeds residual length {values.size}")

    spectrum = np.fft.fft(values)
    amplitude = np.abs(spectrum)
    phase = np.angle(spectrum)
    log_amplitude = np.log(amplitude + LOG_EPSILON)
    averaged = _circular_moving_average(log_amplitude, q)
    if SpectralOrder(order) is SpectralOrder.AVERAGED_MINUS_LOG:
        spectral_residual = averaged - log_amplitude
    else:
        spectral_residual = log_amplitude - averaged
    whitened = np.exp(spectral_residual + 1j * phase)
    # Frequencies with no energy carry no signal.
    whitened[amplitude <= LOG_EPSILON] = 0.0
    return SaliencyMap(np.abs(np.fft.ifft(whitened)))


def _report(
    forecast: DemandForecast,
    residual: np.ndarray,
    cfg: CsrConfig,
    nearest: int | None,
    distance: float | None,
) -> DetectionReport:
    saliency = spectral_saliency(residual, cfg.q, cfg.order)
    verdict = Verdict.ATTACKED if saliency.peak_value >= cfg.threshold else Verdict.NORMAL
    return DetectionReport(
        verdict=verdict,
        saliency=saliency,
        residual=residual,
        threshold=cfg.threshold,
        nearest_cluster=nearest,
        distance=distance,
        day_id=forecast.day_id,
    )


def csr_classify(
    forecast: DemandForecast, model: ClusterModel | None, cfg: CsrConfig
) -> DetectionReport:
    """Classify a forecast against its nearest attack-free centroid.

    Raises:
        ValueError: If no fitted model is given or lengths differ.
    """
    if model is None:
        raise ValueError("csr_classify needs a fitted cluster model")
    index, distance = closest_centroid(forecast, model)
    residual = forecast.values - model.centroids[index]
    return _report(forecast, residual, cfg, index, distance)


def sr_classify(forecast: DemandForecast, cfg: CsrConfig) -> DetectionReport:
    """Spectral-residual baseline on the raw forecast."""
    return _report(forecast, np.array(forecast.values), cfg, None, None)


def classify(
    forecast: DemandForecast,
    model: ClusterModel | None,
    cfg: CsrConfig,
    classifier: ClassifierKind = ClassifierKind.CSR,
) -> DetectionReport:
    """Dispatch to the configured classifier."""
    if ClassifierKind(classifier) is ClassifierKind.CSR:
        return csr_classify(forecast, model, cfg)
    return sr_classify(forecast, cfg)


def peak_saliencies(
    forecasts: Sequence[DemandForecast],
    model: ClusterModel | None,
    cfg: CsrConfig,
    classifier: ClassifierKind = ClassifierKind.CSR,
) -> np.ndarray:
    """Saliency peak of every forecast under the chosen classifier."""
    return np.array(
        [classify(forecast, model, cfg, classifier).saliency.peak_value for forecast in forecasts]
    )


def calibrate_threshold(
    forecasts: Sequence[DemandForecast],
    model: ClusterModel | None,
    cfg: CsrConfig,
    classifier: ClassifierKind = ClassifierKind.CSR,
) -> float:
    """Percentile of the saliency peaks over attack-free forecasts.

    Raises:
        ValueError: If no forecasts are given or the percentile peak is zero.
    """
    if not forecasts:
        raise ValueError("threshold calibration needs at least one forecast")
    peaks = peak_saliencies(forecasts, model, cfg, classifier)
    threshold = float(np.percentile(peaks, cfg.percentile))
    if threshold <= 0:
        raise ValueError(
            f"calibrated threshold is {threshold} at percentile {cfg.percentile}; set one explicitly"
        )
    logger.info(
        "Calibrated %s threshold %.6f at percentile %.1f over %d forecasts",
        ClassifierKind(classifier), threshold, cfg.percentile, len(forecasts),
    )
    return threshold


def _ratio(numerator: int, denominator: int) -> float | None:
    return numerator / denominator if denominator else None


def classification_metrics(
    verdicts: Sequence[bool | Verdict], truth: Sequence[bool]
) -> ClassificationMetrics:
    """Accuracy, precision, recall, F1 and false positive rate.

    Args:
        verdicts: Predicted attacked flags (or verdicts).
        truth: True attacked flags.

    Raises:
        ValueError: If the sequences differ in length or are empty.
    """
    if len(verdicts) != len(truth):
        raise ValueError(f"{len(verdicts)} verdicts but {len(truth)} truth labels")
    if len(truth) == 0:
        raise ValueError("no verdicts to score")
    predicted = [v is Verdict.ATTACKED if isinstance(v, Verdict) else bool(v) for v in verdicts]
    actual = [bool(t) for t in truth]
    tp = sum(p and a for p, a in zip(predicted, actual))
    fp = sum(p and not a for p, a in zip(predicted, actual))
    tn = sum(not p and not a for p, a in zip(predicted, actual))
    fn = sum(not p and a for p, a in zip(predicted, actual))

    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return ClassificationMetrics(
        accuracy=(tp + tn) / len(actual),
        precision=precision,
        recall=recall,
        f1=f1,
        fpr=_ratio(fp, fp + tn),
        true_positives=tp,
        false_positives=fp,
        true_negatives=tn,
        false_negatives=fn,
    )
