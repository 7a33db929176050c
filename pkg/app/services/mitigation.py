"""Rectification of attacked forecasts during the optimisation loop.

Six built-in methods combine a legitimate-pattern basis (nearest centroid,
nearest centroid re-derived after a first correction, or linear
extrapolation from the slots before the attack) with a fixed or adaptive
rectification. Fixed rectification pins the attacked slots to the pattern
for the rest of the run; adaptive rectification follows the change of the
received forecast between iterations, which cancels a stationary injection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import StrEnum
from typing import Callable, Protocol, Sequence

import numpy as np

from ..constants import DEFAULT_HISTORY_WINDOW
from ..errors import DrSimError
from ..models import DemandForecast
from .clustering import ClusterModel, closest_centroid
from .detection import DetectionReport
from .isolation import IsolationVerdict

logger = logging.getLogger(__name__)


class MitigationBasis(StrEnum):
    SINGLE_CLUSTER = "single_cluster"
    DOUBLE_CLUSTER = "double_cluster"
    INTERPOLATION = "interpolation"


class Rectification(StrEnum):
    FIXED = "fixed"
    ADAPTIVE = "adaptive"


class ScreeningMode(StrEnum):
    """When the mitigation hook runs the detector.

    ``initial`` classifies only the forecast received at iteration 0;
    ``every`` keeps classifying until the first forecast is flagged.
    """

    INITIAL = "initial"
    EVERY = "every"


_BASIS_BY_PAIR = (
    MitigationBasis.SINGLE_CLUSTER,
    MitigationBasis.DOUBLE_CLUSTER,
    MitigationBasis.INTERPOLATION,
)


@dataclass(frozen=True, slots=True)
class MitigationMethod:
    """One of the six basis/rectification combinations.

    Methods are numbered 1 to 6: odd numbers are fixed, even numbers adaptive;
    1-2 single cluster, 3-4 double cluster, 5-6 interpolation.
    """

    basis: MitigationBasis
    rectification: Rectification

    def __post_init__(self) -> None:
        object.__setattr__(self, "basis", MitigationBasis(self.basis))
        object.__setattr__(self, "rectification", Rectification(self.rectification))

    @classmethod
    def from_number(cls, number: int) -> MitigationMethod:
        if not 1 <= number <= 6:
            raise ValueError(f"mitigation method must be 1-6, got {number}")
        basis = _BASIS_BY_PAIR[(number - 1) // 2]
        rectification = Rectification.FIXED if number % 2 else Rectification.ADAPTIVE
        return cls(basis, rectification)

    @property
    def number(self) -> int:
        offset = 1 if self.rectification is Rectification.ADAPTIVE else 0
        return 2 * _BASIS_BY_PAIR.index(self.basis) + 1 + offset

    @property
    def label(self) -> str:
        return f"method-{self.number}"


ALL_METHODS = tuple(MitigationMethod.from_number(number) for number in range(1, 7))


@dataclass(frozen=True, slots=True, eq=False)
class MitigationState:
    """Legitimate pattern and bookkeeping carried between iterations.

    ``basis`` is the basis actually used, which differs from
    ``method.basis`` after an interpolation fallback.
    """

    pattern: np.ndarray
    attacked_slots: tuple[int, ...]
    method: MitigationMethod
    basis: MitigationBasis
    previous: np.ndarray | None = None
    diagnostics: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        slots = tuple(sorted(int(slot) for slot in self.attacked_slots))
        if not slots:
            raise ValueError("mitigation state needs at least one attacked slot")
        pattern = np.array(self.pattern, dtype=np.float64)
        if slots[0] < 0 or slots[-1] >= pattern.size:
            raise ValueError(f"attacked slots {slots} out of range for {pattern.size} slots")
        pattern.flags.writeable = False
        object.__setattr__(self, "pattern", pattern)
        object.__setattr__(self, "attacked_slots", slots)
        if self.previous is not None:
            previous = np.array(self.previous, dtype=np.float64)
            if previous.shape != pattern.shape:
                raise ValueError("previous forecast and pattern lengths differ")
            previous.flags.writeable = False
            object.__setattr__(self, "previous", previous)


@dataclass(frozen=True, slots=True)
class CorrectionRecord:
    """One rectified slot at one iteration."""

    day_id: int
    iteration: int
    slot: int
    received: float
    rectified: float
    pattern: float


@dataclass(frozen=True, slots=True)
class MapeResult:
    """Mean absolute percentage error; ``percent`` is ``None`` when every reference slot is zero."""

    percent: float | None
    used_slots: int
    excluded_slots: int


def _check_slots(slots: Sequence[int], length: int) -> list[int]:
    chosen = sorted({int(slot) for slot in slots})
    if not chosen:
        raise ValueError("at least one attacked slot is required")
    if chosen[0] < 0 or chosen[-1] >= length:
        raise ValueError(f"attacked slots {chosen} out of range for {length} slots")
    return chosen


def _nearest_pattern(values: np.ndarray, model: ClusterModel) -> np.ndarray:
    index, _ = closest_centroid(values, model)
    return np.array(model.centroids[index])


def _extrapolate(values: np.ndarray, slots: list[int], history_window: int) -> np.ndarray:
    earliest = slots[0]
    start = max(0, earliest - history_window)
    history = np.arange(start, earliest)
    slope, intercept = np.polyfit(history, values[start:earliest], 1)
    pattern = values.copy()
    pattern[slots] = np.maximum(slope * np.asarray(slots) + intercept, 0.0)
    return pattern


def correct_initial(
    attacked: DemandForecast,
    slots: Sequence[int],
    method: MitigationMethod,
    model: ClusterModel | None,
    *,
    history_window: int = DEFAULT_HISTORY_WINDOW,
) -> tuple[DemandForecast, MitigationState]:
    """Replace the attacked slots of the first flagged forecast.

    Args:
        attacked: Forecast received by the utility.
        slots: Attacked slots from the isolator.
        method: Basis and rectification.
        model: Fitted cluster model; required unless the basis is
            interpolation.
        history_window: Slots before the earliest attacked slot fitted by
            the interpolation basis.

    Returns:
        The rectified forecast and the state for later iterations. Slots
        outside ``slots`` are returned unchanged.

    Raises:
        ValueError: On empty or out-of-range slots, or a missing model.
    """
    values = np.array(attacked.values)
    chosen = _check_slots(slots, values.size)
    basis = method.basis
    diagnostics: list[str] = []
    if basis is MitigationBasis.INTERPOLATION and chosen[0] < 2:
        message = (
            f"day {attacked.day_id}: attacked slot {chosen[0]} leaves too little history "
            "to interpolate; using the single cluster basis"
        )
        logger.warning("%s", message)
        diagnostics.append(message)
        basis = MitigationBasis.SINGLE_CLUSTER
    if basis is not MitigationBasis.INTERPOLATION and model is None:
        raise ValueError(f"{basis} rectification needs a fitted cluster model")

    rectified = values.copy()
    if basis is MitigationBasis.INTERPOLATION:
        pattern = _extrapolate(values, chosen, history_window)
        rectified[chosen] = pattern[chosen]
    else:
        pattern = _nearest_pattern(values, model)
        rectified[chosen] = pattern[chosen]
        if basis is MitigationBasis.DOUBLE_CLUSTER:
            pattern = _nearest_pattern(rectified, model)
            rectified[chosen] = pattern[chosen]
    rectified[chosen] = np.maximum(rectified[chosen], 0.0)

    state = MitigationState(
        pattern=pattern,
        attacked_slots=tuple(chosen),
        method=method,
        basis=basis,
        previous=values,
        diagnostics=tuple(diagnostics),
    )
    return attacked.replace_values(rectified), state


def correct_iteration(
    current: DemandForecast, state: MitigationState
) -> tuple[DemandForecast, MitigationState]:
    """Rectify the forecast received at a later iteration.

    Fixed rectification writes the pattern into the attacked slots. Adaptive
    rectification writes ``pattern - (previous - current)`` and then makes
    that the new pattern, with ``current`` as the new previous forecast.

    Raises:
        ValueError: If the forecast length differs from the state's.
    """
    values = np.array(current.values)
    if values.shape != state.pattern.shape:
        raise ValueError(
            f"forecast length {values.size} does not match mitigation state {state.pattern.size}"
        )
    slots = list(state.attacked_slots)
    rectified = values.copy()
    if state.method.rectification is Rectification.FIXED:
        rectified[slots] = state.pattern[slots]
        return current.replace_values(rectified), replace(state, previous=values)

    previous = state.previous if state.previous is not None else values
    delta = previous[slots] - values[slots]
    rectified[slots] = np.maximum(state.pattern[slots] - delta, 0.0)
    pattern = np.array(state.pattern)
    pattern[slots] = rectified[slots]
    return current.replace_values(rectified), replace(state, pattern=pattern, previous=values)


def apply_correction(values: np.ndarray, state: MitigationState) -> np.ndarray:
    """Rectify arrays of candidate forecasts the way the next iteration will.

    Works on any array whose last axis is the pricing-slot axis and leaves
    the state untouched.
    """
    corrected = np.array(values, dtype=np.float64)
    slots = list(state.attacked_slots)
    if state.method.rectification is Rectification.FIXED:
        corrected[..., slots] = state.pattern[slots]
        return corrected
    previous = state.previous if state.previous is not None else state.pattern
    shift = state.pattern[slots] - previous[slots]
    corrected[..., slots] = np.maximum(corrected[..., slots] + shift, 0.0)
    return corrected


class Rectifier(Protocol):
    """Pluggable rectification used by ``MitigationHook``."""

    def correct_initial(
        self, attacked: DemandForecast, slots: Sequence[int]
    ) -> tuple[DemandForecast, MitigationState]: ...

    def correct_iteration(
        self, current: DemandForecast, state: MitigationState
    ) -> tuple[DemandForecast, MitigationState]: ...

    def apply(self, values: np.ndarray, state: MitigationState) -> np.ndarray: ...


class MethodRectifier:
    """Built-in rectifier for the six numbered methods."""

    def __init__(
        self,
        method: MitigationMethod,
        model: ClusterModel | None,
        history_window: int = DEFAULT_HISTORY_WINDOW,
    ) -> None:
        if history_window < 2:
            raise ValueError(f"history_window must be >= 2, got {history_window}")
        self.method = method
        self.model = model
        self.history_window = history_window

    def correct_initial(
        self, attacked: DemandForecast, slots: Sequence[int]
    ) -> tuple[DemandForecast, MitigationState]:
        return correct_initial(
            attacked, slots, self.method, self.model, history_window=self.history_window
        )

    def correct_iteration(
        self, current: DemandForecast, state: MitigationState
    ) -> tuple[DemandForecast, MitigationState]:
        return correct_iteration(current, state)

    def apply(self, values: np.ndarray, state: MitigationState) -> np.ndarray:
        return apply_correction(values, state)


Detector = Callable[[DemandForecast], DetectionReport]
Isolator = Callable[[DemandForecast, DetectionReport], IsolationVerdict]


class MitigationHook:
    """Detects, isolates and rectifies inside ``run_dr``.

    Once a forecast is flagged and isolated, its attacked slots stay fixed
    for the rest of the run and every later forecast is rectified. Detector
    or isolator failures are logged and kept in ``diagnostics``; the
    forecast then passes through unchanged.
    """

    def __init__(
        self,
        rectifier: Rectifier,
        detector: Detector,
        isolator: Isolator,
        *,
        screening: ScreeningMode = ScreeningMode.INITIAL,
    ) -> None:
        self.rectifier = rectifier
        self.detector = detector
        self.isolator = isolator
        self.screening = ScreeningMode(screening)
        self.state: MitigationState | None = None
        self.report: DetectionReport | None = None
        self.verdict: IsolationVerdict | None = None
        self.audit: list[CorrectionRecord] = []
        self.diagnostics: list[str] = []

    @property
    def flagged(self) -> bool:
        return self.report is not None and self.report.is_attacked

    def _note(self, message: str) -> None:
        logger.warning("%s", message)
        self.diagnostics.append(message)

    def _record(self, iteration: int, received: DemandForecast, rectified: DemandForecast) -> None:
        state = self.state
        if state is None:
            return
        for slot in state.attacked_slots:
            self.audit.append(
                CorrectionRecord(
                    day_id=received.day_id,
                    iteration=iteration,
                    slot=slot,
                    received=float(received.values[slot]),
                    rectified=float(rectified.values[slot]),
                    pattern=float(state.pattern[slot]),
                )
            )

    def _screen(self, forecast: DemandForecast, iteration: int) -> DemandForecast:
        try:
            report = self.detector(forecast)
        except (ValueError, DrSimError) as exc:
            self._note(f"day {forecast.day_id} iteration {iteration}: detector failed: {exc}")
            return forecast
        if not report.is_attacked:
            return forecast
        self.report = report
        try:
            verdict = self.isolator(forecast, report)
        except (ValueError, DrSimError) as exc:
            self._note(f"day {forecast.day_id} iteration {iteration}: isolator failed: {exc}")
            return forecast
        self.verdict = verdict
        if verdict.is_empty:
            self._note(
                f"day {forecast.day_id} iteration {iteration}: "
                "forecast flagged but no slots isolated; passing through"
            )
            return forecast
        rectified, self.state = self.rectifier.correct_initial(forecast, verdict.attacked_slots)
        self.diagnostics.extend(self.state.diagnostics)
        logger.debug(
            "Day %d: rectifying slots %s from iteration %d",
            forecast.day_id, self.state.attacked_slots, iteration,
        )
        self._record(iteration, forecast, rectified)
        return rectified

    def on_iteration(self, forecast: DemandForecast, iteration: int) -> DemandForecast:
        if self.state is not None:
            rectified, self.state = self.rectifier.correct_iteration(forecast, self.state)
            self._record(iteration, forecast, rectified)
            return rectified
        if self.flagged:
            return forecast
        if self.screening is ScreeningMode.INITIAL and iteration > 0:
            return forecast
        return self._screen(forecast, iteration)

    def reapply(self, values: np.ndarray) -> np.ndarray:
        if self.state is None:
            return values
        return self.rectifier.apply(values, self.state)


def mitigation_hook(
    method: MitigationMethod,
    model: ClusterModel | None,
    detector: Detector,
    isolator: Isolator,
    *,
    history_window: int = DEFAULT_HISTORY_WINDOW,
    screening: ScreeningMode = ScreeningMode.INITIAL,
) -> MitigationHook:
    """Build the ``run_dr`` hook for one of the numbered methods."""
    return MitigationHook(
        MethodRectifier(method, model, history_window),
        detector,
        isolator,
        screening=screening,
    )


def mape(
    rectified: DemandForecast | np.ndarray, attack_free: DemandForecast | np.ndarray
) -> MapeResult:
    """Mean absolute percentage error of ``rectified`` against ``attack_free``.

    Slots where the attack-free value is zero are excluded and counted.

    Raises:
        ValueError: If the lengths differ.
    """
    actual = rectified.values if isinstance(rectified, DemandForecast) else np.asarray(rectified, float)
    reference = (
        attack_free.values if isinstance(attack_free, DemandForecast) else np.asarray(attack_free, float)
    )
    if actual.shape != reference.shape:
        raise ValueError(f"length mismatch: {actual.shape} vs {reference.shape}")
    usable = reference != 0
    used = int(usable.sum())
    if used == 0:
        return MapeResult(percent=None, used_slots=0, excluded_slots=int(reference.size))
    errors = np.abs(actual[usable] - reference[usable]) / np.abs(reference[usable])
    return MapeResult(
        percent=float(errors.mean() * 100.0),
        used_slots=used,
        excluded_slots=int(reference.size - used),
    )
