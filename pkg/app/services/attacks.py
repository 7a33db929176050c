"""False data injection on the aggregated forecast.

An attack adds false demand ``fd`` to a few pricing slots of the forecast the
utility receives. The injected energy (the budget) is a fraction of the
community's controllable daily demand; the attack kind decides how the
budget is spread over the target slots. The shapes are this project's own
parameterisation of pulse, scaling, ramping and random attacks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Iterable, Sequence

import numpy as np

from ..models import DemandForecast, ForecastLabel, House

logger = logging.getLogger(__name__)


class AttackKind(StrEnum):
    PULSE = "pulse"
    SCALING = "scaling"
    RAMPING = "ramping"
    RANDOM = "random"


class AttackStrategy(StrEnum):
    """How the budget is carried by compromised households.

    All strategies reach the utility as the same aggregate injection; the
    strategy is kept for reporting.
    """

    SINGLE_HOUSE = "single_house"
    FAKE_DEVICE = "fake_device"
    COLLUDING_HOUSES = "colluding_houses"


_CONTIGUOUS_KINDS = frozenset({AttackKind.PULSE, AttackKind.RAMPING})


@dataclass(frozen=True, slots=True)
class AttackSpec:
    """One attack: kind, target pricing slots and budget fraction.

    Args:
        kind: Shape of the injection.
        target_slots: Pricing-slot indices; contiguous for pulse and ramping.
        magnitude: Budget as a fraction of controllable daily demand. Zero
            is accepted and injects nothing.
        seed: PRNG seed for the random kind.
        persistent: Re-inject at every optimisation iteration.
    """

    kind: AttackKind
    target_slots: tuple[int, ...]
    magnitude: float
    seed: int = 0
    persistent: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", AttackKind(self.kind))
        slots = tuple(int(slot) for slot in self.target_slots)
        object.__setattr__(self, "target_slots", slots)
        if not slots:
            raise ValueError("attack needs at least one target slot")
        if len(set(slots)) != len(slots):
            raise ValueError(f"duplicate target slots in {slots}")
        if min(slots) < 0:
            raise ValueError(f"target slots must be >= 0, got {slots}")
        if not (np.isfinite(self.magnitude) and self.magnitude >= 0):
            raise ValueError(f"magnitude must be >= 0, got {self.magnitude}")
        if self.kind in _CONTIGUOUS_KINDS:
            ordered = sorted(slots)
            if ordered != list(range(ordered[0], ordered[0] + len(ordered))):
                raise ValueError(f"{self.kind} attacks need contiguous slots, got {slots}")

    def check_range(self, pricing_slots: int) -> None:
        """Raise ``ValueError`` if a target slot is outside the forecast."""
        if max(self.target_slots) >= pricing_slots:
            raise ValueError(
                f"target slot {max(self.target_slots)} out of range for {pricing_slots} slots"
            )


@dataclass(slots=True)
class AttackTrace:
    """Injected vectors, one per optimisation iteration."""

    injections: list[np.ndarray] = field(default_factory=list)

    def record(self, fd: np.ndarray) -> None:
        self.injections.append(np.array(fd, dtype=np.float64))

    @property
    def cumulative_energy(self) -> float:
        return float(sum(float(fd.sum()) for fd in self.injections))


def controllable_daily_demand(houses: Iterable[House]) -> float:
    """Total energy of every appliance run in the community."""
    return float(sum(house.controllable_energy for house in houses))


def _shape_weights(spec: AttackSpec, genuine: np.ndarray) -> np.ndarray:
    """Non-negative weights over the target slots summing to 1."""
    count = len(spec.target_slots)
    if spec.kind is AttackKind.PULSE:
        weights = np.ones(count)
    elif spec.kind is AttackKind.RAMPING:
        order = np.argsort(spec.target_slots, kind="stable")
        ramp = np.minimum(np.arange(1, count + 1), np.arange(count, 0, -1)).astype(np.float64)
        weights = np.empty(count)
        weights[order] = ramp
    elif spec.kind is AttackKind.RANDOM:
        weights = np.random.default_rng(spec.seed).random(count)
        if weights.sum() <= 0:
            weights = np.ones(count)
    else:
        weights = genuine[list(spec.target_slots)].astype(np.float64)
        zero = weights <= 0
        if zero.all():
            weights = np.ones(count)
        elif zero.any():
            # Slots without demand cannot be scaled; they get a pulse share.
            share = 1.0 / count
            scaled = weights / weights.sum() * (1.0 - share * zero.sum())
            return np.where(zero, share, scaled)
    return weights / weights.sum()


def forge(
    forecast: DemandForecast,
    spec: AttackSpec,
    controllable_daily_demand: float,
) -> tuple[DemandForecast, np.ndarray]:
    """Inject false demand into a pricing-resolution forecast.

    Args:
        forecast: Genuine forecast.
        spec: Attack to apply.
        controllable_daily_demand: Energy the magnitude is a fraction of.

    Returns:
        (attacked forecast, fd) with ``fd = attacked - genuine``; ``fd`` is
        zero outside the target slots and sums to the budget.

    Raises:
        ValueError: If a target slot is out of range or the controllable
            demand is negative.
    """
    spec.check_range(len(forecast))
    if not controllable_daily_demand >= 0:
        raise ValueError(
            f"controllable_daily_demand must be >= 0, got {controllable_daily_demand}"
        )
    budget = spec.magnitude * controllable_daily_demand
    genuine = forecast.values
    if budget == 0:
        return forecast, np.zeros_like(genuine)

    injection = np.zeros_like(genuine)
    injection[list(spec.target_slots)] = budget * _shape_weights(spec, genuine)
    attacked_values = genuine + injection
    attacked = forecast.replace_values(attacked_values, label=ForecastLabel.ATTACKED)
    logger.debug(
        "Injected %.4f into slots %s of day %d (%s)",
        budget, spec.target_slots, forecast.day_id, spec.kind,
    )
    return attacked, attacked.values - genuine


class AttackHook:
    """Re-injects an attack between aggregation and pricing.

    Persistent attacks are injected at every iteration, others only at
    iteration 0. The injected vectors are kept in ``trace``.
    """

    def __init__(self, spec: AttackSpec, controllable_daily_demand: float) -> None:
        self.spec = spec
        self.controllable_daily_demand = controllable_daily_demand
        self.trace = AttackTrace()
        self._fd: np.ndarray | None = None

    def on_iteration(self, forecast: DemandForecast, iteration: int) -> DemandForecast:
        if self.spec.persistent or iteration == 0:
            attacked, fd = forge(forecast, self.spec, self.controllable_daily_demand)
        else:
            attacked, fd = forecast, np.zeros(len(forecast))
        self._fd = fd
        self.trace.record(fd)
        return attacked

    def reapply(self, values: np.ndarray) -> np.ndarray:
        if self._fd is None:
            return values
        return values + self._fd


def attack_hook(spec: AttackSpec, controllable_daily_demand: float) -> AttackHook:
    """Build the ``run_dr`` hook for an attack."""
    return AttackHook(spec, controllable_daily_demand)


def planted_slots(spec: AttackSpec, fd: Sequence[float] | np.ndarray) -> tuple[int, ...]:
    """Target slots that actually received false demand, ascending."""
    values = np.asarray(fd, dtype=np.float64)
    return tuple(sorted(slot for slot in spec.target_slots if values[slot] > 0))
