"""Core value types for the demand-response simulator.

This module contains the immutable dataclasses shared by every other module:
the slot grid, appliances and houses, chosen schedules, aggregated demand
forecasts, and price signals. Types validate themselves on construction;
house-level constraint checks are reported as data by ``validate_house``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .constants import DEFAULT_PRICING_SLOTS, DEFAULT_SCHEDULING_SLOTS_PER_PRICING


def _frozen_vector(values: Iterable[float] | np.ndarray, name: str) -> np.ndarray:
    """Copy values into a read-only 1-d float64 array."""
    array = np.array(values, dtype=np.float64)
    if array.ndim != 1 or array.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d vector, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must contain only finite values")
    array.flags.writeable = False
    return array


@dataclass(frozen=True, slots=True)
class SlotGrid:
    """Day structure: P pricing slots, each split into m scheduling slots."""

    pricing_slots: int = DEFAULT_PRICING_SLOTS
    scheduling_slots_per_pricing: int = DEFAULT_SCHEDULING_SLOTS_PER_PRICING

    def __post_init__(self) -> None:
        if self.pricing_slots < 2:
            raise ValueError(f"pricing_slots must be >= 2, got {self.pricing_slots}")
        if self.scheduling_slots_per_pricing < 2:
            raise ValueError(
                "scheduling_slots_per_pricing must be > 1, "
                f"got {self.scheduling_slots_per_pricing}"
            )

    @property
    def day_length(self) -> int:
        """Number of scheduling slots in a day (D = P x m)."""
        return self.pricing_slots * self.scheduling_slots_per_pricing

    def pricing_slot_of(self, scheduling_slot: int) -> int:
        """Return the pricing slot containing a scheduling slot."""
        return scheduling_slot // self.scheduling_slots_per_pricing

    def to_pricing(self, profile: np.ndarray) -> np.ndarray:
        """Sum each group of m scheduling slots into one pricing slot.

        Args:
            profile: Array whose last axis has length D.

        Returns:
            Array whose last axis has length P.
        """
        values = np.asarray(profile, dtype=np.float64)
        if values.shape[-1] != self.day_length:
            raise ValueError(
                f"profile length {values.shape[-1]} does not match day length {self.day_length}"
            )
        shape = values.shape[:-1] + (self.pricing_slots, self.scheduling_slots_per_pricing)
        return values.reshape(shape).sum(axis=-1)


@dataclass(frozen=True, slots=True)
class Appliance:
    """A shiftable device with a contiguous run of fixed duration.

    Slot indices are zero-based scheduling slots. ``latest_finish`` is the
    last slot the run may occupy, so a start ``s`` is feasible when
    ``earliest_start <= s`` and ``s + duration - 1 <= latest_finish``.
    """

    id: str
    demand_per_slot: float
    duration: int
    earliest_start: int
    latest_finish: int
    preferred_start: int
    penalty_factor: float = 0.0

    @property
    def energy(self) -> float:
        """Energy consumed by one complete run."""
        return self.demand_per_slot * self.duration

    @property
    def last_feasible_start(self) -> int:
        return self.latest_finish - self.duration + 1

    def feasible_starts(self) -> range:
        """Return every start slot inside the appliance window."""
        return range(self.earliest_start, self.last_feasible_start + 1)

    def is_feasible_start(self, start: int) -> bool:
        return self.earliest_start <= start <= self.last_feasible_start

    @property
    def is_flexible(self) -> bool:
        return self.last_feasible_start > self.earliest_start


@dataclass(frozen=True, slots=True)
class House:
    """A household and its ordered appliances."""

    id: str
    appliances: tuple[Appliance, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "appliances", tuple(self.appliances))

    def appliance(self, appliance_id: str) -> Appliance:
        """Look up an appliance by id.

        Raises:
            KeyError: If the house has no such appliance.
        """
        for appliance in self.appliances:
            if appliance.id == appliance_id:
                return appliance
        raise KeyError(f"house {self.id!r} has no appliance {appliance_id!r}")

    def preferred_schedule(self) -> Schedule:
        """Schedule every appliance at its preferred start."""
        return Schedule({appliance.id: appliance.preferred_start for appliance in self.appliances})

    @property
    def controllable_energy(self) -> float:
        return sum(appliance.energy for appliance in self.appliances)


@dataclass(frozen=True, slots=True)
class Schedule:
    """Chosen start slot per appliance id."""

    starts: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "starts", {str(k): int(v) for k, v in dict(self.starts).items()})

    def start_of(self, appliance_id: str) -> int:
        return self.starts[appliance_id]

    def with_start(self, appliance_id: str, start: int) -> Schedule:
        """Return a copy with one appliance moved."""
        starts = dict(self.starts)
        starts[appliance_id] = start
        return Schedule(starts)


class ForecastLabel(StrEnum):
    NORMAL = "normal"
    ATTACKED = "attacked"
    UNKNOWN = "unknown"


@dataclass(frozen=True, slots=True, eq=False)
class DemandForecast:
    """Aggregated demand per slot for one day.

    Values are copied into a read-only float64 array on construction and must
    be finite and non-negative.
    """

    values: np.ndarray
    day_id: int = 0
    label: ForecastLabel = ForecastLabel.UNKNOWN

    def __post_init__(self) -> None:
        values = _frozen_vector(self.values, "forecast values")
        if np.any(values < 0.0):
            raise ValueError(f"forecast values must be >= 0, got minimum {values.min()}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "day_id", int(self.day_id))
        object.__setattr__(self, "label", ForecastLabel(self.label))

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DemandForecast):
            return NotImplemented
        return (
            self.day_id == other.day_id
            and self.label == other.label
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def replace_values(
        self, values: np.ndarray, label: ForecastLabel | None = None
    ) -> DemandForecast:
        """Return a forecast for the same day with new values."""
        return DemandForecast(values, day_id=self.day_id, label=label or self.label)


@dataclass(frozen=True, slots=True, eq=False)
class PriceSignal:
    """Unit price per pricing slot; every price is strictly positive."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = _frozen_vector(self.values, "prices")
        if np.any(values <= 0.0):
            raise ValueError(f"prices must be > 0, got minimum {values.min()}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PriceSignal):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]


def stack_forecasts(forecasts: Sequence[DemandForecast]) -> np.ndarray:
    """Stack forecasts into an (n, length) matrix.

    Raises:
        ValueError: If the sequence is empty or lengths differ.
    """
    if not forecasts:
        raise ValueError("at least one forecast is required")
    length = len(forecasts[0])
    for forecast in forecasts:
        if len(forecast) != length:
            raise ValueError(
                f"forecast for day {forecast.day_id} has length {len(forecast)}, expected {length}"
            )
    return np.vstack([forecast.values for forecast in forecasts])


def validate_house(house: House, grid: SlotGrid) -> list[str]:
    """Check every appliance of a house against the slot grid.

    Args:
        house: House to check.
        grid: Slot grid the house is scheduled on.

    Returns:
        Human-readable violations; empty when the house is valid.
    """
    violations: list[str] = []
    seen: set[str] = set()
    for appliance in house.appliances:
        prefix = f"house {house.id!r} appliance {appliance.id!r}"
        if appliance.id in seen:
            violations.append(f"{prefix}: duplicate appliance id")
        seen.add(appliance.id)
        if not appliance.demand_per_slot > 0:
            violations.append(f"{prefix}: demand_per_slot must be > 0")
        if appliance.duration < 1:
            violations.append(f"{prefix}: duration must be >= 1")
        if appliance.penalty_factor < 0:
            violations.append(f"{prefix}: penalty_factor must be >= 0")
        if appliance.earliest_start < 0:
            violations.append(f"{prefix}: earliest_start must be >= 0")
        if appliance.earliest_start > appliance.preferred_start:
            violations.append(f"{prefix}: preferred_start is before earliest_start")
        if appliance.preferred_start + appliance.duration - 1 > appliance.latest_finish:
            violations.append(f"{prefix}: preferred run overruns latest_finish")
        if appliance.latest_finish >= grid.day_length:
            violations.append(f"{prefix}: latest_finish must be < {grid.day_length}")
        if appliance.latest_finish - appliance.earliest_start + 1 < appliance.duration:
            violations.append(f"{prefix}: feasible window shorter than duration")
    return violations


def schedule_violations(house: House, schedule: Schedule) -> list[str]:
    """Check that a schedule places every appliance inside its window."""
    violations: list[str] = []
    for appliance in house.appliances:
        start = schedule.starts.get(appliance.id)
        if start is None:
            violations.append(f"house {house.id!r}: no start for appliance {appliance.id!r}")
        elif not appliance.is_feasible_start(start):
            violations.append(
                f"house {house.id!r}: start {start} outside window of appliance {appliance.id!r}"
            )
    return violations
