"""Synthetic community and forecast corpus generation.

A base community is drawn once from the root seed: houses with appliances
whose preferred starts follow a diurnal mixture (morning and evening peaks
plus a uniform background). Each day re-jitters a share of the appliance
windows from a per-day stream, shifts morning appliances later at weekends
and adds one inflexible attacker device at a high-demand pricing slot. The
genuine forecast of a day is the aggregate of its preferred-start schedules.
A fixed share of the test days carries an attack aimed at the attacker's
slot.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from ..constants import ATTACKER_APPLIANCE_ID, ATTACKER_HOUSE_ID, DEFAULT_MAGNITUDE_LADDER
from ..errors import ConfigError
from ..models import Appliance, DemandForecast, ForecastLabel, House, SlotGrid
from ..utils import ordered_map
from .attacks import (
    AttackKind,
    AttackSpec,
    AttackStrategy,
    controllable_daily_demand,
    forge,
    planted_slots,
)
from .scheduler import aggregate, house_profile

logger = logging.getLogger(__name__)

_MORNING_PEAK = 7.0 / 24.0
_EVENING_PEAK = 19.0 / 24.0
_PEAK_SPREAD = 1.5 / 24.0
_PEAK_WEIGHTS = (0.4, 0.4, 0.2)
_WEEKEND_SHIFT = 4
_WEEKEND_DAYS = frozenset({5, 6})


@dataclass(frozen=True, slots=True)
class GeneratorConfig:
    """Corpus generation parameters.

    Ranges are inclusive ``(low, high)`` pairs. Durations, flexibility and
    jitter are counted in scheduling slots; demand in energy per scheduling
    slot; magnitudes as fractions of controllable daily demand.
    """

    houses: int = 40
    appliances_per_house: tuple[int, int] = (3, 6)
    demand_per_slot: tuple[float, float] = (0.3, 1.5)
    duration: tuple[int, int] = (2, 8)
    penalty_factor: tuple[float, float] = (0.005, 0.03)
    flexibility: tuple[int, int] = (2, 12)
    jitter_fraction: float = 0.3
    jitter_slots: int = 4
    days: int = 200
    attacked_fraction: float = 0.05
    magnitudes: tuple[float, ...] = DEFAULT_MAGNITUDE_LADDER
    attack_kinds: tuple[AttackKind, ...] = tuple(AttackKind)
    max_attack_slots: int = 3
    strategies: tuple[AttackStrategy, ...] = tuple(AttackStrategy)
    train_fraction: float = 2.0 / 3.0
    attacker_demand: float = 1.0
    persistent: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "attack_kinds", tuple(AttackKind(k) for k in self.attack_kinds))
        object.__setattr__(self, "strategies", tuple(AttackStrategy(s) for s in self.strategies))
        object.__setattr__(self, "magnitudes", tuple(float(m) for m in self.magnitudes))
        if self.houses < 1:
            raise ValueError(f"houses must be >= 1, got {self.houses}")
        if self.days < 1:
            raise ValueError(f"days must be >= 1, got {self.days}")
        for name in ("appliances_per_house", "demand_per_slot", "duration", "penalty_factor", "flexibility"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} range is empty: {(low, high)}")
        if self.appliances_per_house[0] < 1:
            raise ValueError("appliances_per_house must start at >= 1")
        if not self.demand_per_slot[0] > 0:
            raise ValueError("demand_per_slot must be > 0")
        if self.duration[0] < 1:
            raise ValueError("duration must be >= 1")
        if self.penalty_factor[0] < 0 or self.flexibility[0] < 0 or self.jitter_slots < 0:
            raise ValueError("penalty_factor, flexibility and jitter_slots must be >= 0")
        if not 0 <= self.jitter_fraction <= 1:
            raise ValueError(f"jitter_fraction must be in [0, 1], got {self.jitter_fraction}")
        if not 0 <= self.attacked_fraction <= 1:
            raise ValueError(f"attacked_fraction must be in [0, 1], got {self.attacked_fraction}")
        if not 0 < self.train_fraction < 1:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if not self.attacker_demand > 0:
            raise ValueError(f"attacker_demand must be > 0, got {self.attacker_demand}")
        if self.max_attack_slots < 1:
            raise ValueError(f"max_attack_slots must be >= 1, got {self.max_attack_slots}")
        if self.attacked_fraction > 0:
            if not self.magnitudes or min(self.magnitudes) <= 0:
                raise ValueError("magnitudes must be a non-empty list of positive fractions")
            if not self.attack_kinds or not self.strategies:
                raise ValueError("attack_kinds and strategies must not be empty")

    @property
    def train_size(self) -> int:
        return int(self.days * self.train_fraction)

    @property
    def attacked_days(self) -> int:
        return int(round(self.attacked_fraction * self.days))


@dataclass(frozen=True, slots=True, eq=False)
class DayRecord:
    """One generated day: community snapshot, genuine forecast and optional attack."""

    day_id: int
    houses: tuple[House, ...]
    genuine: DemandForecast
    attack: AttackSpec | None = None
    attacked: DemandForecast | None = None
    planted: tuple[int, ...] = ()
    strategy: AttackStrategy | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "houses", tuple(self.houses))
        object.__setattr__(self, "planted", tuple(int(slot) for slot in self.planted))
        if (self.attack is None) != (self.attacked is None):
            raise ValueError(f"day {self.day_id}: attack spec and attacked forecast go together")
        if self.attack is not None and not self.planted:
            raise ValueError(f"day {self.day_id}: attacked day without planted slots")

    @property
    def is_attacked(self) -> bool:
        return self.attack is not None

    @property
    def received(self) -> DemandForecast:
        """Forecast the utility receives on this day."""
        return self.attacked if self.attacked is not None else self.genuine

    @property
    def attacker(self) -> House | None:
        for house in self.houses:
            if house.id == ATTACKER_HOUSE_ID:
                return house
        return None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DayRecord):
            return NotImplemented
        return (
            self.day_id == other.day_id
            and self.houses == other.houses
            and self.genuine == other.genuine
            and self.attack == other.attack
            and self.attacked == other.attacked
            and self.planted == other.planted
            and self.strategy == other.strategy
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, slots=True, eq=False)
class Corpus:
    """Generated days in id order; the first ``train_size`` form the train split."""

    grid: SlotGrid
    days: tuple[DayRecord, ...]
    train_size: int
    seed: int = 0
    _index: dict[int, DayRecord] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        days = tuple(sorted(self.days, key=lambda day: day.day_id))
        object.__setattr__(self, "days", days)
        if not 0 <= self.train_size <= len(days):
            raise ValueError(f"train_size {self.train_size} out of range for {len(days)} days")
        for day in days[: self.train_size]:
            if day.is_attacked:
                raise ValueError(f"train split contains attacked day {day.day_id}")
        index = {day.day_id: day for day in days}
        if len(index) != len(days):
            raise ValueError("duplicate day ids in corpus")
        object.__setattr__(self, "_index", index)

    @property
    def train(self) -> tuple[DayRecord, ...]:
        return self.days[: self.train_size]

    @property
    def test(self) -> tuple[DayRecord, ...]:
        return self.days[self.train_size :]

    @property
    def attacked_days(self) -> tuple[DayRecord, ...]:
        return tuple(day for day in self.days if day.is_attacked)

    def day(self, day_id: int) -> DayRecord:
        """Look up a day.

        Raises:
            KeyError: If the corpus has no such day.
        """
        try:
            return self._index[day_id]
        except KeyError:
            raise KeyError(f"corpus has no day {day_id}") from None

    def train_forecasts(self) -> list[DemandForecast]:
        return [day.genuine for day in self.train]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.train_size == other.train_size
            and self.seed == other.seed
            and self.days == other.days
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, slots=True)
class _TemplateAppliance:
    appliance: Appliance
    morning: bool


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    return float(rng.uniform(bounds[0], bounds[1])) if bounds[1] > bounds[0] else float(bounds[0])


def _integer(rng: np.random.Generator, bounds: tuple[int, int]) -> int:
    return int(rng.integers(bounds[0], bounds[1] + 1))


def _preferred_start(rng: np.random.Generator, day_length: int, duration: int) -> tuple[int, bool]:
    component = int(rng.choice(3, p=_PEAK_WEIGHTS))
    if component == 2:
        start = float(rng.uniform(0, day_length))
    else:
        centre = _MORNING_PEAK if component == 0 else _EVENING_PEAK
        start = float(rng.normal(centre * day_length, _PEAK_SPREAD * day_length))
    return int(np.clip(round(start), 0, day_length - duration)), component == 0


def _base_community(
    cfg: GeneratorConfig, grid: SlotGrid, rng: np.random.Generator
) -> list[tuple[str, list[_TemplateAppliance]]]:
    day_length = grid.day_length
    community = []
    for index in range(cfg.houses):
        house_id = f"house-{index:03d}"
        appliances = []
        for number in range(_integer(rng, cfg.appliances_per_house)):
            demand = _uniform(rng, cfg.demand_per_slot)
            duration = min(_integer(rng, cfg.duration), day_length)
            penalty = _uniform(rng, cfg.penalty_factor)
            before = _integer(rng, cfg.flexibility)
            after = _integer(rng, cfg.flexibility)
            preferred, morning = _preferred_start(rng, day_length, duration)
            appliance = Appliance(
                id=f"{house_id}-a{number}",
                demand_per_slot=demand,
                duration=duration,
                earliest_start=max(0, preferred - before),
                latest_finish=min(day_length - 1, preferred + duration - 1 + after),
                preferred_start=preferred,
                penalty_factor=penalty,
            )
            appliances.append(_TemplateAppliance(appliance, morning))
        community.append((house_id, appliances))
    return community


def _shifted(appliance: Appliance, shift: int, day_length: int) -> Appliance:
    shift = max(shift, -appliance.earliest_start)
    shift = min(shift, day_length - 1 - appliance.latest_finish)
    if shift == 0:
        return appliance
    return Appliance(
        id=appliance.id,
        demand_per_slot=appliance.demand_per_slot,
        duration=appliance.duration,
        earliest_start=appliance.earliest_start + shift,
        latest_finish=appliance.latest_finish + shift,
        preferred_start=appliance.preferred_start + shift,
        penalty_factor=appliance.penalty_factor,
    )


def _day_houses(
    community: list[tuple[str, list[_TemplateAppliance]]],
    cfg: GeneratorConfig,
    grid: SlotGrid,
    day_id: int,
    rng: np.random.Generator,
) -> list[House]:
    weekend = day_id % 7 in _WEEKEND_DAYS
    houses = []
    for house_id, template in community:
        appliances = []
        for entry in template:
            shift = 0
            if rng.random() < cfg.jitter_fraction:
                shift += int(rng.integers(-cfg.jitter_slots, cfg.jitter_slots + 1))
            if weekend and entry.morning:
                shift += _WEEKEND_SHIFT
            appliances.append(_shifted(entry.appliance, shift, grid.day_length))
        houses.append(House(house_id, tuple(appliances)))
    return houses


def _attacker_house(slot: int, cfg: GeneratorConfig, grid: SlotGrid) -> House:
    m = grid.scheduling_slots_per_pricing
    device = Appliance(
        id=ATTACKER_APPLIANCE_ID,
        demand_per_slot=cfg.attacker_demand,
        duration=m,
        earliest_start=slot * m,
        latest_finish=slot * m + m - 1,
        preferred_start=slot * m,
        penalty_factor=0.0,
    )
    return House(ATTACKER_HOUSE_ID, (device,))


def _preferred_forecast(houses: Sequence[House], grid: SlotGrid, day_id: int) -> DemandForecast:
    profiles = [house_profile(house, house.preferred_schedule(), grid) for house in houses]
    forecast = aggregate(profiles, grid, day_id=day_id)
    return forecast.replace_values(forecast.values, label=ForecastLabel.NORMAL)


def _attacker_slot(forecast: DemandForecast, rng: np.random.Generator) -> int:
    values = forecast.values
    cutoff = np.quantile(values, 0.75)
    candidates = np.flatnonzero(values >= cutoff)
    return int(rng.choice(candidates))


def _attack_spec(
    cfg: GeneratorConfig, slot: int, pricing_slots: int, rng: np.random.Generator
) -> tuple[AttackSpec, AttackStrategy]:
    kind = cfg.attack_kinds[int(rng.integers(len(cfg.attack_kinds)))]
    magnitude = cfg.magnitudes[int(rng.integers(len(cfg.magnitudes)))]
    strategy = cfg.strategies[int(rng.integers(len(cfg.strategies)))]
    width = min(int(rng.integers(1, cfg.max_attack_slots + 1)), pricing_slots)
    first = int(np.clip(slot - int(rng.integers(width)), 0, pricing_slots - width))
    spec = AttackSpec(
        kind=kind,
        target_slots=tuple(range(first, first + width)),
        magnitude=magnitude,
        seed=int(rng.integers(2**31)),
        persistent=cfg.persistent,
    )
    return spec, strategy


def generate_day(
    community: list[tuple[str, list[_TemplateAppliance]]],
    cfg: GeneratorConfig,
    grid: SlotGrid,
    day: tuple[int, bool],
) -> DayRecord:
    """Build one day from the base community and the day's own random stream.

    Args:
        community: Base community from the root stream.
        cfg: Generation parameters.
        grid: Slot grid.
        day: (day id, whether the day is attacked).
    """
    day_id, attacked = day
    rng = np.random.default_rng([cfg.seed, day_id])
    houses = _day_houses(community, cfg, grid, day_id, rng)
    slot = _attacker_slot(_preferred_forecast(houses, grid, day_id), rng)
    houses.append(_attacker_house(slot, cfg, grid))
    genuine = _preferred_forecast(houses, grid, day_id)
    if not attacked:
        return DayRecord(day_id=day_id, houses=tuple(houses), genuine=genuine)

    spec, strategy = _attack_spec(cfg, slot, grid.pricing_slots, rng)
    forged, fd = forge(genuine, spec, controllable_daily_demand(houses))
    return DayRecord(
        day_id=day_id,
        houses=tuple(houses),
        genuine=genuine,
        attack=spec,
        attacked=forged,
        planted=planted_slots(spec, fd),
        strategy=strategy,
    )


def generate(
    cfg: GeneratorConfig, grid: SlotGrid | None = None, *, workers: int | None = 1
) -> Corpus:
    """Generate a seeded, deterministic corpus.

    Args:
        cfg: Generation parameters.
        grid: Slot grid; defaults to 48 pricing slots of 2 scheduling slots.
        workers: Processes building days; every day has its own seed so the
            corpus does not depend on this.

    Returns:
        Corpus whose attacked days all lie in the test split.

    Raises:
        ConfigError: If the attacked days do not fit in the test split.
    """
    grid = grid or SlotGrid()
    rng = np.random.default_rng(cfg.seed)
    community = _base_community(cfg, grid, rng)

    train_size = cfg.train_size
    test_ids = np.arange(train_size, cfg.days)
    if cfg.attacked_days > test_ids.size:
        raise ConfigError(
            "generator.attacked_fraction",
            f"{cfg.attacked_days} attacked days do not fit in a test split of {test_ids.size} days",
        )
    attacked_ids = {int(day) for day in rng.choice(test_ids, size=cfg.attacked_days, replace=False)}

    days = tuple(
        ordered_map(
            partial(generate_day, community, cfg, grid),
            [(day_id, day_id in attacked_ids) for day_id in range(cfg.days)],
            workers=workers,
        )
    )
    logger.info(
        "Generated %d days (%d train, %d attacked) for %d houses",
        cfg.days, train_size, len(attacked_ids), cfg.houses,
    )
    return Corpus(grid=grid, days=days, train_size=train_size, seed=cfg.seed)


def magnitude_histogram(corpus: Corpus) -> dict[float, int]:
    """Attacked-day count per injection magnitude, ascending."""
    counts: dict[float, int] = {}
    for day in corpus.attacked_days:
        if day.attack is None:
            continue
        counts[day.attack.magnitude] = counts.get(day.attack.magnitude, 0) + 1
    return dict(sorted(counts.items()))
