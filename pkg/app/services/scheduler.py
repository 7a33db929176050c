"""House scheduling and the iterative community optimisation loop.

``run_dr`` starts every appliance at its preferred slot, then alternates
between pricing the aggregate forecast and letting houses re-schedule in
ascending id order. Forecast hooks sit between aggregation and pricing so an
attack can be injected and a mitigator can rectify what the utility prices.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import StrEnum
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from ..constants import (
    COST_TIE_TOLERANCE,
    DEFAULT_CONVERGENCE_EPS,
    DEFAULT_MAX_ITERATIONS,
    JOINT_SEARCH_LIMIT,
)
from ..models import (
    Appliance,
    DemandForecast,
    House,
    PriceSignal,
    Schedule,
    SlotGrid,
    validate_house,
)
from .pricing import PriceModel, price_signal, total_bill, total_cost, total_penalty

logger = logging.getLogger(__name__)


class ForecastHook(Protocol):
    """Transforms the forecast the utility prices.

    ``on_iteration`` is called exactly once per iteration with the aggregate
    forecast (after earlier hooks) and may update hook state. ``reapply``
    must then reproduce the same transform, without touching state, for the
    intermediate forecasts seen while houses re-schedule within the round.
    It receives arrays whose last axis is the pricing-slot axis.
    """

    def on_iteration(self, forecast: DemandForecast, iteration: int) -> DemandForecast: ...

    def reapply(self, values: np.ndarray) -> np.ndarray: ...


class ResponseMode(StrEnum):
    COMMUNITY = "community"
    PRICE_TAKING = "price_taking"


@dataclass(frozen=True, slots=True)
class DrConfig:
    """Parameters of the optimisation loop."""

    max_iterations: int = DEFAULT_MAX_ITERATIONS
    convergence_eps: float = DEFAULT_CONVERGENCE_EPS
    response: ResponseMode = ResponseMode.COMMUNITY

    def __post_init__(self) -> None:
        object.__setattr__(self, "response", ResponseMode(self.response))
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.convergence_eps >= 0:
            raise ValueError(f"convergence_eps must be >= 0, got {self.convergence_eps}")


@dataclass(frozen=True, slots=True)
class IterationRecord:
    """State of the community at the start of one iteration."""

    iteration: int
    genuine: DemandForecast
    forecast: DemandForecast
    prices: PriceSignal
    total_bill: float
    total_penalty: float
    total_cost: float


@dataclass(frozen=True, slots=True, eq=False)
class DrOutcome:
    """Result of ``run_dr``.

    ``forecast`` is the genuine community forecast of the final schedules;
    ``priced_forecast`` is what the utility priced after hooks.
    """

    schedules: dict[str, Schedule]
    forecast: DemandForecast
    priced_forecast: DemandForecast
    prices: PriceSignal
    trace: tuple[IterationRecord, ...]
    converged: bool
    iterations_used: int
    profiles: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def initial(self) -> IterationRecord:
        return self.trace[0]

    @property
    def final(self) -> IterationRecord:
        return self.trace[-1]


@lru_cache(maxsize=8192)
def _candidate_matrix(appliance: Appliance, grid: SlotGrid) -> tuple[np.ndarray, np.ndarray]:
    """Pricing-slot demand of the appliance for every feasible start.

    Returns:
        (starts, matrix) where ``matrix[j]`` is the length-P demand vector of
        a run starting at ``starts[j]``.
    """
    starts = np.arange(appliance.earliest_start, appliance.last_feasible_start + 1)
    if starts.size == 0:
        raise ValueError(f"appliance {appliance.id!r} has an infeasible window")
    slots = np.arange(grid.day_length)
    occupied = (slots[None, :] >= starts[:, None]) & (
        slots[None, :] < starts[:, None] + appliance.duration
    )
    matrix = grid.to_pricing(occupied * appliance.demand_per_slot)
    starts.flags.writeable = False
    matrix.flags.writeable = False
    return starts, matrix


def _pick_start(starts: np.ndarray, costs: np.ndarray, preferred: int) -> int:
    """Index of the cheapest start; near-ties go to the start closest to preferred."""
    best = float(costs.min())
    tolerance = COST_TIE_TOLERANCE * max(1.0, abs(best))
    candidates = np.flatnonzero(costs <= best + tolerance)
    return int(min(candidates, key=lambda j: (abs(int(starts[j]) - preferred), int(starts[j]))))


def appliance_profile(appliance: Appliance, start: int, grid: SlotGrid) -> np.ndarray:
    """Scheduling-slot demand of one run starting at ``start``."""
    if not appliance.is_feasible_start(start):
        raise ValueError(f"start {start} outside window of appliance {appliance.id!r}")
    profile = np.zeros(grid.day_length)
    profile[start : start + appliance.duration] = appliance.demand_per_slot
    return profile


def house_profile(house: House, schedule: Schedule, grid: SlotGrid) -> np.ndarray:
    """Scheduling-slot demand of a whole house under a schedule."""
    profile = np.zeros(grid.day_length)
    for appliance in house.appliances:
        start = schedule.starts[appliance.id]
        profile[start : start + appliance.duration] += appliance.demand_per_slot
    return profile


def schedule_house(
    house: House, prices: PriceSignal, grid: SlotGrid
) -> tuple[Schedule, np.ndarray]:
    """Best response of one house to a day-ahead price signal.

    Each appliance independently takes the start minimising its bill at the
    given prices plus ``|start - preferred_start| * penalty_factor``. Ties go
    to the start closest to the preferred one, then to the earliest start.

    Args:
        house: House to schedule.
        prices: Unit price per pricing slot.
        grid: Slot grid.

    Returns:
        The chosen schedule and the house demand per scheduling slot.

    Raises:
        ValueError: On an infeasible appliance window or a price length
            that does not match the grid.
    """
    if len(prices) != grid.pricing_slots:
        raise ValueError(f"price signal has {len(prices)} slots, expected {grid.pricing_slots}")
    starts: dict[str, int] = {}
    for appliance in house.appliances:
        candidate_starts, matrix = _candidate_matrix(appliance, grid)
        costs = matrix @ prices.values + (
            np.abs(candidate_starts - appliance.preferred_start) * appliance.penalty_factor
        )
        starts[appliance.id] = int(
            candidate_starts[_pick_start(candidate_starts, costs, appliance.preferred_start)]
        )
    schedule = Schedule(starts)
    return schedule, house_profile(house, schedule, grid)


def aggregate(
    profiles: Sequence[np.ndarray], grid: SlotGrid, day_id: int = 0
) -> DemandForecast:
    """Sum house profiles, then fold scheduling slots into pricing slots.

    Raises:
        ValueError: If a profile does not have the grid's day length.
    """
    total = np.zeros(grid.day_length)
    for profile in profiles:
        values = np.asarray(profile, dtype=np.float64)
        if values.shape != (grid.day_length,):
            raise ValueError(
                f"profile length {values.shape} does not match day length {grid.day_length}"
            )
        total += values
    return DemandForecast(grid.to_pricing(total), day_id=day_id)


def _apply_hooks(hooks: Sequence[ForecastHook], values: np.ndarray) -> np.ndarray:
    for hook in hooks:
        values = hook.reapply(values)
    return values


def _relative_change(previous: float, current: float) -> float:
    scale = max(abs(previous), abs(current), 1e-300)
    return abs(previous - current) / scale


class _CommunityState:
    """Mutable bookkeeping for one ``run_dr`` call."""

    def __init__(self, houses: Sequence[House], grid: SlotGrid) -> None:
        self.houses = list(houses)
        self.grid = grid
        self.schedules = {house.id: house.preferred_schedule() for house in self.houses}
        self.entries = [(house, appliance) for house in self.houses for appliance in house.appliances]
        self.contributions = np.zeros((len(self.entries), grid.pricing_slots))
        for row, (house, appliance) in enumerate(self.entries):
            self.contributions[row] = self._contribution(appliance, appliance.preferred_start)

    def _contribution(self, appliance: Appliance, start: int) -> np.ndarray:
        starts, matrix = _candidate_matrix(appliance, self.grid)
        return matrix[start - int(starts[0])]

    def move(self, row: int, start: int) -> None:
        house, appliance = self.entries[row]
        self.schedules[house.id] = self.schedules[house.id].with_start(appliance.id, start)
        self.contributions[row] = self._contribution(appliance, start)

    def raw_total(self) -> np.ndarray:
        return self.contributions.sum(axis=0)

    def profiles(self) -> dict[str, np.ndarray]:
        return {
            house.id: house_profile(house, self.schedules[house.id], self.grid)
            for house in self.houses
        }


def _community_round(
    state: _CommunityState, price_model: PriceModel, hooks: Sequence[ForecastHook]
) -> bool:
    """Move each appliance to the start minimising the cost the utility observes."""
    changed = False
    for row, (house, appliance) in enumerate(state.entries):
        if not appliance.is_flexible:
            continue
        starts, matrix = _candidate_matrix(appliance, state.grid)
        base = state.raw_total() - state.contributions[row]
        candidates = np.maximum(base[None, :] + matrix, 0.0)
        priced = _apply_hooks(hooks, candidates)
        costs = price_model.slot_costs(priced).sum(axis=1) + (
            np.abs(starts - appliance.preferred_start) * appliance.penalty_factor
        )
        current = state.schedules[house.id].starts[appliance.id]
        current_index = current - int(starts[0])
        chosen = _pick_start(starts, costs, appliance.preferred_start)
        tolerance = COST_TIE_TOLERANCE * max(1.0, abs(float(costs[current_index])))
        if chosen != current_index and costs[chosen] < costs[current_index] - tolerance:
            state.move(row, int(starts[chosen]))
            changed = True
    return changed


def _joint_improvement(
    state: _CommunityState,
    price_model: PriceModel,
    hooks: Sequence[ForecastHook],
    limit: int = JOINT_SEARCH_LIMIT,
) -> bool:
    """Jump to the exhaustive joint optimum of the community cost.

    Single-appliance moves stop at local optima. When the product of the
    flexible appliances' start counts is at most ``limit``, every joint
    combination is scored and the cheapest one is taken if it beats the
    current schedules.

    Returns:
        True if any appliance moved.
    """
    flexible = [row for row, (_, appliance) in enumerate(state.entries) if appliance.is_flexible]
    if not flexible:
        return False
    options = [_candidate_matrix(state.entries[row][1], state.grid) for row in flexible]
    shape = tuple(int(starts.size) for starts, _ in options)
    if math.prod(shape) > limit:
        return False

    slots = state.grid.pricing_slots
    totals = (state.raw_total() - state.contributions[flexible].sum(axis=0))[None, :]
    penalties = np.zeros(1)
    for row, (starts, matrix) in zip(flexible, options):
        appliance = state.entries[row][1]
        shift = np.abs(starts - appliance.preferred_start) * appliance.penalty_factor
        totals = (totals[:, None, :] + matrix[None, :, :]).reshape(-1, slots)
        penalties = (penalties[:, None] + shift[None, :]).reshape(-1)
    priced = _apply_hooks(hooks, np.maximum(totals, 0.0))
    costs = price_model.slot_costs(priced).sum(axis=1) + penalties

    current = int(np.ravel_multi_index(
        tuple(
            state.schedules[state.entries[row][0].id].starts[state.entries[row][1].id] - int(starts[0])
            for row, (starts, _) in zip(flexible, options)
        ),
        shape,
    ))
    best = int(np.argmin(costs))
    tolerance = COST_TIE_TOLERANCE * max(1.0, abs(float(costs[current])))
    if not costs[best] < costs[current] - tolerance:
        return False
    for row, (starts, _), index in zip(flexible, options, np.unravel_index(best, shape)):
        state.move(row, int(starts[int(index)]))
    logger.debug("Joint search lowered community cost from %.6f to %.6f", costs[current], costs[best])
    return True


def _price_taking_round(
    state: _CommunityState, price_model: PriceModel, hooks: Sequence[ForecastHook]
) -> bool:
    """Each house applies ``schedule_house`` to the current day-ahead prices."""
    changed = False
    first_row = 0
    for house in state.houses:
        rows = range(first_row, first_row + len(house.appliances))
        first_row += len(house.appliances)
        priced = _apply_hooks(hooks, np.maximum(state.raw_total(), 0.0))
        prices = PriceSignal(price_model.evaluate(priced))
        schedule, _ = schedule_house(house, prices, state.grid)
        for row, appliance in zip(rows, house.appliances):
            if schedule.starts[appliance.id] != state.schedules[house.id].starts[appliance.id]:
                state.move(row, schedule.starts[appliance.id])
                changed = True
    return changed


def _evaluate(
    state: _CommunityState,
    price_model: PriceModel,
    hooks: Sequence[ForecastHook],
    iteration: int,
    day_id: int,
) -> tuple[IterationRecord, dict[str, np.ndarray]]:
    profiles = state.profiles()
    genuine = aggregate(list(profiles.values()), state.grid, day_id=day_id)
    priced = genuine
    for hook in hooks:
        priced = hook.on_iteration(priced, iteration)
    prices = price_signal(priced, price_model, state.grid.pricing_slots)
    bill = total_bill(genuine, prices)
    penalty = total_penalty(state.houses, [state.schedules[house.id] for house in state.houses])
    record = IterationRecord(
        iteration=iteration,
        genuine=genuine,
        forecast=priced,
        prices=prices,
        total_bill=bill,
        total_penalty=penalty,
        total_cost=total_cost(bill, penalty),
    )
    return record, profiles


def run_dr(
    houses: Sequence[House],
    grid: SlotGrid,
    price_model: PriceModel,
    *,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    convergence_eps: float = DEFAULT_CONVERGENCE_EPS,
    hooks: Sequence[ForecastHook] = (),
    response: ResponseMode = ResponseMode.COMMUNITY,
    day_id: int = 0,
) -> DrOutcome:
    """Run the iterative day-ahead optimisation for a community.

    Iteration 0 prices the preferred-start schedules. Every later iteration
    follows one round in which houses, in ascending id order, re-schedule
    against prices recomputed after each earlier update. The loop stops when
    a round changes nothing or the relative total-cost change drops below
    ``convergence_eps``. In ``community`` mode that stop is first checked
    against the exhaustive joint optimum when the joint start space is at
    most ``JOINT_SEARCH_LIMIT`` combinations; a cheaper joint schedule is
    taken and the rounds continue from it.

    Args:
        houses: Community houses; ids must be unique.
        grid: Slot grid.
        price_model: Day-ahead price curve.
        max_iterations: Upper bound on trace length.
        convergence_eps: Relative cost-change stopping threshold.
        hooks: Forecast transformers applied between aggregation and pricing.
        response: ``community`` moves each appliance to the start that
            minimises the cost the utility observes; ``price_taking`` lets
            each house best-respond to the current prices.
        day_id: Day id stamped on produced forecasts.

    Returns:
        Final schedules, forecasts, prices and the per-iteration trace.

    Raises:
        ValueError: On invalid houses, duplicate house ids or
            ``max_iterations < 1``.
    """
    config = DrConfig(max_iterations, convergence_eps, response)
    ordered = sorted(houses, key=lambda house: house.id)
    ids = [house.id for house in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("house ids must be unique")
    for house in ordered:
        violations = validate_house(house, grid)
        if violations:
            raise ValueError("; ".join(violations))

    state = _CommunityState(ordered, grid)
    community = config.response is ResponseMode.COMMUNITY
    round_fn = _community_round if community else _price_taking_round
    trace: list[IterationRecord] = []
    profiles: dict[str, np.ndarray] = {}
    converged = False
    rounds = 0
    changed = True
    for iteration in range(config.max_iterations):
        record, profiles = _evaluate(state, price_model, hooks, iteration, day_id)
        trace.append(record)
        last = iteration == config.max_iterations - 1
        if iteration > 0 and (
            not changed
            or _relative_change(trace[-2].total_cost, record.total_cost) < config.convergence_eps
        ):
            if last or not community or not _joint_improvement(state, price_model, hooks):
                converged = True
                break
            changed = True
            rounds += 1
            continue
        if last:
            break
        changed = round_fn(state, price_model, hooks)
        rounds += 1

    final = trace[-1]
    if converged:
        logger.debug("Day %d converged after %d rounds (cost %.6f)", day_id, rounds, final.total_cost)
    else:
        logger.info("Day %d did not converge within %d iterations", day_id, config.max_iterations)
    return DrOutcome(
        schedules=dict(state.schedules),
        forecast=final.genuine,
        priced_forecast=final.forecast,
        prices=final.prices,
        trace=tuple(trace),
        converged=converged,
        iterations_used=rounds,
        profiles=profiles,
    )
