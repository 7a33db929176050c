"""Day-ahead pricing and the community cost algebra.

Unit prices are a monotone function of the demand in the same pricing slot.
Total bill, total penalty and total cost follow the usual demand-response
definitions: bill is demand times unit price summed over slots, penalty is
start displacement times penalty factor summed over appliances.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import StrEnum
from typing import Sequence

import numpy as np

from ..constants import DEFAULT_PRICE_BASE, DEFAULT_PRICE_SLOPE, PRICE_FLOOR
from ..models import DemandForecast, House, PriceSignal, Schedule


class PriceForm(StrEnum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"


@dataclass(frozen=True, slots=True)
class PriceModel:
    """Unit price ``base + slope * (d / reference_demand) ** power``.

    ``power`` is 1 for the linear form and 2 for the quadratic form.
    Prices never drop below ``PRICE_FLOOR``.
    """

    form: PriceForm = PriceForm.QUADRATIC
    base: float = DEFAULT_PRICE_BASE
    slope: float = DEFAULT_PRICE_SLOPE
    reference_demand: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "form", PriceForm(self.form))
        if not self.base >= 0:
            raise ValueError(f"price base must be >= 0, got {self.base}")
        if not self.slope > 0:
            raise ValueError(f"price slope must be > 0, got {self.slope}")
        if not self.reference_demand > 0:
            raise ValueError(f"reference_demand must be > 0, got {self.reference_demand}")

    def scaled_to(self, reference_demand: float) -> PriceModel:
        """Return the same curve normalised by a different reference demand."""
        return replace(self, reference_demand=reference_demand)

    def evaluate(self, demand: np.ndarray | float) -> np.ndarray:
        """Vectorised unit price for any array of demands.

        Raises:
            ValueError: If any demand is negative.
        """
        values = np.asarray(demand, dtype=np.float64)
        if np.any(values < 0.0):
            raise ValueError(f"demand must be >= 0, got minimum {values.min()}")
        ratio = values / self.reference_demand
        if self.form is PriceForm.QUADRATIC:
            ratio = ratio * ratio
        return np.maximum(self.base + self.slope * ratio, PRICE_FLOOR)

    def slot_costs(self, demand: np.ndarray) -> np.ndarray:
        """Demand times its own unit price, element-wise."""
        values = np.asarray(demand, dtype=np.float64)
        return values * self.evaluate(values)


def unit_price(demand: float, model: PriceModel) -> float:
    """Price of one energy unit in a slot carrying ``demand``."""
    if demand < 0:
        raise ValueError(f"demand must be >= 0, got {demand}")
    return float(model.evaluate(demand))


def price_signal(
    forecast: DemandForecast,
    model: PriceModel,
    pricing_slots: int | None = None,
) -> PriceSignal:
    """Price every slot of a pricing-resolution forecast.

    Args:
        forecast: Forecast with one value per pricing slot.
        model: Price curve.
        pricing_slots: Expected length; checked when given.

    Raises:
        ValueError: On a length mismatch.
    """
    if pricing_slots is not None and len(forecast) != pricing_slots:
        raise ValueError(
            f"forecast has {len(forecast)} slots, expected {pricing_slots} pricing slots"
        )
    return PriceSignal(model.evaluate(forecast.values))


def total_bill(forecast: DemandForecast, prices: PriceSignal) -> float:
    """Sum over slots of aggregated demand times unit price."""
    if len(forecast) != len(prices):
        raise ValueError(f"forecast length {len(forecast)} != price length {len(prices)}")
    return float(np.dot(forecast.values, prices.values))


def total_penalty(houses: Sequence[House], schedules: Sequence[Schedule]) -> float:
    """Sum of start displacement times penalty factor over all appliances.

    Args:
        houses: Houses in any order.
        schedules: One schedule per house, aligned with ``houses``.

    Raises:
        ValueError: If the sequences differ in length or a schedule misses
            an appliance.
    """
    if len(houses) != len(schedules):
        raise ValueError(f"{len(houses)} houses but {len(schedules)} schedules")
    penalty = 0.0
    for house, schedule in zip(houses, schedules):
        for appliance in house.appliances:
            start = schedule.starts.get(appliance.id)
            if start is None:
                raise ValueError(
                    f"schedule for house {house.id!r} misses appliance {appliance.id!r}"
                )
            penalty += abs(start - appliance.preferred_start) * appliance.penalty_factor
    return penalty


def total_cost(bill: float, penalty: float) -> float:
    """Community total cost: bill plus penalty."""
    if bill < 0 or penalty < 0:
        raise ValueError(f"bill and penalty must be >= 0, got {bill} and {penalty}")
    return bill + penalty
