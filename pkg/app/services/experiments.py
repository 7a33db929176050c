"""Experiment runs over a corpus: detection, isolation and simulation.

Each function works per day and hands the days to ``ordered_map`` so rows
come back in day order for any worker count. Simulations always run the
clean scenario alongside the requested one; deltas and MAPE are taken
against that clean run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import StrEnum
from functools import partial
from typing import Sequence

import numpy as np

from ..constants import ATTACKER_HOUSE_ID
from ..errors import ContractError
from ..models import DemandForecast, House, SlotGrid
from ..utils import ordered_map, percent_delta
from .attacks import attack_hook, controllable_daily_demand
from .clustering import ClusterModel
from .detection import ClassifierKind, CsrConfig, DetectionReport, calibrate_threshold, classify
from .generator import Corpus, DayRecord
from .isolation import IsolationConfig, IsolationMethod, IsolationVerdict, isolate, jaccard
from .mitigation import MitigationHook, MitigationMethod, ScreeningMode, mape, mitigation_hook
from .pricing import PriceModel, total_cost, total_penalty
from .reports.models import CorrectionRow, DetectionRow, IsolationRow, SimulationRow
from .scheduler import DrConfig, DrOutcome, ForecastHook, run_dr

logger = logging.getLogger(__name__)


class Scenario(StrEnum):
    CLEAN = "clean"
    ATTACK = "attack"
    MITIGATED = "mitigated"


@dataclass(frozen=True, slots=True)
class DetectionPlan:
    """Classifier choice and its parameters, threshold included."""

    classifier: ClassifierKind = ClassifierKind.CSR
    csr: CsrConfig = field(default_factory=CsrConfig)

    def detect(self, forecast: DemandForecast, model: ClusterModel | None) -> DetectionReport:
        return classify(forecast, model, self.csr, self.classifier)


@dataclass(frozen=True, slots=True)
class SimulationPlan:
    """Everything a worker needs to simulate one day.

    ``auto_reference`` scales the price curve to each day's mean genuine
    demand per pricing slot.
    """

    price_model: PriceModel = field(default_factory=PriceModel)
    auto_reference: bool = True
    dr: DrConfig = field(default_factory=DrConfig)
    detection: DetectionPlan = field(default_factory=DetectionPlan)
    isolator: IsolationMethod = IsolationMethod.ISOLATION_PATH
    isolation: IsolationConfig = field(default_factory=IsolationConfig)
    method: MitigationMethod | None = None
    history_window: int = 4
    screening: ScreeningMode = ScreeningMode.INITIAL


@dataclass(frozen=True, slots=True, eq=False)
class DaySimulation:
    """Clean and scenario outcomes of one day with its report rows."""

    clean: DrOutcome
    outcome: DrOutcome
    row: SimulationRow
    corrections: tuple[CorrectionRow, ...] = ()


def calibrated_plan(
    corpus: Corpus,
    model: ClusterModel | None,
    plan: DetectionPlan,
    threshold: float | None = None,
) -> DetectionPlan:
    """Fix the detection threshold, calibrating on the train split when none is given."""
    if threshold is None:
        threshold = calibrate_threshold(corpus.train_forecasts(), model, plan.csr, plan.classifier)
    return DetectionPlan(plan.classifier, plan.csr.with_threshold(threshold))


def _detect_day(day: DayRecord, model: ClusterModel | None, plan: DetectionPlan) -> DetectionRow:
    report = plan.detect(day.received, model)
    return DetectionRow(
        day_id=day.day_id,
        classifier=str(plan.classifier),
        attacked=day.is_attacked,
        flagged=report.is_attacked,
        peak_saliency=report.saliency.peak_value,
        peak_slot=report.saliency.peak_index,
        threshold=report.threshold,
        nearest_cluster=report.nearest_cluster,
        distance=report.distance,
        kind=str(day.attack.kind) if day.attack is not None else None,
        magnitude=day.attack.magnitude if day.attack is not None else None,
        planted=day.planted,
    )


def run_detection(
    corpus: Corpus,
    model: ClusterModel | None,
    plan: DetectionPlan,
    *,
    workers: int | None = 1,
) -> list[DetectionRow]:
    """Classify every test-split forecast the utility receives."""
    rows = ordered_map(partial(_detect_day, model=model, plan=plan), corpus.test, workers=workers)
    logger.info(
        "Classified %d test forecasts with %s: %d flagged",
        len(rows), plan.classifier, sum(row.flagged for row in rows),
    )
    return rows


def _isolate_day(
    day: DayRecord,
    model: ClusterModel,
    plan: DetectionPlan,
    isolator: IsolationMethod,
    cfg: IsolationConfig,
) -> IsolationRow | None:
    if day.attack is None:
        return None
    report = plan.detect(day.received, model)
    if not report.is_attacked:
        return None
    verdict: IsolationVerdict = isolate(isolator, day.received, report, model, cfg)
    return IsolationRow(
        day_id=day.day_id,
        isolator=str(isolator),
        kind=str(day.attack.kind),
        magnitude=day.attack.magnitude,
        planted=day.planted,
        isolated=verdict.attacked_slots,
        exact_match=set(verdict.attacked_slots) == set(day.planted),
        jaccard=jaccard(verdict.attacked_slots, day.planted),
        subspaces_scored=len(verdict.scores),
    )


def run_isolation(
    corpus: Corpus,
    model: ClusterModel,
    plan: DetectionPlan,
    isolator: IsolationMethod,
    cfg: IsolationConfig,
    *,
    workers: int | None = 1,
) -> list[IsolationRow]:
    """Isolate the attacked slots of every attacked test day the detector flags."""
    attacked = [day for day in corpus.test if day.is_attacked]
    task = partial(_isolate_day, model=model, plan=plan, isolator=IsolationMethod(isolator), cfg=cfg)
    rows = [row for row in ordered_map(task, attacked, workers=workers) if row is not None]
    logger.info("Isolated %d of %d attacked test days with %s", len(rows), len(attacked), isolator)
    return rows


def price_model_for(day: DayRecord, plan: SimulationPlan) -> PriceModel:
    """Day-ahead price curve used for a day."""
    if not plan.auto_reference:
        return plan.price_model
    mean = float(day.genuine.values.mean())
    return plan.price_model.scaled_to(mean if mean > 0 else 1.0)


def real_time_bill(demand: DemandForecast, price_model: PriceModel) -> float:
    """Community bill at prices computed on realised demand."""
    return float(price_model.slot_costs(demand.values).sum())


def attacker_bill(outcome: DrOutcome, grid: SlotGrid, price_model: PriceModel) -> float:
    """Real-time bill of the attacker house; 0 when the day has none."""
    profile = outcome.profiles.get(ATTACKER_HOUSE_ID)
    if profile is None:
        return 0.0
    prices = price_model.evaluate(outcome.forecast.values)
    return float(np.dot(grid.to_pricing(profile), prices))


def realised_cost(outcome: DrOutcome, houses: Sequence[House], price_model: PriceModel) -> float:
    """Real-time community bill plus scheduling penalty."""
    ordered = sorted(houses, key=lambda house: house.id)
    penalty = total_penalty(ordered, [outcome.schedules[house.id] for house in ordered])
    return total_cost(real_time_bill(outcome.forecast, price_model), penalty)


def build_hooks(
    day: DayRecord,
    scenario: Scenario,
    plan: SimulationPlan,
    model: ClusterModel | None,
) -> tuple[list[ForecastHook], MitigationHook | None]:
    """Forecast hooks for one scenario.

    Raises:
        ContractError: If an attack scenario names a day without an attack,
            or the mitigated scenario has no method.
    """
    scenario = Scenario(scenario)
    if scenario is Scenario.CLEAN:
        return [], None
    if day.attack is None:
        raise ContractError(f"scenario {scenario} needs an attack but day {day.day_id} has none")
    hooks: list[ForecastHook] = [attack_hook(day.attack, controllable_daily_demand(day.houses))]
    if scenario is Scenario.ATTACK:
        return hooks, None
    if plan.method is None:
        raise ContractError("the mitigated scenario needs a mitigation method")

    detection = plan.detection
    mitigation = mitigation_hook(
        plan.method,
        model,
        detector=partial(detection.detect, model=model),
        isolator=lambda forecast, report: isolate(
            plan.isolator, forecast, report, model, plan.isolation
        ),
        history_window=plan.history_window,
        screening=plan.screening,
    )
    hooks.append(mitigation)
    return hooks, mitigation


def _run(
    day: DayRecord,
    grid: SlotGrid,
    price_model: PriceModel,
    plan: SimulationPlan,
    hooks: Sequence[ForecastHook],
) -> DrOutcome:
    return run_dr(
        day.houses,
        grid,
        price_model,
        max_iterations=plan.dr.max_iterations,
        convergence_eps=plan.dr.convergence_eps,
        hooks=hooks,
        response=plan.dr.response,
        day_id=day.day_id,
    )


def simulate_day(
    day: DayRecord,
    grid: SlotGrid,
    scenario: Scenario,
    plan: SimulationPlan,
    model: ClusterModel | None,
) -> DaySimulation:
    """Run the clean and the requested scenario for one day and compare them.

    Raises:
        ContractError: If the scenario needs an attack the day does not have.
    """
    scenario = Scenario(scenario)
    hooks, mitigation = build_hooks(day, scenario, plan, model)
    price_model = price_model_for(day, plan)
    clean = _run(day, grid, price_model, plan, ())
    outcome = clean if scenario is Scenario.CLEAN else _run(day, grid, price_model, plan, hooks)

    bill_clean = attacker_bill(clean, grid, price_model)
    bill = attacker_bill(outcome, grid, price_model)
    cost_clean = realised_cost(clean, day.houses, price_model)
    cost = realised_cost(outcome, day.houses, price_model)
    error = mape(outcome.priced_forecast, clean.priced_forecast)
    method = plan.method.label if scenario is Scenario.MITIGATED and plan.method else "none"

    corrections: tuple[CorrectionRow, ...] = ()
    if mitigation is not None:
        corrections = tuple(
            CorrectionRow(
                day_id=record.day_id,
                method=method,
                iteration=record.iteration,
                slot=record.slot,
                received=record.received,
                rectified=record.rectified,
                pattern=record.pattern,
            )
            for record in mitigation.audit
        )

    row = SimulationRow(
        day_id=day.day_id,
        scenario=str(scenario),
        method=method,
        attacked=day.is_attacked,
        magnitude=day.attack.magnitude if day.attack is not None else None,
        attacker_bill=bill,
        attacker_bill_clean=bill_clean,
        attacker_bill_delta_pct=percent_delta(bill, bill_clean),
        community_cost=cost,
        community_cost_clean=cost_clean,
        community_cost_delta_pct=percent_delta(cost, cost_clean),
        mape_pct=error.percent,
        mape_excluded_slots=error.excluded_slots,
        converged=outcome.converged,
        iterations_used=outcome.iterations_used,
        flagged=mitigation.flagged if mitigation is not None else False,
        isolated=mitigation.verdict.attacked_slots if mitigation and mitigation.verdict else (),
        diagnostics=" | ".join(mitigation.diagnostics) if mitigation is not None else "",
    )
    return DaySimulation(clean=clean, outcome=outcome, row=row, corrections=corrections)


def _simulate_task(
    day: DayRecord,
    grid: SlotGrid,
    scenario: Scenario,
    plan: SimulationPlan,
    model: ClusterModel | None,
) -> tuple[SimulationRow, tuple[CorrectionRow, ...]]:
    result = simulate_day(day, grid, scenario, plan, model)
    return result.row, result.corrections


def select_days(corpus: Corpus, scenario: Scenario, day_ids: Sequence[int] | None = None) -> list[DayRecord]:
    """Days a simulation covers: the given ids, or every attacked test day.

    Raises:
        ContractError: If an attack scenario names a day without an attack.
        KeyError: If a day id is not in the corpus.
    """
    if day_ids is None:
        return [day for day in corpus.test if day.is_attacked]
    days = [corpus.day(day_id) for day_id in day_ids]
    if Scenario(scenario) is not Scenario.CLEAN:
        for day in days:
            if not day.is_attacked:
                raise ContractError(f"scenario {scenario} references day {day.day_id} without an attack")
    return days


def run_simulation(
    corpus: Corpus,
    scenario: Scenario,
    plan: SimulationPlan,
    model: ClusterModel | None,
    *,
    day_ids: Sequence[int] | None = None,
    workers: int | None = 1,
) -> tuple[list[SimulationRow], list[CorrectionRow]]:
    """Simulate the selected days; rows come back in day order."""
    days = select_days(corpus, scenario, day_ids)
    task = partial(_simulate_task, grid=corpus.grid, scenario=Scenario(scenario), plan=plan, model=model)
    results = ordered_map(task, days, workers=workers)
    rows = [row for row, _ in results]
    corrections = [correction for _, batch in results for correction in batch]
    logger.info("Simulated %d days under scenario %s", len(rows), scenario)
    return rows, corrections
