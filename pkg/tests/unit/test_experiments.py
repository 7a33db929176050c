"""Unit tests for the per-day experiment runners."""

from dataclasses import replace

import pytest

from app.errors import ContractError
from app.services.clustering import fit_clusters
from app.services.detection import ClassifierKind, CsrConfig, calibrate_threshold
from app.services.experiments import (
    DetectionPlan,
    Scenario,
    SimulationPlan,
    attacker_bill,
    build_hooks,
    calibrated_plan,
    price_model_for,
    run_detection,
    run_isolation,
    run_simulation,
    select_days,
    simulate_day,
)
from app.services.isolation import IsolationConfig, IsolationMethod
from app.services.mitigation import MitigationHook, MitigationMethod
from app.services.pricing import PriceModel


@pytest.fixture(scope="module")
def corpus_model(small_corpus):
    return fit_clusters(small_corpus.train_forecasts(), k=2, seed=0)


def _normal_test_day(corpus):
    return next(day for day in corpus.test if not day.is_attacked)


def _attacked_test_day(corpus):
    return next(day for day in corpus.test if day.is_attacked)


def _flag_everything(classifier: ClassifierKind = ClassifierKind.CSR) -> DetectionPlan:
    return DetectionPlan(classifier, CsrConfig(threshold=1e-12))


class TestDetectionRuns:
    """Classifying the test split."""

    def test_rows_follow_the_test_split(self, small_corpus) -> None:
        rows = run_detection(small_corpus, None, _flag_everything(ClassifierKind.SR))

        assert [row.day_id for row in rows] == [day.day_id for day in small_corpus.test]
        assert [row.attacked for row in rows] == [day.is_attacked for day in small_corpus.test]
        assert all(row.flagged for row in rows)
        assert all(row.classifier == "sr" for row in rows)

    def test_attack_metadata_copied_to_rows(self, small_corpus, corpus_model) -> None:
        rows = run_detection(small_corpus, corpus_model, _flag_everything())
        by_day = {row.day_id: row for row in rows}

        for day in small_corpus.test:
            row = by_day[day.day_id]
            assert row.planted == day.planted
            if day.is_attacked:
                assert row.kind == "pulse"
                assert row.magnitude == day.attack.magnitude
                assert row.nearest_cluster in (0, 1)
            else:
                assert row.kind is None
                assert row.magnitude is None

    def test_calibrated_plan_uses_train_split(self, small_corpus, corpus_model) -> None:
        plan = DetectionPlan(ClassifierKind.CSR, CsrConfig(percentile=100.0))

        calibrated = calibrated_plan(small_corpus, corpus_model, plan)

        expected = calibrate_threshold(small_corpus.train_forecasts(), corpus_model, plan.csr)
        assert calibrated.csr.threshold == expected
        assert calibrated.classifier is ClassifierKind.CSR

    def test_explicit_threshold_skips_calibration(self, small_corpus) -> None:
        calibrated = calibrated_plan(small_corpus, None, DetectionPlan(), threshold=0.25)

        assert calibrated.csr.threshold == 0.25


def test_isolation_covers_flagged_attacked_days(small_corpus, corpus_model) -> None:
    rows = run_isolation(
        small_corpus, corpus_model, _flag_everything(), IsolationMethod.CSR, IsolationConfig()
    )

    attacked = [day for day in small_corpus.test if day.is_attacked]
    assert [row.day_id for row in rows] == [day.day_id for day in attacked]
    for row, day in zip(rows, attacked):
        assert row.isolator == "csr"
        assert row.planted == day.planted
        assert row.exact_match == (set(row.isolated) == set(day.planted))
        assert 0.0 <= row.jaccard <= 1.0


class TestPricing:
    """Day-ahead curve and attacker bill."""

    def test_auto_reference_scales_to_mean_demand(self, small_corpus) -> None:
        day = small_corpus.test[0]
        plan = SimulationPlan(price_model=PriceModel(slope=0.5))

        priced = price_model_for(day, plan)

        assert priced == PriceModel(slope=0.5).scaled_to(float(day.genuine.values.mean()))

    def test_fixed_reference_is_kept(self, small_corpus) -> None:
        plan = SimulationPlan(price_model=PriceModel(reference_demand=7.0), auto_reference=False)

        assert price_model_for(small_corpus.test[0], plan) is plan.price_model

    def test_attacker_bill_zero_without_attacker(self, small_corpus) -> None:
        day = _normal_test_day(small_corpus)
        result = simulate_day(day, small_corpus.grid, Scenario.CLEAN, SimulationPlan(), None)
        outcome = replace(result.clean, profiles={})

        assert attacker_bill(outcome, small_corpus.grid, PriceModel()) == 0.0


class TestBuildHooks:
    """Hook chains per scenario."""

    def test_clean_has_no_hooks(self, small_corpus) -> None:
        assert build_hooks(small_corpus.test[0], Scenario.CLEAN, SimulationPlan(), None) == ([], None)

    def test_attack_needs_an_attacked_day(self, small_corpus) -> None:
        with pytest.raises(ContractError, match="needs an attack"):
            build_hooks(_normal_test_day(small_corpus), Scenario.ATTACK, SimulationPlan(), None)

    def test_attack_scenario_has_one_hook(self, small_corpus) -> None:
        hooks, mitigation = build_hooks(_attacked_test_day(small_corpus), "attack", SimulationPlan(), None)

        assert len(hooks) == 1
        assert mitigation is None

    def test_mitigated_needs_a_method(self, small_corpus) -> None:
        with pytest.raises(ContractError, match="mitigation method"):
            build_hooks(_attacked_test_day(small_corpus), Scenario.MITIGATED, SimulationPlan(), None)

    def test_mitigation_hook_runs_after_the_attack(self, small_corpus, corpus_model) -> None:
        plan = SimulationPlan(method=MitigationMethod.from_number(1))

        hooks, mitigation = build_hooks(_attacked_test_day(small_corpus), Scenario.MITIGATED, plan, corpus_model)

        assert isinstance(mitigation, MitigationHook)
        assert hooks[-1] is mitigation
        assert len(hooks) == 2


class TestSelectDays:
    """Which days a simulation covers."""

    def test_defaults_to_attacked_test_days(self, small_corpus) -> None:
        days = select_days(small_corpus, Scenario.ATTACK)

        assert len(days) == 6
        assert all(day.is_attacked for day in days)

    def test_clean_accepts_any_day(self, small_corpus) -> None:
        normal = _normal_test_day(small_corpus)

        assert select_days(small_corpus, Scenario.CLEAN, [normal.day_id]) == [normal]

    def test_attack_rejects_attack_free_day(self, small_corpus) -> None:
        normal = _normal_test_day(small_corpus)

        with pytest.raises(ContractError, match="without an attack"):
            select_days(small_corpus, Scenario.ATTACK, [normal.day_id])

    def test_unknown_day(self, small_corpus) -> None:
        with pytest.raises(KeyError):
            select_days(small_corpus, Scenario.CLEAN, [999])


class TestSimulation:
    """Scenario runs compared with the clean run."""

    def test_clean_scenario_compares_with_itself(self, small_corpus) -> None:
        day = _normal_test_day(small_corpus)

        result = simulate_day(day, small_corpus.grid, Scenario.CLEAN, SimulationPlan(), None)

        assert result.outcome is result.clean
        assert result.row.scenario == "clean"
        assert result.row.method == "none"
        assert result.row.attacked is False
        assert result.row.magnitude is None
        assert result.row.attacker_bill_delta_pct == 0.0
        assert result.row.community_cost_delta_pct == 0.0
        assert result.row.mape_pct == 0.0
        assert result.corrections == ()

    def test_attack_rows_in_day_order(self, small_corpus) -> None:
        rows, corrections = run_simulation(small_corpus, Scenario.ATTACK, SimulationPlan(), None)

        attacked = [day for day in small_corpus.test if day.is_attacked]
        assert [row.day_id for row in rows] == [day.day_id for day in attacked]
        assert all(row.scenario == "attack" and row.method == "none" for row in rows)
        assert all(row.magnitude is not None for row in rows)
        assert all(row.flagged is False for row in rows)
        assert corrections == []

    def test_mitigated_rows_carry_method_label(self, small_corpus, corpus_model) -> None:
        plan = SimulationPlan(
            detection=_flag_everything(),
            isolator=IsolationMethod.CSR,
            method=MitigationMethod.from_number(1),
        )
        day = _attacked_test_day(small_corpus)

        rows, corrections = run_simulation(
            small_corpus, Scenario.MITIGATED, plan, corpus_model, day_ids=[day.day_id]
        )

        (row,) = rows
        assert row.method == "method-1"
        assert row.scenario == "mitigated"
        assert row.flagged is True
        assert all(correction.method == "method-1" for correction in corrections)
        assert all(correction.day_id == day.day_id for correction in corrections)
        assert {correction.slot for correction in corrections} <= set(row.isolated)
