"""Integration tests for detector and isolator quality on reference fixtures.

Tests the flow: fitted model -> saliency -> calibrated threshold -> isolators,
checked against brute-force path growth and against each other.
"""

import numpy as np
import pytest

from app.services.clustering import cluster_population
from app.services.detection import (
    ClassifierKind,
    CsrConfig,
    calibrate_threshold,
    classification_metrics,
    classify,
)
from app.services.isolation import (
    IsolationConfig,
    IsolationMethod,
    average_path_length,
    beam_search_isolate,
    isolate,
    isolation_path_length,
    isolation_recall,
)
from tests.helpers.factories import diurnal_forecasts, make_forecast, spiked, trained_model

SLOTS = 8
SPIKE = 2.0


def _grow_path(query: np.ndarray, population: np.ndarray, psi: int, rng: np.random.Generator) -> int:
    """Split count of one random isolation path, grown point set by point set."""
    picks = rng.choice(population.shape[0], size=psi - 1, replace=False)
    points = np.vstack([query, population[picks]])
    depth = 0
    while points.shape[0] > 1:
        lo, hi = points.min(axis=0), points.max(axis=0)
        spread = np.flatnonzero(hi > lo)
        if spread.size == 0:
            break
        feature = rng.choice(spread)
        cut = rng.uniform(lo[feature], hi[feature])
        column = points[:, feature]
        points = points[column < cut] if points[0, feature] < cut else points[column >= cut]
        depth += 1
    return depth


def _mean_path(query: np.ndarray, population: np.ndarray, psi: int, paths: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    return float(np.mean([_grow_path(query, population, psi, rng) for _ in range(paths)]))


@pytest.fixture(scope="module")
def population_model():
    model, _ = trained_model(60, slots=SLOTS, noise=0.05, seed=7)
    return model


class TestSaliencyLocalisation:
    """The saliency peak sits on the injected slot."""

    @pytest.mark.parametrize("slots", [12, 24, 48])
    def test_csr_peak_follows_the_spike(self, slots: int) -> None:
        model, _ = trained_model(60, slots=slots, noise=0.01, seed=slots)
        fresh = diurnal_forecasts(slots, slots=slots, noise=0.01, seed=100 + slots, first_day=500)
        for slot, forecast in enumerate(fresh):
            report = classify(spiked(forecast, [slot], SPIKE), model, CsrConfig(threshold=0.5))

            assert report.saliency.peak_index == slot
            assert report.is_attacked

    @pytest.mark.parametrize("slots", [12, 24, 48])
    def test_sr_peak_follows_the_spike_on_flat_load(self, slots: int) -> None:
        rng = np.random.default_rng(slots)
        for slot in range(slots):
            flat = make_forecast(2.0 * (1.0 + 0.01 * rng.standard_normal(slots)), day_id=slot)
            report = classify(spiked(flat, [slot], 3.0), None, CsrConfig(), ClassifierKind.SR)

            assert report.saliency.peak_index == slot


class TestCleanDayFalsePositives:
    """A threshold calibrated on the train split rarely flags clean held-out days."""

    def test_csr_false_positive_rate_on_held_out_days(self) -> None:
        model, train = trained_model(200, slots=24, noise=0.05, seed=1)
        cfg = CsrConfig()
        cfg = cfg.with_threshold(calibrate_threshold(train, model, cfg))
        held_out = diurnal_forecasts(100, slots=24, noise=0.05, seed=99, first_day=1000)

        verdicts = [classify(forecast, model, cfg).verdict for forecast in held_out]
        metrics = classification_metrics(verdicts, [False] * len(held_out))

        assert metrics.fpr is not None
        assert metrics.fpr <= 0.10


class TestIsolationPathAgreement:
    """Vectorised path lengths agree with paths grown one split at a time."""

    @pytest.mark.parametrize("subspace", [(2,), (5,), (2, 5), (0, 6), (1, 2, 3)])
    def test_path_length_matches_grown_paths(self, population_model, subspace) -> None:
        forecast = spiked(diurnal_forecasts(1, slots=SLOTS, noise=0.05, seed=40)[0], [2], SPIKE)
        population = cluster_population(forecast, population_model)
        columns = list(subspace)
        cfg = IsolationConfig(ensemble_trees=4000, subsample_size=16, seed=11)

        expected = _mean_path(forecast.values[columns], population[:, columns], 16, 4000, seed=12)
        found = isolation_path_length(forecast.values[columns], population[:, columns], cfg)

        assert found == pytest.approx(expected, rel=0.1)

    def test_beam_scores_match_grown_paths(self, population_model) -> None:
        forecast = spiked(diurnal_forecasts(1, slots=SLOTS, noise=0.05, seed=41)[0], [6], SPIKE)
        population = cluster_population(forecast, population_model)
        cfg = IsolationConfig(max_subspace=2, ensemble_trees=2000, subsample_size=16, seed=5)

        verdict = beam_search_isolate(forecast, population_model, cfg)

        assert len(verdict.scores) == SLOTS + SLOTS * (SLOTS - 1) // 2
        for subspace in [(6,), (3,), (3, 6), (0, 1)]:
            columns = list(subspace)
            expected = _mean_path(forecast.values[columns], population[:, columns], 16, 2000, seed=6)
            assert verdict.scores[subspace] == pytest.approx(expected / average_path_length(16), rel=0.1)


class TestIsolatorOrdering:
    """Beam search recovers single-slot injections at least as often as LOF."""

    def test_beam_recall_at_least_lof(self, population_model) -> None:
        fresh = diurnal_forecasts(2 * SLOTS, slots=SLOTS, noise=0.05, seed=21, first_day=300)
        cases = [(spiked(forecast, [i % SLOTS], SPIKE), (i % SLOTS,)) for i, forecast in enumerate(fresh)]
        detector = CsrConfig(threshold=0.5)
        cfg = IsolationConfig(ensemble_trees=200, seed=3)

        recall = {}
        for method in (IsolationMethod.ISOLATION_PATH, IsolationMethod.LOF):
            found = []
            for forecast, _ in cases:
                report = classify(forecast, population_model, detector)
                found.append(isolate(method, forecast, report, population_model, cfg).attacked_slots)
            (bucket,) = isolation_recall(found, [planted for _, planted in cases], [SPIKE] * len(cases))
            recall[method] = bucket.recall

        assert recall[IsolationMethod.ISOLATION_PATH] == 1.0
        assert recall[IsolationMethod.ISOLATION_PATH] >= recall[IsolationMethod.LOF]
