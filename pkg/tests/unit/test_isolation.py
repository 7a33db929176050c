"""Unit tests for attacked-slot isolation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.constants import LOF_DENSITY_EPSILON
from app.errors import ContractError
from app.services.clustering import ClusterModel
from app.services.detection import DetectionReport, SaliencyMap, Verdict
from app.services.isolation import (
    IsolationConfig,
    IsolationMethod,
    IsolationVerdict,
    average_path_length,
    beam_search_isolate,
    csr_isolate,
    isolate,
    isolation_path_length,
    isolation_path_score,
    isolation_recall,
    jaccard,
    local_outlier_factor,
    lof_isolate,
)
from tests.helpers.factories import (
    diurnal_profile,
    make_forecast,
    spiked,
    trained_model,
    two_cluster_model,
)

SLOTS = 8


def _reference_path(query: float, population: np.ndarray, psi: int, rng: np.random.Generator) -> int:
    """Grow one random 1-d isolation path the obvious way."""
    points = np.concatenate([[query], rng.choice(population, size=psi - 1, replace=False)])
    depth = 0
    while points.size > 1 and points.min() < points.max():
        cut = rng.uniform(points.min(), points.max())
        points = points[points < cut] if query < cut else points[points >= cut]
        depth += 1
    return depth


def _lof_oracle(query: float, population: list[float], k: int) -> float:
    points = [query, *population]
    n = len(points)

    def distance(i: int, j: int) -> float:
        return abs(points[i] - points[j])

    k_distance = [sorted(distance(i, j) for j in range(n) if j != i)[k - 1] for i in range(n)]
    neighbours = [[j for j in range(n) if j != i and distance(i, j) <= k_distance[i]] for i in range(n)]

    def density(i: int) -> float:
        reach = [max(k_distance[j], distance(i, j)) for j in neighbours[i]]
        return 1.0 / (sum(reach) / len(reach) + LOF_DENSITY_EPSILON)

    return sum(density(j) for j in neighbours[0]) / len(neighbours[0]) / density(0)


def _report(saliency: list[float], threshold: float, verdict: Verdict = Verdict.ATTACKED) -> DetectionReport:
    values = np.array(saliency)
    return DetectionReport(
        verdict=verdict,
        saliency=SaliencyMap(values),
        residual=values,
        threshold=threshold,
        day_id=3,
    )


@pytest.fixture(scope="module")
def population_model():
    """One cluster over sixty noisy eight-slot forecasts."""
    model, _ = trained_model(60, slots=SLOTS, noise=0.05, seed=7)
    return model


class TestIsolationPath:
    """Test suite for random isolation path lengths."""

    def test_average_path_length(self) -> None:
        assert average_path_length(1) == 0.0
        assert average_path_length(2) == pytest.approx(0.1544)
        assert average_path_length(256) == pytest.approx(10.2447, abs=1e-3)

    @pytest.mark.parametrize("query", [0.37, 3.0])
    def test_matches_reference_paths(self, query: float) -> None:
        population = np.linspace(0.0, 1.0, 50)
        cfg = IsolationConfig(ensemble_trees=10_000, subsample_size=16, seed=1)
        rng = np.random.default_rng(2)
        reference = np.mean([_reference_path(query, population, 16, rng) for _ in range(10_000)])
        assert isolation_path_length(query, population, cfg) == pytest.approx(reference, rel=0.1)

    def test_outlier_isolates_faster_than_inlier(self) -> None:
        population = np.linspace(0.0, 1.0, 50)
        cfg = IsolationConfig(ensemble_trees=500, subsample_size=16)
        assert isolation_path_score(10.0, population, cfg) < isolation_path_score(0.5, population, cfg)

    def test_degenerate_population(self) -> None:
        cfg = IsolationConfig(subsample_size=16)
        assert isolation_path_length(2.0, np.full(30, 2.0), cfg) == pytest.approx(average_path_length(16))

    def test_subsample_is_capped_by_population(self) -> None:
        cfg = IsolationConfig(subsample_size=64)
        assert isolation_path_score(1.0, np.ones(4), cfg) == pytest.approx(1.0)

    def test_same_seed_same_length(self) -> None:
        population = np.random.default_rng(0).random((40, 2))
        cfg = IsolationConfig(ensemble_trees=20, seed=5)
        first = isolation_path_length(np.array([0.5, 2.0]), population, cfg)
        assert first == isolation_path_length(np.array([0.5, 2.0]), population, cfg)

    def test_shape_errors(self) -> None:
        cfg = IsolationConfig()
        with pytest.raises(ValueError, match="does not match"):
            isolation_path_length(np.array([1.0, 2.0]), np.ones((5, 3)), cfg)
        with pytest.raises(ValueError, match="at least 2 points"):
            isolation_path_length(1.0, np.ones(1), cfg)

    @pytest.mark.parametrize(
        "kwargs",
        [{"max_subspace": 0}, {"beam_width": 0}, {"ensemble_trees": 0}, {"subsample_size": 1},
         {"beam_tolerance": -1.0}, {"lof_neighbors": 0}, {"lof_threshold": 0.0}],
    )
    def test_invalid_config(self, kwargs: dict) -> None:
        with pytest.raises(ValueError):
            IsolationConfig(**kwargs)


class TestBeamSearch:
    """Test suite for subspace beam search."""

    @staticmethod
    def _flat_model(row: list[float]) -> ClusterModel:
        """Every stored forecast equals ``row``, so every subspace scores exactly 1.0."""
        database = np.array([row, row, row])
        return ClusterModel(centroids=database[:1], database=database, labels=np.zeros(3, dtype=int))

    def test_ties_go_to_the_smallest_subspace(self) -> None:
        row = [1.0, 2.0, 3.0, 4.0, 5.0]
        verdict = beam_search_isolate(make_forecast(row), self._flat_model(row), IsolationConfig())
        assert set(verdict.scores.values()) == {1.0}
        assert verdict.attacked_slots == (0,)

    def test_positive_tolerance_prefers_larger_subspaces(self) -> None:
        row = [1.0, 2.0, 3.0, 4.0, 5.0]
        cfg = IsolationConfig(beam_tolerance=0.1)
        verdict = beam_search_isolate(make_forecast(row), self._flat_model(row), cfg)
        assert verdict.attacked_slots == (0, 1, 2)

    def test_lowest_score_wins_by_default(self, population_model) -> None:
        attacked = spiked(make_forecast(diurnal_profile(SLOTS)), [2], 100.0)
        verdict = beam_search_isolate(attacked, population_model, IsolationConfig(seed=1))
        best = min(verdict.scores.values())
        assert verdict.scores[verdict.attacked_slots] == best
        assert all(len(s) >= len(verdict.attacked_slots) for s, v in verdict.scores.items() if v == best)

    def test_finds_a_spiked_pair(self, population_model) -> None:
        attacked = spiked(make_forecast(diurnal_profile(SLOTS), day_id=9), [3, 4], 100.0)
        cfg = IsolationConfig(seed=3, beam_tolerance=0.1)
        verdict = beam_search_isolate(attacked, population_model, cfg)
        assert verdict.attacked_slots == (3, 4)
        assert verdict.method is IsolationMethod.ISOLATION_PATH
        assert verdict.day_id == 9
        assert (3,) in verdict.scores and (3, 4) in verdict.scores

    def test_finds_a_single_spike(self, population_model) -> None:
        attacked = spiked(make_forecast(diurnal_profile(SLOTS)), [5], 100.0)
        verdict = beam_search_isolate(attacked, population_model, IsolationConfig(seed=3))
        assert verdict.attacked_slots == (5,)

    def test_searches_singletons_pairs_and_beam(self, population_model) -> None:
        attacked = spiked(make_forecast(diurnal_profile(SLOTS)), [5], 100.0)
        cfg = IsolationConfig(seed=0, beam_width=2, ensemble_trees=5)
        scores = beam_search_isolate(attacked, population_model, cfg).scores
        assert sum(len(s) == 1 for s in scores) == SLOTS
        assert sum(len(s) == 2 for s in scores) == SLOTS * (SLOTS - 1) // 2
        assert 0 < sum(len(s) == 3 for s in scores) <= 2 * (SLOTS - 2)

    def test_max_subspace_limits_result(self, population_model) -> None:
        attacked = spiked(make_forecast(diurnal_profile(SLOTS)), [1, 2, 3], 100.0)
        verdict = beam_search_isolate(attacked, population_model, IsolationConfig(max_subspace=2))
        assert len(verdict.attacked_slots) <= 2
        assert max(len(s) for s in verdict.scores) == 2


class TestLocalOutlierFactor:
    """Test suite for the one-dimensional LOF isolator."""

    @settings(max_examples=60, deadline=None)
    @given(
        query=st.floats(-50, 50, allow_nan=False),
        population=st.lists(st.floats(-50, 50, allow_nan=False), min_size=5, max_size=25),
        k=st.integers(1, 4),
    )
    def test_matches_direct_definition(self, query: float, population: list[float], k: int) -> None:
        expected = _lof_oracle(query, population, k)
        assert local_outlier_factor(query, population, k) == pytest.approx(expected, rel=1e-9)

    def test_inlier_is_near_one(self) -> None:
        population = np.linspace(0.0, 10.0, 41)
        assert 0.7 < local_outlier_factor(5.1, population, k=5) < 1.3

    def test_outlier_is_large(self) -> None:
        population = np.linspace(0.0, 10.0, 41)
        assert local_outlier_factor(60.0, population, k=5) > 10.0

    def test_needs_enough_points(self) -> None:
        with pytest.raises(ValueError, match="at least 4 points"):
            local_outlier_factor(0.0, [1.0, 2.0], k=3)

    def test_lof_isolate_flags_the_spike(self, population_model) -> None:
        attacked = spiked(make_forecast(diurnal_profile(SLOTS)), [6], 5.0)
        verdict = lof_isolate(attacked, population_model, IsolationConfig())
        assert verdict.attacked_slots == (6,)
        assert verdict.scores[(6,)] > 1.5
        assert len(verdict.scores) == SLOTS

    def test_lof_isolate_keeps_highest_factors(self, population_model) -> None:
        attacked = spiked(make_forecast(diurnal_profile(SLOTS)), [0, 2, 4, 6], 5.0)
        verdict = lof_isolate(attacked, population_model, IsolationConfig(max_subspace=2))
        assert len(verdict.attacked_slots) == 2
        assert set(verdict.attacked_slots) <= {0, 2, 4, 6}

    def test_lof_isolate_needs_population(self) -> None:
        model = two_cluster_model([1, 1, 1, 1], [1, 1, 4, 2])
        with pytest.raises(ValueError, match="population of at least"):
            lof_isolate(make_forecast([1, 1, 1, 9]), model, IsolationConfig())


class TestCsrIsolate:
    """Test suite for reading slots off the saliency map."""

    def test_slots_above_threshold(self) -> None:
        verdict = csr_isolate(_report([0.1, 0.9, 0.6, 0.2, 0.7], 0.5), IsolationConfig())
        assert verdict.attacked_slots == (1, 2, 4)
        assert verdict.method is IsolationMethod.CSR
        assert verdict.day_id == 3

    def test_keeps_the_strongest_slots(self) -> None:
        verdict = csr_isolate(_report([0.1, 0.9, 0.6, 0.2, 0.7], 0.5), IsolationConfig(max_subspace=2))
        assert verdict.attacked_slots == (1, 4)

    def test_peak_is_always_kept(self) -> None:
        verdict = csr_isolate(_report([0.1, 0.3, 0.2], 0.5), IsolationConfig())
        assert verdict.attacked_slots == (1,)

    def test_normal_verdict_is_a_contract_error(self) -> None:
        with pytest.raises(ContractError):
            csr_isolate(_report([0.1, 0.2], 0.5, Verdict.NORMAL), IsolationConfig())

    def test_dispatch(self, population_model) -> None:
        attacked = spiked(make_forecast(diurnal_profile(SLOTS)), [6], 5.0)
        report = _report([0.0] * 6 + [1.0, 0.0], 0.5)
        cfg = IsolationConfig(ensemble_trees=10)
        assert isolate("csr", attacked, report, population_model, cfg).attacked_slots == (6,)
        assert isolate(IsolationMethod.LOF, attacked, report, population_model, cfg).method is IsolationMethod.LOF
        assert isolate("isolation_path", attacked, report, population_model, cfg).method is IsolationMethod.ISOLATION_PATH


class TestIsolationScoring:
    """Test suite for Jaccard overlap and per-magnitude recall."""

    def test_jaccard(self) -> None:
        assert jaccard([1, 2], [2, 3]) == pytest.approx(1 / 3)
        assert jaccard([], []) == 1.0
        assert jaccard([1], []) == 0.0

    def test_recall_buckets(self) -> None:
        buckets = isolation_recall(
            [(1, 2), (4,), (5,), ()],
            [(1, 2), (4, 5), (5,), (7,)],
            [0.1, 0.1, 0.05, 0.05],
        )
        assert [b.magnitude for b in buckets] == [0.05, 0.1]
        low, high = buckets
        assert (low.cases, low.exact_matches, low.recall) == (2, 1, 0.5)
        assert low.mean_jaccard == pytest.approx(0.5)
        assert high.mean_jaccard == pytest.approx(0.75)

    def test_recall_length_mismatch(self) -> None:
        with pytest.raises(ValueError):
            isolation_recall([()], [(), ()], [0.1])

    def test_verdict_sorts_slots(self) -> None:
        verdict = IsolationVerdict((4, 1), "lof")
        assert verdict.attacked_slots == (1, 4)
        assert not verdict.is_empty
        assert IsolationVerdict((), IsolationMethod.CSR).is_empty
