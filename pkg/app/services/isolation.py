"""Attacked-slot isolation.

Three isolators are provided for a forecast the detector flagged:

- ``beam_search_isolate`` scores subspaces of pricing slots by how quickly
  random axis-parallel splits isolate the query from the attack-free members
  of its cluster, searching singletons, all pairs, then beam-extended larger
  subspaces.
- ``lof_isolate`` flags slots whose one-dimensional local outlier factor is
  well above 1.
- ``csr_isolate`` reads the slots straight off the saliency map.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import StrEnum
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from ..constants import (
    DEFAULT_BEAM_TOLERANCE,
    DEFAULT_BEAM_WIDTH,
    DEFAULT_ENSEMBLE_TREES,
    DEFAULT_LOF_NEIGHBORS,
    DEFAULT_LOF_THRESHOLD,
    DEFAULT_MAX_SUBSPACE,
    DEFAULT_SUBSAMPLE_SIZE,
    EULER_GAMMA,
    LOF_DENSITY_EPSILON,
)
from ..errors import ContractError
from ..models import DemandForecast
from .clustering import ClusterModel, cluster_population
from .detection import DetectionReport

logger = logging.getLogger(__name__)

Subspace = tuple[int, ...]


class IsolationMethod(StrEnum):
    ISOLATION_PATH = "isolation_path"
    LOF = "lof"
    CSR = "csr"


@dataclass(frozen=True, slots=True)
class IsolationConfig:
    """Isolator parameters.

    Args:
        max_subspace: Largest subspace searched (and most slots reported).
        beam_width: Subspaces kept from one stage to seed the next.
        ensemble_trees: Random isolation paths averaged per subspace.
        subsample_size: Points per path including the query; capped at the
            population size plus one.
        seed: Root seed; every subspace derives its own stream from it.
        beam_tolerance: Path-length slack, in splits, within which a larger
            subspace is preferred over the best-scoring one; 0 disables it.
        lof_neighbors: k for the local outlier factor.
        lof_threshold: LOF at or above which a slot is flagged.
    """

    max_subspace: int = DEFAULT_MAX_SUBSPACE
    beam_width: int = DEFAULT_BEAM_WIDTH
    ensemble_trees: int = DEFAULT_ENSEMBLE_TREES
    subsample_size: int = DEFAULT_SUBSAMPLE_SIZE
    seed: int = 0
    beam_tolerance: float = DEFAULT_BEAM_TOLERANCE
    lof_neighbors: int = DEFAULT_LOF_NEIGHBORS
    lof_threshold: float = DEFAULT_LOF_THRESHOLD

    def __post_init__(self) -> None:
        if self.max_subspace < 1:
            raise ValueError(f"max_subspace must be >= 1, got {self.max_subspace}")
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.ensemble_trees < 1:
            raise ValueError(f"ensemble_trees must be >= 1, got {self.ensemble_trees}")
        if self.subsample_size < 2:
            raise ValueError(f"subsample_size must be >= 2, got {self.subsample_size}")
        if not self.beam_tolerance >= 0:
            raise ValueError(f"beam_tolerance must be >= 0, got {self.beam_tolerance}")
        if self.lof_neighbors < 1:
            raise ValueError(f"lof_neighbors must be >= 1, got {self.lof_neighbors}")
        if not self.lof_threshold > 0:
            raise ValueError(f"lof_threshold must be > 0, got {self.lof_threshold}")


@dataclass(frozen=True, slots=True)
class IsolationVerdict:
    """Slots judged attacked, ascending, with every score computed on the way."""

    attacked_slots: tuple[int, ...]
    method: IsolationMethod
    scores: Mapping[Subspace, float] = field(default_factory=dict)
    day_id: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "attacked_slots", tuple(sorted(int(s) for s in self.attacked_slots)))
        object.__setattr__(self, "method", IsolationMethod(self.method))
        object.__setattr__(self, "scores", dict(self.scores))

    @property
    def is_empty(self) -> bool:
        return not self.attacked_slots


@dataclass(frozen=True, slots=True)
class RecallBucket:
    """Isolation outcome for one injection magnitude."""

    magnitude: float
    cases: int
    exact_matches: int
    mean_jaccard: float

    @property
    def recall(self) -> float:
        return self.exact_matches / self.cases if self.cases else 0.0


def average_path_length(size: int) -> float:
    """Expected path length of an unsuccessful search in a tree over ``size`` points."""
    if size < 2:
        return 0.0
    return 2.0 * (np.log(size - 1) + EULER_GAMMA) - 2.0 * (size - 1) / size


def _unresolved_path(count: np.ndarray) -> np.ndarray:
    """Path added when ``count`` identical points can no longer be split."""
    return 2.0 * (np.log(count) + EULER_GAMMA) - 2.0


def _as_points(query: np.ndarray | float, population: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    point = np.atleast_1d(np.asarray(query, dtype=np.float64))
    data = np.asarray(population, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2 or data.shape[1] != point.size:
        raise ValueError(
            f"population shape {data.shape} does not match query dimension {point.size}"
        )
    if data.shape[0] < 2:
        raise ValueError(f"population needs at least 2 points, got {data.shape[0]}")
    return point, data


def _path_lengths(
    query: np.ndarray,
    population: np.ndarray,
    trees: int,
    psi: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Split count needed to isolate the query, one entry per random tree.

    Every tree subsamples ``psi - 1`` population points plus the query (row 0)
    and follows only the branch holding the query. All trees advance together.
    """
    n, dims = population.shape
    picks = np.argsort(rng.random((trees, n)), axis=1)[:, : psi - 1]
    data = np.empty((trees, psi, dims))
    data[:, 0, :] = query
    data[:, 1:, :] = population[picks]

    rows = np.arange(trees)
    alive = np.ones((trees, psi), dtype=bool)
    active = np.ones(trees, dtype=bool)
    depth = np.zeros(trees)
    while True:
        count = alive.sum(axis=1)
        lo = np.where(alive[:, :, None], data, np.inf).min(axis=1)
        hi = np.where(alive[:, :, None], data, -np.inf).max(axis=1)
        splittable = hi > lo
        stuck = active & (count > 1) & ~splittable.any(axis=1)
        depth[stuck] += _unresolved_path(count[stuck])
        active &= (count > 1) & ~stuck
        if not active.any():
            return depth

        n_split = splittable.sum(axis=1)
        choice = np.minimum((rng.random(trees) * n_split).astype(np.int64), np.maximum(n_split - 1, 0))
        feature = np.argmax(np.cumsum(splittable, axis=1) > choice[:, None], axis=1)
        low, high = lo[rows, feature], hi[rows, feature]
        cut = low + rng.random(trees) * (high - low)
        values = data[rows, :, feature]
        query_left = data[rows, 0, feature] < cut
        keep = np.where(query_left[:, None], values < cut[:, None], values >= cut[:, None])
        alive = np.where(active[:, None], alive & keep, alive)
        depth[active] += 1.0


def _effective_subsample(cfg: IsolationConfig, population_size: int) -> int:
    return min(cfg.subsample_size, population_size + 1)


def isolation_path_length(
    query: np.ndarray | float,
    population: np.ndarray,
    cfg: IsolationConfig,
    rng: np.random.Generator | None = None,
) -> float:
    """Mean split count isolating the query, over ``cfg.ensemble_trees`` paths.

    Args:
        query: Query point restricted to the subspace (scalar for 1-d).
        population: (n, d) points restricted to the same subspace.
        cfg: Isolator parameters.
        rng: Random stream; defaults to one seeded with ``cfg.seed``.

    Returns:
        Raw mean path length. A population identical to the query returns
        the expected path length of the subsample.

    Raises:
        ValueError: On fewer than two population points or a shape mismatch.
    """
    point, data = _as_points(query, population)
    psi = _effective_subsample(cfg, data.shape[0])
    if np.all(data == point[None, :]):
        return average_path_length(psi)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return float(_path_lengths(point, data, cfg.ensemble_trees, psi, rng).mean())


def isolation_path_score(
    query: np.ndarray | float,
    population: np.ndarray,
    cfg: IsolationConfig,
    rng: np.random.Generator | None = None,
) -> float:
    """Mean path length normalised by its expected value; lower is more isolated."""
    _, data = _as_points(query, population)
    psi = _effective_subsample(cfg, data.shape[0])
    return isolation_path_length(query, population, cfg, rng) / average_path_length(psi)


def _subspace_score(
    query: np.ndarray, population: np.ndarray, subspace: Subspace, cfg: IsolationConfig
) -> float:
    columns = list(subspace)
    rng = np.random.default_rng([cfg.seed, *subspace])
    return isolation_path_score(query[columns], population[:, columns], cfg, rng)


def _stage_subspaces(
    size: int, slots: int, previous: Sequence[Subspace], scores: Mapping[Subspace, float], width: int
) -> list[Subspace]:
    if size == 1:
        return [(slot,) for slot in range(slots)]
    if size == 2:
        return list(combinations(range(slots), 2))
    beam = sorted(previous, key=lambda subspace: (scores[subspace], subspace))[:width]
    extended = {
        tuple(sorted(subspace + (slot,)))
        for subspace in beam
        for slot in range(slots)
        if slot not in subspace
    }
    return sorted(extended)


def beam_search_isolate(
    attacked: DemandForecast, model: ClusterModel, cfg: IsolationConfig
) -> IsolationVerdict:
    """Find the subspace of pricing slots that isolates the forecast fastest.

    The population is the attack-free membership of the forecast's nearest
    cluster (the whole database for clusters with fewer than two members).
    Stage 1 scores every slot, stage 2 every pair, later stages extend the
    ``beam_width`` best subspaces of the previous stage by one slot. The
    verdict is the lowest-scoring subspace; ties go to the smaller subspace,
    then to lexicographic order. A positive ``beam_tolerance`` instead picks
    the largest subspace scoring within that many splits of the best, then
    the lower score.

    Raises:
        ValueError: If the forecast length does not match the model.
    """
    population = cluster_population(attacked, model)
    query = attacked.values
    slots = len(attacked)
    max_size = min(cfg.max_subspace, slots)

    scores: dict[Subspace, float] = {}
    previous: list[Subspace] = []
    for size in range(1, max_size + 1):
        stage = _stage_subspaces(size, slots, previous, scores, cfg.beam_width)
        for subspace in stage:
            if subspace not in scores:
                scores[subspace] = _subspace_score(query, population, subspace, cfg)
        previous = stage

    psi = _effective_subsample(cfg, population.shape[0])
    best = min(scores.values())
    if cfg.beam_tolerance > 0:
        tolerance = cfg.beam_tolerance / average_path_length(psi)
        contenders = [subspace for subspace, score in scores.items() if score <= best + tolerance]
        chosen = min(contenders, key=lambda subspace: (-len(subspace), scores[subspace], subspace))
    else:
        chosen = min(scores, key=lambda subspace: (scores[subspace], len(subspace), subspace))
    logger.debug(
        "Day %d: %d subspaces scored, best %.4f, chose %s",
        attacked.day_id, len(scores), best, chosen,
    )
    return IsolationVerdict(
        attacked_slots=chosen,
        method=IsolationMethod.ISOLATION_PATH,
        scores=scores,
        day_id=attacked.day_id,
    )


def local_outlier_factor(
    query: float, population: Sequence[float] | np.ndarray, k: int = DEFAULT_LOF_NEIGHBORS
) -> float:
    """One-dimensional local outlier factor of ``query`` among ``population``.

    The k-distance neighbourhood includes every point tied at the k-distance.

    Raises:
        ValueError: If there are fewer than ``k + 1`` points including the query.
    """
    values = np.concatenate([[float(query)], np.asarray(population, dtype=np.float64).ravel()])
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if values.size < k + 1:
        raise ValueError(f"LOF with k={k} needs at least {k + 1} points, got {values.size}")

    distances = np.abs(values[:, None] - values[None, :])
    np.fill_diagonal(distances, np.inf)
    k_distance = np.sort(distances, axis=1)[:, k - 1]
    neighbours = distances <= k_distance[:, None]
    reach = np.maximum(k_distance[None, :], distances)
    mean_reach = np.where(neighbours, reach, 0.0).sum(axis=1) / neighbours.sum(axis=1)
    density = 1.0 / (mean_reach + LOF_DENSITY_EPSILON)
    return float(density[neighbours[0]].mean() / density[0])


def lof_isolate(
    attacked: DemandForecast, model: ClusterModel, cfg: IsolationConfig
) -> IsolationVerdict:
    """Flag slots whose 1-d LOF reaches ``cfg.lof_threshold``.

    At most ``max_subspace`` slots are reported, the highest LOF first.

    Raises:
        ValueError: If the cluster population has fewer than
            ``lof_neighbors + 1`` members.
    """
    population = cluster_population(attacked, model)
    if population.shape[0] < cfg.lof_neighbors + 1:
        raise ValueError(
            f"LOF needs a population of at least {cfg.lof_neighbors + 1}, "
            f"got {population.shape[0]}"
        )
    factors = np.array(
        [
            local_outlier_factor(attacked.values[slot], population[:, slot], cfg.lof_neighbors)
            for slot in range(len(attacked))
        ]
    )
    flagged = [slot for slot in np.argsort(-factors, kind="stable") if factors[slot] >= cfg.lof_threshold]
    return IsolationVerdict(
        attacked_slots=tuple(int(slot) for slot in flagged[: cfg.max_subspace]),
        method=IsolationMethod.LOF,
        scores={(slot,): float(factor) for slot, factor in enumerate(factors)},
        day_id=attacked.day_id,
    )


def csr_isolate(report: DetectionReport, cfg: IsolationConfig) -> IsolationVerdict:
    """Slots whose saliency reaches the detection threshold, highest first.

    At most ``max_subspace`` slots are kept; the saliency peak is always one
    of them.

    Raises:
        ContractError: If the report's verdict is normal.
    """
    if not report.is_attacked:
        raise ContractError(f"csr_isolate called on a normal verdict for day {report.day_id}")
    saliency = report.saliency.values
    above = np.flatnonzero(saliency >= report.threshold)
    ranked = sorted((int(slot) for slot in above), key=lambda slot: (-saliency[slot], slot))
    chosen = ranked[: cfg.max_subspace]
    peak = report.saliency.peak_index
    if peak not in chosen:
        chosen = [peak, *chosen[: cfg.max_subspace - 1]]
    return IsolationVerdict(
        attacked_slots=tuple(chosen),
        method=IsolationMethod.CSR,
        scores={(int(slot),): float(saliency[slot]) for slot in above},
        day_id=report.day_id,
    )


def isolate(
    method: IsolationMethod,
    attacked: DemandForecast,
    report: DetectionReport,
    model: ClusterModel,
    cfg: IsolationConfig,
) -> IsolationVerdict:
    """Dispatch to the configured isolator."""
    method = IsolationMethod(method)
    if method is IsolationMethod.ISOLATION_PATH:
        return beam_search_isolate(attacked, model, cfg)
    if method is IsolationMethod.LOF:
        return lof_isolate(attacked, model, cfg)
    return csr_isolate(report, cfg)


def jaccard(found: Sequence[int], planted: Sequence[int]) -> float:
    """Overlap of two slot sets; two empty sets overlap fully."""
    a, b = set(found), set(planted)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def isolation_recall(
    verdicts: Sequence[Sequence[int]],
    planted: Sequence[Sequence[int]],
    magnitudes: Sequence[float],
) -> list[RecallBucket]:
    """Exact-match recall and mean Jaccard overlap per injection magnitude.

    A case counts as a hit only when the isolated set equals the planted set.

    Raises:
        ValueError: If the three sequences differ in length.
    """
    if not len(verdicts) == len(planted) == len(magnitudes):
        raise ValueError(
            f"got {len(verdicts)} verdicts, {len(planted)} planted sets "
            f"and {len(magnitudes)} magnitudes"
        )
    grouped: dict[float, list[tuple[set[int], set[int]]]] = defaultdict(list)
    for found, truth, magnitude in zip(verdicts, planted, magnitudes):
        grouped[float(magnitude)].append((set(found), set(truth)))
    return [
        RecallBucket(
            magnitude=magnitude,
            cases=len(cases),
            exact_matches=sum(found == truth for found, truth in cases),
            mean_jaccard=float(np.mean([jaccard(found, truth) for found, truth in cases])),
        )
        for magnitude, cases in sorted(grouped.items())
    ]
