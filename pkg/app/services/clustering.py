"""K-means cluster module over attack-free forecasts.

Lloyd's algorithm with k-means++ seeding. The fitted model keeps every
training forecast with its final cluster index so isolation can compare a
query against the attack-free members of its own cluster.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..constants import (
    DEFAULT_KMEANS_MAX_ITERATIONS,
    FORECASTS_PER_CLUSTER,
    MIN_DESK_CLUSTER_COUNT,
)
from ..models import DemandForecast, ForecastLabel, stack_forecasts

logger = logging.getLogger(__name__)

_ASSIGN_CHUNK_ROWS = 512


def _read_only(values: np.ndarray, dtype: type) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, slots=True, eq=False)
class ClusterModel:
    """Fitted centroids plus the stored attack-free database."""

    centroids: np.ndarray
    database: np.ndarray
    labels: np.ndarray
    objective_trace: tuple[float, ...] = ()
    seed: int = 0
    day_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        centroids = _read_only(self.centroids, np.float64)
        database = _read_only(self.database, np.float64)
        labels = _read_only(self.labels, np.int64)
        if centroids.ndim != 2 or centroids.shape[0] < 1:
            raise ValueError(f"centroids must be a (k, P) matrix, got shape {centroids.shape}")
        if database.ndim != 2 or database.shape[1] != centroids.shape[1]:
            raise ValueError(
                f"database shape {database.shape} does not match centroid length {centroids.shape[1]}"
            )
        if labels.shape != (database.shape[0],):
            raise ValueError(f"need one label per stored forecast, got {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= centroids.shape[0]):
            raise ValueError("cluster labels out of range")
        day_ids = tuple(int(day) for day in self.day_ids)
        if day_ids and len(day_ids) != database.shape[0]:
            raise ValueError("day_ids must align with the stored forecasts")
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "database", database)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "objective_trace", tuple(float(v) for v in self.objective_trace))
        object.__setattr__(self, "day_ids", day_ids)

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def pricing_slots(self) -> int:
        return int(self.centroids.shape[1])

    def members(self, index: int) -> np.ndarray:
        """Stored forecasts assigned to one cluster, as an (n, P) matrix."""
        return self.database[self.labels == index]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClusterModel):
            return NotImplemented
        return (
            np.array_equal(self.centroids, other.centroids)
            and np.array_equal(self.database, other.database)
            and np.array_equal(self.labels, other.labels)
            and self.objective_trace == other.objective_trace
            and self.seed == other.seed
            and self.day_ids == other.day_ids
        )

    __hash__ = None  # type: ignore[assignment]


def desk_scale_cluster_count(train_size: int) -> int:
    """Cluster count used when none is configured: one cluster per 25 days, at least 4."""
    return min(train_size, max(MIN_DESK_CLUSTER_COUNT, train_size // FORECASTS_PER_CLUSTER))


def squared_distances(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) matrix of squared Euclidean distances."""
    out = np.empty((values.shape[0], centroids.shape[0]))
    for start in range(0, values.shape[0], _ASSIGN_CHUNK_ROWS):
        block = values[start : start + _ASSIGN_CHUNK_ROWS]
        diff = block[:, None, :] - centroids[None, :, :]
        out[start : start + block.shape[0]] = np.sum(diff * diff, axis=2)
    return out


def assign_clusters(values: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row (ties to the smallest index) and its distance."""
    distances = squared_distances(values, centroids)
    labels = np.argmin(distances, axis=1)
    return labels, distances[np.arange(values.shape[0]), labels]


def _kmeans_plus_plus(values: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = values.shape[0]
    chosen = [int(rng.integers(n))]
    closest = np.sum((values - values[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:
            index = int(rng.integers(n))
        else:
            index = int(rng.choice(n, p=closest / total))
        chosen.append(index)
        closest = np.minimum(closest, np.sum((values - values[index]) ** 2, axis=1))
    return values[chosen].copy()


def _update_centroids(
    values: np.ndarray, labels: np.ndarray, centroids: np.ndarray, distances: np.ndarray
) -> np.ndarray:
    updated = centroids.copy()
    empty: list[int] = []
    for index in range(centroids.shape[0]):
        mask = labels == index
        if mask.any():
            updated[index] = values[mask].mean(axis=0)
        else:
            empty.append(index)
    if empty:
        # Re-seed empty clusters on the points farthest from their centroid.
        farthest = np.argsort(-distances, kind="stable")
        for index, point in zip(empty, farthest):
            updated[index] = values[point]
        logger.debug("Re-seeded %d empty clusters", len(empty))
    return updated


def fit_clusters(
    train: Sequence[DemandForecast] | np.ndarray,
    k: int | None = None,
    seed: int = 0,
    *,
    max_iterations: int = DEFAULT_KMEANS_MAX_ITERATIONS,
) -> ClusterModel:
    """Fit k-means on attack-free forecasts.

    Args:
        train: Attack-free forecasts, or an (n, P) matrix of them.
        k: Cluster count; ``None`` picks the desk-scale default.
        seed: Seed for k-means++ initialisation.
        max_iterations: Lloyd iteration cap.

    Returns:
        Fitted model storing every training forecast and its final index.

    Raises:
        ValueError: If the training set is smaller than k or contains an
            attacked forecast.
    """
    day_ids: tuple[int, ...] = ()
    if isinstance(train, np.ndarray):
        values = np.array(train, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"training matrix must be 2-d, got shape {values.shape}")
    else:
        forecasts = list(train)
        for forecast in forecasts:
            if forecast.label is ForecastLabel.ATTACKED:
                raise ValueError(f"training forecast for day {forecast.day_id} is attacked")
        values = stack_forecasts(forecasts)
        day_ids = tuple(forecast.day_id for forecast in forecasts)

    n = values.shape[0]
    if k is None:
        k = desk_scale_cluster_count(n)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"training set of {n} forecasts is smaller than k={k}")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_plus_plus(values, k, rng)
    labels, distances = assign_clusters(values, centroids)
    objective = [float(distances.sum())]
    for _ in range(max_iterations):
        centroids = _update_centroids(values, labels, centroids, distances)
        new_labels, distances = assign_clusters(values, centroids)
        objective.append(float(distances.sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels

    logger.info(
        "Fitted %d clusters on %d forecasts in %d Lloyd iterations (objective %.6g)",
        k, n, len(objective) - 1, objective[-1],
    )
    return ClusterModel(
        centroids=centroids,
        database=values,
        labels=labels,
        objective_trace=tuple(objective),
        seed=seed,
        day_ids=day_ids,
    )


def closest_centroid(forecast: DemandForecast | np.ndarray, model: ClusterModel) -> tuple[int, float]:
    """Nearest centroid index and squared distance; ties go to the smallest index.

    Raises:
        ValueError: If the forecast length does not match the centroids.
    """
    values = forecast.values if isinstance(forecast, DemandForecast) else np.asarray(forecast, float)
    if values.shape != (model.pricing_slots,):
        raise ValueError(
            f"forecast length {values.shape} does not match centroid length {model.pricing_slots}"
        )
    diff = model.centroids - values[None, :]
    distances = np.sum(diff * diff, axis=1)
    index = int(np.argmin(distances))
    return index, float(distances[index])


def cluster_population(forecast: DemandForecast, model: ClusterModel) -> np.ndarray:
    """Stored members of the forecast's nearest cluster.

    Falls back to the whole database when the cluster has fewer than two
    members.
    """
    index, _ = closest_centroid(forecast, model)
    members = model.members(index)
    if members.shape[0] < 2:
        logger.debug("Cluster %d has %d members; using the whole database", index, members.shape[0])
        return model.database
    return members
