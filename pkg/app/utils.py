"""Helper functions for running per-day work and summarising results.

Nothing here knows about the simulator's domain types; callers pass plain
callables and numbers.
"""

from __future__ import annotations

import logging
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

PROGRESS_REPORT_EVERY_ITEMS = 25
DEFAULT_CHUNK_SIZE = 4


def resolve_workers(workers: Optional[int]) -> int:
    """Number of worker processes to use; ``None`` or 0 means one per CPU."""
    if workers is None or workers == 0:
        return max(1, os.cpu_count() or 1)
    if workers < 0:
        raise ValueError(f"workers must be >= 0, got {workers}")
    return workers


def ordered_map(
    fn: Callable[[T], R],
    items: Iterable[T],
    *,
    workers: Optional[int] = 1,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> list[R]:
    """Apply ``fn`` to every item, in worker processes when asked to.

    Results come back in input order whatever order the workers finish in,
    so output files written from them are identical for any worker count.
    ``fn`` and the items must be picklable when more than one worker is used.

    Args:
        fn: Function applied to each item.
        items: Inputs.
        workers: Process count; 1 runs in the calling process, ``None`` or 0
            uses one process per CPU.
        chunk_size: Items handed to a worker at a time.

    Returns:
        One result per item, in input order.
    """
    inputs = list(items)
    total = len(inputs)
    count = min(resolve_workers(workers), max(total, 1))

    def report(done: int) -> None:
        if done % PROGRESS_REPORT_EVERY_ITEMS == 0 or done == total:
            logger.debug("Processed %d/%d items", done, total)

    results: list[R] = []
    if count <= 1:
        for item in inputs:
            results.append(fn(item))
            report(len(results))
        return results

    logger.debug("Running %d items on %d worker processes", total, count)
    with ProcessPoolExecutor(max_workers=count) as executor:
        for result in executor.map(fn, inputs, chunksize=chunk_size):
            results.append(result)
            report(len(results))
    return results


def percent_delta(value: float, reference: float) -> float | None:
    """Relative change of ``value`` against ``reference`` in percent.

    Returns ``None`` when the reference is zero.
    """
    if reference == 0:
        return None
    return (value - reference) / abs(reference) * 100.0


def mean_or_none(values: Iterable[float | None]) -> float | None:
    """Mean of the defined values, ``None`` when there are none."""
    present = [float(v) for v in values if v is not None and not math.isnan(v)]
    return statistics.fmean(present) if present else None


def median_or_none(values: Iterable[float | None]) -> float | None:
    """Median of the defined values, ``None`` when there are none."""
    present = [float(v) for v in values if v is not None and not math.isnan(v)]
    return statistics.median(present) if present else None
