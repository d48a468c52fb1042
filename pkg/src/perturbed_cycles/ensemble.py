"""Deterministic batching of Monte Carlo replicates over a thread pool.

Replicates are split into fixed-size batches and batch ``j`` always draws from
``stream(seed, j)``, so results do not depend on the number of threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, TypeVar

from .sde_core import stream

T = TypeVar("T")

DEFAULT_BATCH = 4096


def run_batches(worker: Callable[[object, int, int], T], n: int, seed: int, *,
                batch_size: int = DEFAULT_BATCH, threads: int = 1) -> List[T]:
    """Call ``worker(rng, count, batch_index)`` for each batch; results in batch order."""
    if n < 0:
        raise ValueError("replicate count must be non-negative")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    sizes = [min(batch_size, n - s) for s in range(0, n, batch_size)]
    jobs = [(stream(seed, j), c, j) for j, c in enumerate(sizes)]
    if threads <= 1 or len(jobs) <= 1:
        return [worker(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: worker(*job), jobs))
