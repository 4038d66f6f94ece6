"""Per-client fan-out with a fixed-order reduction.

``FLIX_THREADS`` caps the worker count. Results are returned in client order
and reductions always sum sequentially over client indices, so outputs do
not depend on the thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_pools: dict[int, ThreadPoolExecutor] = {}


def thread_count() -> int:
    raw = os.environ.get("FLIX_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _pool(workers):
    pool = _pools.get(workers)
    if pool is None:
        pool = _pools[workers] = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="flix")
    return pool


def client_map(fn, n: int) -> list:
    """``[fn(0), ..., fn(n-1)]``, possibly evaluated concurrently."""
    workers = min(thread_count(), n)
    if workers <= 1:
        return [fn(i) for i in range(n)]
    return list(_pool(workers).map(fn, range(n)))


def ordered_mean(vectors) -> np.ndarray:
    acc = None
    count = 0
    for v in vectors:
        acc = np.array(v, dtype=np.float64, copy=True) if acc is None else acc + v
        count += 1
    if acc is None:
        raise ValueError("nothing to average")
    return acc / count


def ordered_weighted_sum(weights, vectors) -> np.ndarray:
    acc = None
    for w, v in zip(weights, vectors):
        term = w * np.asarray(v, dtype=np.float64)
        acc = term if acc is None else acc + term
    return acc
