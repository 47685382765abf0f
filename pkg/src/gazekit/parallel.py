"""Thread-pool helper honoring the GAZEKIT_THREADS cap.

Results always come back in input order and reductions happen on the
caller's side in that fixed order, so output is independent of the
thread count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_VAR = "GAZEKIT_THREADS"


def max_workers() -> int:
    raw = os.environ.get(ENV_VAR, "0")
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value <= 0:
        return os.cpu_count() or 1
    return value


def parallel_map(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    workers = min(max_workers(), max(len(items), 1))
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
