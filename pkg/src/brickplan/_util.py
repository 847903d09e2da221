"""Small shared helpers."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: int = 1) -> list[R]:
    """Map preserving input order; results never depend on completion order.

    Solver calls are pure functions of their arguments, so fanning them
    out is safe; the ordered merge keeps every caller deterministic.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def mix_seed(*parts: int) -> int:
    """Fold integers into one deterministic, process-independent seed."""
    acc = 0x9E3779B97F4A7C15
    for p in parts:
        acc = (acc ^ (p + 0x9E3779B97F4A7C15)) * 0xBF58476D1CE4E5B9 % (1 << 64)
    return acc
