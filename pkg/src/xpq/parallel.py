"""Worker-thread control.

Parallelism never changes results: maps preserve input order and all
reductions over mapped results happen sequentially on the caller's side.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_threads = 1


def resolve_threads(flag: int | None = None) -> int:
    """Thread count from an explicit flag, the XPQ_THREADS env var, or 1."""
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get("XPQ_THREADS")
    if env:
        return max(1, int(env))
    return 1


def set_threads(n: int) -> None:
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads


def ordered_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Map fn over items, in parallel if configured, preserving input order."""
    seq: Sequence[T] = list(items)
    if _threads <= 1 or len(seq) <= 1:
        return [fn(x) for x in seq]
    with ThreadPoolExecutor(max_workers=_threads) as pool:
        return list(pool.map(fn, seq))
