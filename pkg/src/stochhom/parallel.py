"""Order-preserving process-pool map.

Work is keyed by sample index and results come back in index order, so the
reductions downstream see the same sequence whatever ``jobs`` is.
"""

from __future__ import annotations

import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence


def pmap(func: Callable, items: Sequence, jobs: int = 1) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    ctx = mp.get_context("fork")
    chunk = max(1, len(items) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
        return list(pool.map(func, items, chunksize=chunk))


def indexed(seq: Iterable) -> list:
    return list(enumerate(seq))
