"""Thread-count control for data-parallel row loops.

The REIDRANK_THREADS environment variable caps parallelism; unset, empty or
unparsable values mean single-threaded. Work is partitioned by row, each row
is computed by the same kernel regardless of worker count, so results are
bitwise identical at any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "REIDRANK_THREADS"


def thread_count() -> int:
    raw = os.environ.get(ENV_THREADS, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def map_ordered(fn, items):
    """Apply ``fn`` to each item, preserving input order."""
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
