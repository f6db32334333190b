"""Deterministic task fan-out for replication studies."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

ENV_THREADS = "MPGIG_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``MPGIG_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get(ENV_THREADS, "").strip()
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return int(threads)


def child_seeds(seed: int | None, n: int) -> list[int]:
    """``n`` independent 63-bit seeds split from ``seed``."""
    seqs = np.random.SeedSequence(seed).spawn(n)
    return [int(s.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1)) for s in seqs]


def map_ordered(fn: Callable, tasks: Sequence, threads: int | None = None) -> list:
    """
    Apply ``fn`` to every task and return results in task order.

    Each task must carry its own seed, so the output does not depend on the
    worker count or the completion order.
    """
    workers = min(resolve_threads(threads), max(len(tasks), 1))
    if workers == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=1))
