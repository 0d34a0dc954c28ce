"""Counter-based seeding.

Every random stream is addressed by ``(master seed, key...)`` so a
replication draws the same numbers no matter which worker runs it or in
what order.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def _key_int(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode())


def stream(seed: int, *key) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def replicate(
    fn: Callable[[np.random.Generator, int], T],
    reps: int,
    seed: int,
    key: Sequence = (),
    workers: int = 1,
    chunk: int = 512,
) -> list[T]:
    """Run ``fn(rng_i, i)`` for ``i < reps`` with ``rng_i = stream(seed, *key, i)``.

    Results come back in replication order; the worker count only changes
    scheduling, never the numbers.
    """
    key = tuple(key)

    def run(lo: int, hi: int) -> list[T]:
        return [fn(stream(seed, *key, i), i) for i in range(lo, hi)]

    bounds = [(lo, min(lo + chunk, reps)) for lo in range(0, reps, chunk)]
    if workers <= 1 or len(bounds) <= 1:
        out: list[T] = []
        for lo, hi in bounds:
            out.extend(run(lo, hi))
        return out
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda b: run(*b), bounds))
    return [x for part in parts for x in part]
