"""Wall-clock comparison of perturbation methods."""
from __future__ import annotations

import statistics
import time
from typing import Callable, Dict


def time_call(fn: Callable[[], object]) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def efficiency_benchmark(methods: Dict[str, Callable[[], object]], runs: int = 3,
                         warmup: Dict[str, Callable[[], object]] | None = None) -> Dict[str, dict]:
    """Median of `runs` timings per method.

    Each entry of `methods` is a zero-argument callable producing the full perturbed
    dataset. `warmup` may give a cheaper callable per method run once beforehand so
    lazy initialisation and allocator warm-up are excluded.
    """
    table = {}
    for name, fn in methods.items():
        if warmup and name in warmup:
            warmup[name]()
        times = [time_call(fn) for _ in range(runs)]
        table[name] = {"median_seconds": statistics.median(times), "runs": times}
    return table


def speedup(table: dict, fast: str, slow: str) -> float:
    f = table[fast]["median_seconds"]
    s = table[slow]["median_seconds"]
    return float("inf") if f == 0 else s / f
