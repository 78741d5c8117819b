"""Runtime scaling benchmark of the distribution distances."""

from __future__ import annotations

import contextlib
import logging
import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .ot import (DiscreteDistribution, OracleError, SlicedConfig, exact_w2_oracle, pw2,
                 rpw2, sw2)

log = logging.getLogger(__name__)

METHODS = ("rpw2-seq", "rpw2-quad", "sw2", "pw2", "w2-oracle")


@dataclass(frozen=True)
class BenchSpec:
    sizes: tuple = tuple(10 ** e for e in range(1, 7))
    dim: int = 5
    repetitions: int = 3
    methods: tuple = ("rpw2-seq", "rpw2-quad", "sw2", "pw2")
    seed: int = 0
    num_projections: int = 50
    memory_budget_bytes: float = 8e9
    parallel: bool = False

    def __post_init__(self):
        if list(self.sizes) != sorted(self.sizes) or not self.sizes:
            raise ValueError("sizes must be non-empty and sorted ascending")
        if self.repetitions < 3:
            raise ValueError("repetitions must be >= 3")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")


@dataclass
class BenchRow:
    method: str
    n: int
    median_seconds: float | None
    value: float | None
    note: str = ""


@dataclass
class BenchResult:
    rows: list = field(default_factory=list)
    parallel: bool = False

    def to_csv(self) -> str:
        lines = ["method,n,median_seconds,value,note"]
        for r in self.rows:
            t = "" if r.median_seconds is None else f"{r.median_seconds:.6e}"
            v = "" if r.value is None else repr(r.value)
            lines.append(f"{r.method},{r.n},{t},{v},{r.note}")
        return "\n".join(lines) + "\n"

    def timings(self, method: str):
        return [(r.n, r.median_seconds) for r in self.rows
                if r.method == method and r.median_seconds is not None]

    def slope(self, method: str, min_n: int | None = None, max_n: int | None = None) -> float | None:
        """Least-squares slope of log10(time) against log10(n)."""
        pts = [(n, t) for n, t in self.timings(method)
               if (min_n is None or n >= min_n) and (max_n is None or n <= max_n)]
        if len(pts) < 2:
            return None
        x = np.log10([n for n, _ in pts])
        y = np.log10([t for _, t in pts])
        return float(np.polyfit(x, y, 1)[0])

    def summary(self) -> str:
        mode = "parallel" if self.parallel else "single-threaded"
        lines = [f"# timings: {mode}", "method,top_decade_slope,overall_slope"]
        for method in dict.fromkeys(r.method for r in self.rows):
            pts = self.timings(method)
            if not pts:
                lines.append(f"{method},,")
                continue
            top = max(n for n, _ in pts)
            s_top = self.slope(method, min_n=top // 10)
            s_all = self.slope(method)
            fmt = lambda s: "" if s is None else f"{s:.3f}"
            lines.append(f"{method},{fmt(s_top)},{fmt(s_all)}")
        return "\n".join(lines) + "\n"


def sample_clouds(n: int, dim: int, seed: int):
    rng = np.random.default_rng([seed, n])
    return (DiscreteDistribution.uniform(rng.standard_normal((n, dim))),
            DiscreteDistribution.uniform(rng.standard_normal((n, dim))))


def _runner(method: str, spec: BenchSpec):
    cfg = SlicedConfig(spec.num_projections, spec.seed)
    return {
        "rpw2-seq": lambda a, b: rpw2(a, b, "sequential"),
        "rpw2-quad": lambda a, b: rpw2(a, b, "quadratic"),
        "sw2": lambda a, b: sw2(a, b, cfg),
        "pw2": lambda a, b: pw2(a, b, cfg),
        "w2-oracle": exact_w2_oracle,
    }[method]


def time_call(fn, *args, repetitions: int = 3):
    """Median wall time over ``repetitions`` calls after one discarded warm-up."""
    value = fn(*args)
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), value


def _skip_reason(method: str, n: int, spec: BenchSpec) -> str | None:
    if method == "rpw2-quad":
        need = 2 * 8.0 * n * n  # cost matrix plus one work buffer
        if need > spec.memory_budget_bytes:
            return f"skipped: needs ~{need / 1e9:.1f} GB > budget {spec.memory_budget_bytes / 1e9:.1f} GB"
    return None


def _thread_limit(parallel: bool):
    if parallel:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(limits=1)


def bench_scaling(spec: BenchSpec, progress=None) -> BenchResult:
    result = BenchResult(parallel=spec.parallel)
    with _thread_limit(spec.parallel):
        for n in spec.sizes:
            a, b = sample_clouds(n, spec.dim, spec.seed)
            for method in spec.methods:
                reason = _skip_reason(method, n, spec)
                if reason is None:
                    try:
                        median, value = time_call(_runner(method, spec), a, b,
                                                  repetitions=spec.repetitions)
                        row = BenchRow(method, n, median, float(value))
                    except (OracleError, MemoryError) as exc:
                        row = BenchRow(method, n, None, None, f"skipped: {exc}")
                else:
                    row = BenchRow(method, n, None, None, reason)
                if row.note:
                    log.info("%s n=%d %s", method, n, row.note)
                result.rows.append(row)
                if progress:
                    progress(row)
    return result
