"""Distributed ensemble inference: fan members out to workers and measure makespan.

Each request draws one latency per member, packs the members onto
``num_workers`` workers, and completes when the busiest worker finishes plus
a fixed aggregation overhead.  Requests are independent; there is no queueing.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._io import atomic_write_text, csv_text
from .cost import ModelProfile
from .errors import ConfigError
from .rng import generator

__all__ = [
    "Scheduler",
    "SimConfig",
    "LatencyReport",
    "lpt_assign",
    "round_robin_assign",
    "worker_loads",
    "nearest_rank",
    "simulate",
    "write_report_csv",
    "write_makespans_csv",
]


class Scheduler(str, enum.Enum):
    ROUND_ROBIN = "round_robin"
    LPT = "lpt"


@dataclass(frozen=True)
class SimConfig:
    members: tuple[ModelProfile, ...]
    num_workers: int = 1
    num_requests: int = 1000
    scheduler: Scheduler = Scheduler.LPT
    agg_overhead_ms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "scheduler", Scheduler(self.scheduler))
        if not self.members:
            raise ConfigError("simulation needs at least one member")
        if self.num_workers < 1:
            raise ConfigError(f"num_workers must be >= 1, got {self.num_workers}")
        if self.num_requests < 1:
            raise ConfigError(f"num_requests must be >= 1, got {self.num_requests}")
        if not (self.agg_overhead_ms >= 0 and math.isfinite(self.agg_overhead_ms)):
            raise ConfigError("agg_overhead_ms must be non-negative")


@dataclass(frozen=True)
class LatencyReport:
    makespans_ms: np.ndarray
    sequential_ms: np.ndarray
    p50: float
    p95: float
    p99: float
    mean: float
    max: float
    speedup_vs_sequential: float
    extra: dict = field(default_factory=dict)

    def metrics(self) -> list[tuple[str, float]]:
        return [
            ("p50_ms", self.p50),
            ("p95_ms", self.p95),
            ("p99_ms", self.p99),
            ("mean_ms", self.mean),
            ("max_ms", self.max),
            ("sequential_mean_ms", float(np.mean(self.sequential_ms))),
            ("speedup_vs_sequential", self.speedup_vs_sequential),
        ]


def lpt_assign(durations: Sequence[float], num_workers: int) -> list[int]:
    """Longest-processing-time greedy: worker index for each task.

    Tasks are taken longest first (equal durations in input order) and each
    goes to the currently least-loaded worker, lowest index on ties.
    """
    if num_workers < 1:
        raise ConfigError(f"num_workers must be >= 1, got {num_workers}")
    order = sorted(range(len(durations)), key=lambda i: (-durations[i], i))
    heap = [(0.0, w) for w in range(num_workers)]
    assignment = [0] * len(durations)
    for i in order:
        load, w = heapq.heappop(heap)
        assignment[i] = w
        heapq.heappush(heap, (load + durations[i], w))
    return assignment


def round_robin_assign(num_tasks: int, num_workers: int) -> list[int]:
    if num_workers < 1:
        raise ConfigError(f"num_workers must be >= 1, got {num_workers}")
    return [i % num_workers for i in range(num_tasks)]


def worker_loads(durations: Sequence[float], assignment: Sequence[int], num_workers: int) -> list[float]:
    buckets: list[list[float]] = [[] for _ in range(num_workers)]
    for d, w in zip(durations, assignment):
        buckets[w].append(d)
    return [math.fsum(b) for b in buckets]


def nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    """Nearest-rank quantile of an ascending array: the ceil(q*N)-th smallest value."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("quantile of an empty array")
    k = max(1, math.ceil(q * n))
    return float(sorted_values[min(k, n) - 1])


def _draw_samples(config: SimConfig) -> np.ndarray:
    # One stream per member, so adding members or workers leaves the other
    # members' draws untouched.
    cols = []
    for j, profile in enumerate(config.members):
        rng = generator(config.seed, "simulate", "member", j)
        cols.append(np.asarray(profile.latency_ms.sample(rng, config.num_requests), dtype=float))
    return np.column_stack(cols)


def simulate(config: SimConfig) -> LatencyReport:
    samples = _draw_samples(config)
    n = len(config.members)
    w = config.num_workers
    rr = round_robin_assign(n, w)
    makespans = np.empty(config.num_requests)
    sequential = np.empty(config.num_requests)
    for r, row in enumerate(samples.tolist()):
        if config.scheduler is Scheduler.LPT:
            assignment = lpt_assign(row, w)
        else:
            assignment = rr
        makespans[r] = max(worker_loads(row, assignment, w)) + config.agg_overhead_ms
        sequential[r] = math.fsum(row)
    ordered = np.sort(makespans)
    return LatencyReport(
        makespans_ms=makespans,
        sequential_ms=sequential,
        p50=nearest_rank(ordered, 0.50),
        p95=nearest_rank(ordered, 0.95),
        p99=nearest_rank(ordered, 0.99),
        mean=float(np.mean(makespans)),
        max=float(ordered[-1]),
        speedup_vs_sequential=math.fsum(sequential) / math.fsum(makespans),
    )


def write_report_csv(path, report: LatencyReport):
    return atomic_write_text(path, csv_text(["metric", "value"], report.metrics()))


def write_makespans_csv(path, report: LatencyReport):
    rows = [(i, float(m)) for i, m in enumerate(report.makespans_ms)]
    return atomic_write_text(path, csv_text(["request_id", "makespan_ms"], rows))
