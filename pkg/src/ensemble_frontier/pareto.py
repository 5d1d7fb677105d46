"""Accuracy-vs-cost ensemble curves, Pareto frontiers and crossover detection."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._io import atomic_write_text, csv_text
from .aggregation import AggregationRule, ensemble_accuracy
from .cost import ModelProfile
from .errors import ConfigError, InvariantViolation, ShapeMismatch
from .predictions import LabelSet, PredictionSet, top1_accuracy
from .rng import generator

__all__ = [
    "CurvePoint",
    "EnsembleCurve",
    "DEFAULT_MIN_GAIN",
    "DEFAULT_REPLICATES",
    "dominates",
    "pareto_frontier",
    "frontier_mask",
    "build_ensemble_curve",
    "best_accuracy_at",
    "crossover_cost",
    "optimal_ensemble_size",
    "CURVE_HEADER",
    "FRONTIER_HEADER",
    "write_curve_csv",
    "write_frontier_csv",
]

DEFAULT_MIN_GAIN = 0.002
DEFAULT_REPLICATES = 20

CURVE_HEADER = ["family", "ensemble_size", "cost", "cost_unit", "accuracy"]
FRONTIER_HEADER = CURVE_HEADER + ["on_frontier"]


@dataclass(frozen=True)
class CurvePoint:
    family: str
    ensemble_size: int
    cost: float
    accuracy: float
    cost_unit: str = "flops"

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ConfigError(f"ensemble_size must be >= 1, got {self.ensemble_size}")
        if not (self.cost > 0 and math.isfinite(self.cost)):
            raise ConfigError(f"cost must be positive, got {self.cost}")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ConfigError(f"accuracy must be in [0, 1], got {self.accuracy}")

    def row(self) -> list:
        return [self.family, self.ensemble_size, float(self.cost), self.cost_unit, float(self.accuracy)]


@dataclass(frozen=True)
class EnsembleCurve:
    family: str
    points: tuple[CurvePoint, ...] = field(default_factory=tuple)

    def __post_init__(self):
        pts = tuple(self.points)
        if not pts:
            raise ConfigError(f"curve {self.family!r} has no points")
        for a, b in zip(pts, pts[1:]):
            if not b.ensemble_size > a.ensemble_size:
                raise InvariantViolation(f"curve {self.family!r}: sizes not strictly increasing")
            if not b.cost > a.cost:
                raise InvariantViolation(f"curve {self.family!r}: costs not strictly increasing")
        object.__setattr__(self, "points", pts)

    @property
    def costs(self) -> np.ndarray:
        return np.array([p.cost for p in self.points])

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([p.accuracy for p in self.points])

    @classmethod
    def from_arrays(cls, family: str, costs, accuracies, sizes=None, cost_unit="flops") -> "EnsembleCurve":
        sizes = range(1, len(costs) + 1) if sizes is None else sizes
        return cls(family, tuple(
            CurvePoint(family, int(n), float(c), float(a), cost_unit)
            for n, c, a in zip(sizes, costs, accuracies)
        ))


def dominates(a: CurvePoint, b: CurvePoint) -> bool:
    """``a`` is at least as accurate and at most as costly as ``b``, strictly better in one."""
    return (a.accuracy >= b.accuracy and a.cost <= b.cost
            and (a.accuracy > b.accuracy or a.cost < b.cost))


def frontier_mask(costs, accuracies) -> np.ndarray:
    """Boolean mask of non-dominated points; exact duplicates keep the first occurrence."""
    costs = np.asarray(costs, dtype=float)
    accuracies = np.asarray(accuracies, dtype=float)
    if costs.size == 0:
        raise ConfigError("pareto frontier of an empty point set")
    # Cost ascending, then accuracy descending, then input order.
    order = np.lexsort((np.arange(costs.size), -accuracies, costs))
    mask = np.zeros(costs.size, dtype=bool)
    best = -math.inf
    for i in order:
        if accuracies[i] > best:
            mask[i] = True
            best = accuracies[i]
    return mask


def pareto_frontier(points: Sequence[CurvePoint]) -> list[CurvePoint]:
    points = list(points)
    mask = frontier_mask([p.cost for p in points], [p.accuracy for p in points])
    kept = [(p.cost, i) for i, p in enumerate(points) if mask[i]]
    return [points[i] for _, i in sorted(kept)]


def build_ensemble_curve(profile: ModelProfile, members: Sequence[PredictionSet], labels: LabelSet,
                         rule: AggregationRule | None = None,
                         replicates: int = DEFAULT_REPLICATES, seed: int = 0,
                         cost_unit: str = "flops") -> EnsembleCurve:
    """Accuracy of random ``n``-member sub-ensembles for ``n = 1 .. len(members)``.

    The ``n = 1`` point is the median single-model accuracy; every larger ``n``
    averages ``replicates`` random subsets drawn without replacement.  All
    subsets are drawn before any is evaluated, so the curve does not depend on
    evaluation order.
    """
    if replicates < 1:
        raise ConfigError(f"replicates must be >= 1, got {replicates}")
    if not members:
        raise ConfigError("build_ensemble_curve needs at least one member")
    shape = members[0].probs.shape
    if any(m.probs.shape != shape for m in members):
        raise ShapeMismatch("ensemble members disagree in shape")
    rng = generator(seed, "curve", profile.model_id)
    m = len(members)
    subsets = {n: [tuple(sorted(rng.choice(m, size=n, replace=False).tolist()))
                   for _ in range(replicates)]
               for n in range(2, m + 1)}

    singles = [top1_accuracy(p, labels) for p in members]
    cache: dict[tuple[int, ...], float] = {}
    accuracies = [statistics.median(singles)]
    for n in range(2, m + 1):
        vals = []
        for subset in subsets[n]:
            if subset not in cache:
                cache[subset] = ensemble_accuracy([members[i] for i in subset], labels, rule)
            vals.append(cache[subset])
        accuracies.append(math.fsum(vals) / len(vals))
    cost = profile.flops
    return EnsembleCurve(profile.family, tuple(
        CurvePoint(profile.family, n, n * cost, acc, cost_unit)
        for n, acc in enumerate(accuracies, start=1)
    ))


def best_accuracy_at(curve: EnsembleCurve, cost: float) -> float:
    """Step-interpolated best accuracy among points costing at most ``cost``; -inf if none."""
    costs = curve.costs
    k = np.searchsorted(costs, cost, side="right")
    if k == 0:
        return -math.inf
    return float(curve.accuracies[:k].max())


def crossover_cost(small_family: EnsembleCurve, large_family: EnsembleCurve) -> float | None:
    """Lowest cost at which ``large_family``'s best-so-far accuracy beats ``small_family``'s.

    Only costs where both families have at least one point are compared.
    Both step functions change only at point costs, and ``large_family``
    can only start winning where one of its own points appears.
    """
    start = max(small_family.points[0].cost, large_family.points[0].cost)
    for c in sorted({p.cost for p in large_family.points} | {start}):
        if c < start:
            continue
        if best_accuracy_at(large_family, c) > best_accuracy_at(small_family, c):
            return float(c)
    return None


def optimal_ensemble_size(curve: EnsembleCurve, min_gain: float = DEFAULT_MIN_GAIN) -> int:
    """Largest ensemble size reached while every step up in size gains at least ``min_gain``."""
    pts = curve.points
    best = pts[0].ensemble_size
    for prev, cur in zip(pts, pts[1:]):
        if cur.accuracy - prev.accuracy < min_gain:
            break
        best = cur.ensemble_size
    return best


def write_curve_csv(path, points: Sequence[CurvePoint]):
    return atomic_write_text(path, csv_text(CURVE_HEADER, [p.row() for p in points]))


def write_frontier_csv(path, points: Sequence[CurvePoint], by_family: bool = False):
    """Points with an ``on_frontier`` flag, computed over all points or per family."""
    points = list(points)
    mask = np.zeros(len(points), dtype=bool)
    groups = sorted({p.family for p in points}) if by_family else [None]
    for fam in groups:
        idx = [i for i, p in enumerate(points) if fam is None or p.family == fam]
        sub = frontier_mask([points[i].cost for i in idx], [points[i].accuracy for i in idx])
        mask[idx] = sub
    rows = [p.row() + [int(on)] for p, on in zip(points, mask)]
    return atomic_write_text(path, csv_text(FRONTIER_HEADER, rows))
