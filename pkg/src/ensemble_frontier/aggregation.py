"""Combining member predictions into an ensemble prediction.

The geometric mean is computed in log space: floor each probability at
``epsilon``, average the logs over members (ascending member order), shift by
the row max, exponentiate, renormalize.  The shift and renormalization are
both positive per-row scalings, so argmax and hence accuracy are unaffected.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .predictions import LabelSet, PredictionSet, top1_accuracy

__all__ = [
    "AggregationKind",
    "AggregationRule",
    "DEFAULT_EPSILON",
    "geometric_mean",
    "raw_geometric_mean",
    "arithmetic_mean",
    "aggregate",
    "ensemble_accuracy",
]

DEFAULT_EPSILON = 1e-9


class AggregationKind(str, enum.Enum):
    GEOMETRIC = "geometric"
    ARITHMETIC = "arithmetic"


@dataclass(frozen=True)
class AggregationRule:
    kind: AggregationKind = AggregationKind.GEOMETRIC
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        object.__setattr__(self, "kind", AggregationKind(self.kind))
        if not (0.0 < self.epsilon <= 1e-6):
            raise ConfigError(f"epsilon must be in (0, 1e-6], got {self.epsilon}")


def _stack(members: Sequence[PredictionSet]) -> np.ndarray:
    if len(members) == 0:
        raise ShapeMismatch("cannot aggregate an empty member list")
    shape = members[0].probs.shape
    for m in members[1:]:
        if m.probs.shape != shape:
            raise ShapeMismatch(
                f"member {m.model_id} has shape {m.probs.shape}, expected {shape}"
            )
    return np.stack([m.probs for m in members])


def _ensemble_id(members: Sequence[PredictionSet], kind: str) -> str:
    return f"{kind}(" + "+".join(m.model_id for m in members) + ")"


def _mean_log(stacked: np.ndarray, epsilon: float) -> np.ndarray:
    logs = np.log(np.maximum(stacked, epsilon))
    # Fixed left-to-right summation over members so results do not depend on
    # how rows are partitioned.
    total = logs[0].copy()
    for layer in logs[1:]:
        total += layer
    return total / stacked.shape[0]


def raw_geometric_mean(members: Sequence[PredictionSet],
                       epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Unnormalized elementwise ``(prod_i max(y_i, eps)) ** (1/n)``."""
    return np.exp(_mean_log(_stack(members), epsilon))


def geometric_mean(members: Sequence[PredictionSet],
                   epsilon: float = DEFAULT_EPSILON) -> PredictionSet:
    stacked = _stack(members)
    if len(members) == 1:
        return members[0]
    mean_log = _mean_log(stacked, epsilon)
    mean_log -= mean_log.max(axis=1, keepdims=True)
    out = np.exp(mean_log)
    out /= out.sum(axis=1, keepdims=True)
    return PredictionSet(_ensemble_id(members, "geo"), out)


def arithmetic_mean(members: Sequence[PredictionSet]) -> PredictionSet:
    stacked = _stack(members)
    if len(members) == 1:
        return members[0]
    total = stacked[0].copy()
    for layer in stacked[1:]:
        total += layer
    return PredictionSet(_ensemble_id(members, "arith"), total / len(members))


def aggregate(members: Sequence[PredictionSet], rule: AggregationRule | None = None) -> PredictionSet:
    rule = rule or AggregationRule()
    if rule.kind is AggregationKind.GEOMETRIC:
        return geometric_mean(members, rule.epsilon)
    return arithmetic_mean(members)


def ensemble_accuracy(members: Sequence[PredictionSet], labels: LabelSet,
                      rule: AggregationRule | None = None) -> float:
    return top1_accuracy(aggregate(members, rule), labels)
