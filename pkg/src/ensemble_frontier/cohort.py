"""Synthetic classifier cohorts with controllable accuracy and error correlation.

Generative model, per example ``i`` with label ``y_i`` and model ``j``::

    z_ijc = s * [c == y_i] + sqrt(rho) * g_ic + sqrt(1 - rho) * h_ijc
    p_ij  = softmax(z_ij / tau)

``g`` is noise shared by every model in the cohort and ``h`` is private to
model ``j``; both are standard normal.  The total noise variance is 1 for every
``rho``, so ``rho`` changes how correlated the members' mistakes are without
changing how many mistakes each one makes.

All draws come from counter-based streams: the noise for (example ``i``,
class ``c``) sits at counter ``i * C + c`` of the stream for its source
(labels, shared, or model ``j``).  Any slice of examples can therefore be
generated independently and the pieces concatenate to the full cohort.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .predictions import LabelSet, PredictionSet
from .rng import normal_block, raw_block

__all__ = [
    "CohortSpec",
    "generate_cohort",
    "cohort_logits",
    "calibrate_signal",
    "estimate_single_accuracy",
]

_LABELS = ("cohort", "labels")
_SHARED = ("cohort", "shared")


def _model_stream(j: int) -> tuple:
    return ("cohort", "model", j)


@dataclass(frozen=True)
class CohortSpec:
    num_classes: int
    num_examples: int
    num_models: int
    signal: float
    correlation: float = 0.3
    temperature: float = 1.0
    seed: int = 0
    # Cohorts that share a label_seed (and N, C) are scored on the same labels.
    label_seed: int | None = None

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_examples < 1:
            raise ConfigError(f"num_examples must be >= 1, got {self.num_examples}")
        if self.num_models < 1:
            raise ConfigError(f"num_models must be >= 1, got {self.num_models}")
        if not self.signal >= 0:
            raise ConfigError(f"signal must be >= 0, got {self.signal}")
        if not 0.0 <= self.correlation <= 1.0:
            raise ConfigError(f"correlation must be in [0, 1], got {self.correlation}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.seed < 0 or (self.label_seed is not None and self.label_seed < 0):
            raise ConfigError("seeds must be non-negative")


def _labels(seed: int, num_classes: int, start: int, stop: int) -> np.ndarray:
    raw = raw_block(seed, _LABELS, start, stop - start)
    # Multiply-shift on the top 32 bits: uniform over [0, C) up to 2**-32 bias.
    top = (raw >> np.uint64(32)).astype(np.uint64)
    return ((top * np.uint64(num_classes)) >> np.uint64(32)).astype(np.int64)


def _noise(seed: int, stream: tuple, c: int, start: int, stop: int) -> np.ndarray:
    return normal_block(seed, stream, start * c, (stop - start) * c).reshape(stop - start, c)


def cohort_logits(spec: CohortSpec, start: int = 0, stop: int | None = None):
    """Labels and logits (``num_models x rows x C``) for examples ``start:stop``."""
    stop = spec.num_examples if stop is None else stop
    if not 0 <= start <= stop <= spec.num_examples:
        raise ConfigError(f"bad example range {start}:{stop}")
    c = spec.num_classes
    label_seed = spec.seed if spec.label_seed is None else spec.label_seed
    labels = _labels(label_seed, c, start, stop)
    onehot = np.zeros((stop - start, c))
    onehot[np.arange(stop - start), labels] = spec.signal
    rho = spec.correlation
    shared = np.sqrt(rho) * _noise(spec.seed, _SHARED, c, start, stop) if rho > 0 else 0.0
    private_w = np.sqrt(1.0 - rho)
    logits = np.empty((spec.num_models, stop - start, c))
    for j in range(spec.num_models):
        z = onehot + shared
        if private_w > 0:
            z = z + private_w * _noise(spec.seed, _model_stream(j), c, start, stop)
        logits[j] = z
    return labels, logits


def _softmax(z: np.ndarray, temperature: float) -> np.ndarray:
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def generate_cohort(spec: CohortSpec, chunk_size: int | None = None):
    """Return ``(members, labels)`` for ``spec``; bit-identical for any ``chunk_size``."""
    chunk = spec.num_examples if chunk_size is None else int(chunk_size)
    if chunk < 1:
        raise ConfigError("chunk_size must be >= 1")
    label_parts, prob_parts = [], []
    for start in range(0, spec.num_examples, chunk):
        stop = min(start + chunk, spec.num_examples)
        labels, logits = cohort_logits(spec, start, stop)
        label_parts.append(labels)
        prob_parts.append(_softmax(logits, spec.temperature))
    labels = np.concatenate(label_parts)
    probs = np.concatenate(prob_parts, axis=1)
    members = [PredictionSet(f"model_{j:03d}", probs[j]) for j in range(spec.num_models)]
    return members, LabelSet(labels)


def _margins(num_classes: int, correlation: float, seed: int, num_examples: int) -> np.ndarray:
    # An example is classified correctly iff s exceeds (best wrong-class noise
    # minus true-class noise); computing that margin once makes every probe of
    # the bisection use the same noise draws.
    spec = CohortSpec(num_classes, num_examples, 1, 0.0, correlation, 1.0, seed)
    labels, logits = cohort_logits(spec)
    noise = logits[0]
    rows = np.arange(num_examples)
    true = noise[rows, labels].copy()
    noise[rows, labels] = -np.inf
    return noise.max(axis=1) - true


def estimate_single_accuracy(signal: float, num_classes: int, correlation: float = 0.3,
                             seed: int = 0, num_examples: int = 50_000) -> float:
    margins = _margins(num_classes, correlation, seed, num_examples)
    return float(np.mean(margins < signal))


def calibrate_signal(target_accuracy: float, num_classes: int, correlation: float = 0.3,
                     temperature: float = 1.0, seed: int = 0, num_examples: int = 50_000,
                     tolerance: float = 0.005, max_iter: int = 40) -> float:
    """Signal ``s`` whose Monte Carlo single-model accuracy is ``target_accuracy``.

    Bisection over ``[0, 50]``.  ``temperature`` does not move the argmax and is
    accepted only so calibrations can be keyed by the full cohort parameters.
    """
    chance = 1.0 / num_classes
    if not (chance <= target_accuracy < 0.999):
        raise ConfigError(
            f"target accuracy must be in [1/C, 0.999) = [{chance:.4g}, 0.999), got {target_accuracy}"
        )
    if not temperature > 0:
        raise ConfigError("temperature must be > 0")
    margins = np.sort(_margins(num_classes, correlation, seed, num_examples))

    def accuracy(s: float) -> float:
        return np.searchsorted(margins, s, side="left") / margins.size

    lo, hi = 0.0, 50.0
    if accuracy(lo) >= target_accuracy:
        return lo
    if accuracy(hi) < target_accuracy:
        raise ConfigError(f"target {target_accuracy} unreachable with signal <= {hi}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if accuracy(mid) >= target_accuracy:
            hi = mid
        else:
            lo = mid
    if abs(accuracy(hi) - target_accuracy) > tolerance:
        raise ConfigError(
            f"bisection did not converge within {tolerance} after {max_iter} iterations"
        )
    return hi
