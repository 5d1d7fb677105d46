"""FLOPs and latency accounting for single models and ensembles."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

from ._io import atomic_write_text
from .errors import ConfigError, DataFormatError

__all__ = [
    "LatencyKind",
    "LatencyDist",
    "ModelProfile",
    "ensemble_flops",
    "sequential_latency_ms",
    "parallel_latency_ms",
    "load_registry",
    "save_registry",
    "registry_from_json",
    "fixture_path",
]


class LatencyKind(str, enum.Enum):
    CONSTANT = "constant"
    LOGNORMAL = "lognormal"


@dataclass(frozen=True)
class LatencyDist:
    """Per-forward-pass latency.  LogNormal is parameterized by its median."""

    kind: LatencyKind = LatencyKind.CONSTANT
    p50_ms: float = 1.0
    sigma_log: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LatencyKind(self.kind))
        if not (self.p50_ms > 0 and math.isfinite(self.p50_ms)):
            raise ConfigError(f"p50_ms must be positive, got {self.p50_ms}")
        if not (self.sigma_log >= 0 and math.isfinite(self.sigma_log)):
            raise ConfigError(f"sigma_log must be non-negative, got {self.sigma_log}")
        if self.kind is LatencyKind.CONSTANT and self.sigma_log != 0:
            raise ConfigError("a constant latency has sigma_log 0")

    @classmethod
    def constant(cls, ms: float) -> "LatencyDist":
        return cls(LatencyKind.CONSTANT, ms, 0.0)

    @classmethod
    def lognormal(cls, p50_ms: float, sigma_log: float) -> "LatencyDist":
        return cls(LatencyKind.LOGNORMAL, p50_ms, sigma_log)

    def sample(self, rng: np.random.Generator, size=None):
        if self.kind is LatencyKind.CONSTANT:
            return np.full(size, self.p50_ms) if size is not None else self.p50_ms
        z = rng.standard_normal(size)
        return self.p50_ms * np.exp(self.sigma_log * z)

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "p50_ms": self.p50_ms, "sigma_log": self.sigma_log}


@dataclass(frozen=True)
class ModelProfile:
    model_id: str
    family: str
    scale_tag: str
    flops: float
    latency_ms: LatencyDist = LatencyDist()
    measured_accuracy: float | None = None

    def __post_init__(self):
        if not (self.flops > 0 and math.isfinite(self.flops)):
            raise ConfigError(f"{self.model_id}: flops must be positive, got {self.flops}")
        if self.measured_accuracy is not None and not 0.0 <= self.measured_accuracy <= 1.0:
            raise ConfigError(f"{self.model_id}: measured_accuracy must be in [0, 1]")

    def to_json(self) -> dict:
        out = {
            "model_id": self.model_id,
            "family": self.family,
            "scale_tag": self.scale_tag,
            "flops": self.flops,
            "latency": self.latency_ms.to_json(),
        }
        if self.measured_accuracy is not None:
            out["measured_accuracy"] = self.measured_accuracy
        return out


def ensemble_flops(profiles: Sequence[ModelProfile]) -> float:
    """Total multiply-adds of an ensemble: the sum over members."""
    if len(profiles) == 0:
        raise ConfigError("ensemble_flops needs at least one member")
    return math.fsum(p.flops for p in profiles)


def sequential_latency_ms(samples: Iterable[float]) -> float:
    """Latency of running every member back to back on one worker."""
    samples = list(samples)
    if not samples:
        raise ConfigError("no latency samples")
    return math.fsum(samples)


def parallel_latency_ms(samples: Iterable[float]) -> float:
    """Latency with one worker per member: the slowest member."""
    samples = list(samples)
    if not samples:
        raise ConfigError("no latency samples")
    return max(samples)


LATENCY_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": [k.value for k in LatencyKind]},
        "p50_ms": {"type": "number", "exclusiveMinimum": 0},
        "sigma_log": {"type": "number", "minimum": 0},
    },
    "required": ["kind", "p50_ms"],
    "additionalProperties": False,
}

PROFILE_SCHEMA = {
    "type": "object",
    "properties": {
        "model_id": {"type": "string", "minLength": 1},
        "family": {"type": "string", "minLength": 1},
        "scale_tag": {"type": "string"},
        "flops": {"type": "number", "exclusiveMinimum": 0},
        "latency": LATENCY_SCHEMA,
        "measured_accuracy": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    },
    "required": ["model_id", "family", "scale_tag", "flops", "latency"],
    "additionalProperties": False,
}

REGISTRY_SCHEMA = {"type": "array", "items": PROFILE_SCHEMA, "minItems": 1}


def _profile_from_json(obj: dict) -> ModelProfile:
    lat = obj["latency"]
    return ModelProfile(
        model_id=obj["model_id"],
        family=obj["family"],
        scale_tag=obj["scale_tag"],
        flops=float(obj["flops"]),
        latency_ms=LatencyDist(lat["kind"], float(lat["p50_ms"]), float(lat.get("sigma_log", 0.0))),
        measured_accuracy=obj.get("measured_accuracy"),
    )


def registry_from_json(data) -> list[ModelProfile]:
    try:
        jsonschema.validate(data, REGISTRY_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid model registry: {exc.message}") from None
    profiles = [_profile_from_json(obj) for obj in data]
    ids = [p.model_id for p in profiles]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate model_id in registry")
    return profiles


def load_registry(path) -> list[ModelProfile]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not valid JSON ({exc})") from None
    return registry_from_json(data)


def save_registry(path, profiles: Sequence[ModelProfile]) -> Path:
    return atomic_write_text(path, json.dumps([p.to_json() for p in profiles], indent=2) + "\n")


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture file, e.g. ``fixture_path("wrn_family.json")``."""
    return Path(str(resources.files("ensemble_frontier") / "fixtures" / name))
