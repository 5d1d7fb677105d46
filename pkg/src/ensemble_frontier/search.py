"""Joint architecture search for small ensembles under a max-latency reward.

An architecture is 50 integer codes: an input-resolution code followed by
seven blocks of seven codes each.  An ensemble of ``n`` members is searched as
one ``n * 50`` genome.  Accuracy comes from a deterministic surrogate rather
than training, latency from an analytic FLOPs model, and the reward penalizes
the slowest member only, since members are assumed to run on separate workers.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from ._io import atomic_write_text, csv_text
from .errors import ConfigError
from .pareto import CurvePoint, pareto_frontier
from .rng import generator

__all__ = [
    "RESOLUTIONS",
    "BLOCK_FIELDS",
    "BLOCK_CHOICES",
    "NUM_BLOCKS",
    "ARCH_DIM",
    "MAX_ENSEMBLE_SIZE",
    "ArchSpec",
    "EnsembleArch",
    "SearchSpace",
    "SurrogateParams",
    "RewardParams",
    "EvolutionParams",
    "Strategy",
    "Evaluation",
    "SearchResult",
    "arch_flops_and_latency",
    "surrogate_accuracy",
    "arch_distance",
    "effective_correlation",
    "combine_accuracies",
    "ensemble_reward",
    "evaluate_ensemble",
    "search",
    "exhaustive_best",
    "duplicate_vs_diverse_report",
    "POINTS_HEADER",
    "REPORT_HEADER",
]

RESOLUTIONS = (112, 168, 196, 224)
BLOCK_FIELDS = ("conv_type", "kernel", "expansion", "se_flag", "skip_flag", "width_code", "depth")
BLOCK_CHOICES = {
    "conv_type": (0, 1, 2),
    "kernel": (3, 5),
    "expansion": (1, 3, 6),
    "se_flag": (0, 1),
    "skip_flag": (0, 1),
    "width_code": (0, 1, 2, 3),
    "depth": (1, 2, 3, 4),
}
WIDTH_MULTIPLIERS = (0.5, 0.75, 1.0, 1.25)
NUM_BLOCKS = 7
ARCH_DIM = 1 + NUM_BLOCKS * len(BLOCK_FIELDS)
MAX_ENSEMBLE_SIZE = 3

# Values each of the 50 positions can take, position 0 being the resolution.
DIM_VALUES: tuple[tuple[int, ...], ...] = (RESOLUTIONS,) + tuple(
    BLOCK_CHOICES[f] for _ in range(NUM_BLOCKS) for f in BLOCK_FIELDS
)

BASE_BLOCK_COST = 1.0e6           # multiply-adds of a unit block at 224px
THROUGHPUT_FLOPS_PER_MS = 4.0e6   # roughly a 2016-era phone CPU
SE_LATENCY_PENALTY = 0.1


@dataclass(frozen=True)
class ArchSpec:
    resolution: int
    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        blocks = tuple(tuple(int(v) for v in b) for b in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if self.resolution not in RESOLUTIONS:
            raise ConfigError(f"resolution must be one of {RESOLUTIONS}, got {self.resolution}")
        if len(blocks) != NUM_BLOCKS:
            raise ConfigError(f"expected {NUM_BLOCKS} blocks, got {len(blocks)}")
        for i, b in enumerate(blocks):
            if len(b) != len(BLOCK_FIELDS):
                raise ConfigError(f"block {i} needs {len(BLOCK_FIELDS)} codes, got {len(b)}")
            for name, v in zip(BLOCK_FIELDS, b):
                if v not in BLOCK_CHOICES[name]:
                    raise ConfigError(f"block {i} {name}={v} not in {BLOCK_CHOICES[name]}")

    @classmethod
    def from_values(cls, values: Sequence[int]) -> "ArchSpec":
        values = [int(v) for v in values]
        if len(values) != ARCH_DIM:
            raise ConfigError(f"an architecture has {ARCH_DIM} values, got {len(values)}")
        k = len(BLOCK_FIELDS)
        return cls(values[0], tuple(tuple(values[1 + i * k: 1 + (i + 1) * k]) for i in range(NUM_BLOCKS)))

    def values(self) -> tuple[int, ...]:
        return (self.resolution,) + tuple(v for b in self.blocks for v in b)

    def to_json(self) -> dict:
        return {
            "resolution": self.resolution,
            "blocks": [dict(zip(BLOCK_FIELDS, b)) for b in self.blocks],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ArchSpec":
        return cls(obj["resolution"], tuple(tuple(b[f] for f in BLOCK_FIELDS) for b in obj["blocks"]))


@dataclass(frozen=True)
class EnsembleArch:
    members: tuple[ArchSpec, ...]

    def __post_init__(self):
        members = tuple(self.members)
        object.__setattr__(self, "members", members)
        if not 1 <= len(members) <= MAX_ENSEMBLE_SIZE:
            raise ConfigError(f"ensemble size must be in 1..{MAX_ENSEMBLE_SIZE}, got {len(members)}")

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def dimension(self) -> int:
        return self.size * ARCH_DIM

    def values(self) -> tuple[int, ...]:
        return tuple(v for m in self.members for v in m.values())

    @classmethod
    def from_values(cls, values: Sequence[int]) -> "EnsembleArch":
        if len(values) % ARCH_DIM:
            raise ConfigError(f"genome length {len(values)} is not a multiple of {ARCH_DIM}")
        return cls(tuple(ArchSpec.from_values(values[i:i + ARCH_DIM])
                         for i in range(0, len(values), ARCH_DIM)))

    def to_json(self) -> dict:
        return {"ensemble_size": self.size, "members": [m.to_json() for m in self.members]}


@dataclass(frozen=True)
class SearchSpace:
    """Allowed values per architecture position; the same for every member."""

    name: str
    dim_values: tuple[tuple[int, ...], ...] = DIM_VALUES

    def __post_init__(self):
        dims = tuple(tuple(v) for v in self.dim_values)
        object.__setattr__(self, "dim_values", dims)
        if len(dims) != ARCH_DIM:
            raise ConfigError(f"a search space has {ARCH_DIM} positions, got {len(dims)}")
        for allowed, full in zip(dims, DIM_VALUES):
            if not allowed or not set(allowed) <= set(full):
                raise ConfigError(f"space {self.name!r}: invalid value set {allowed}")

    @classmethod
    def full(cls) -> "SearchSpace":
        return cls("full", DIM_VALUES)

    @classmethod
    def reduced(cls) -> "SearchSpace":
        """2 resolutions and two blocks with binary choices: 64 models, 4096 pairs."""
        default = {"conv_type": 0, "kernel": 3, "expansion": 3, "se_flag": 0,
                   "skip_flag": 1, "width_code": 2, "depth": 2}
        free = {(0, "width_code"): (0, 3), (0, "depth"): (1, 4),
                (1, "width_code"): (0, 3), (1, "depth"): (1, 4), (1, "kernel"): (3, 5)}
        dims: list[tuple[int, ...]] = [(112, 224)]
        for b in range(NUM_BLOCKS):
            for f in BLOCK_FIELDS:
                dims.append(free.get((b, f), (default[f],)))
        return cls("reduced", tuple(dims))

    @property
    def model_count(self) -> int:
        return math.prod(len(v) for v in self.dim_values)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[int, ...]:
        return tuple(int(v[rng.integers(len(v))]) for _ in range(n) for v in self.dim_values)

    def models(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*self.dim_values)

    def contains(self, values: Sequence[int]) -> bool:
        return all(values[i] in self.dim_values[i % ARCH_DIM] for i in range(len(values)))


@dataclass(frozen=True)
class SurrogateParams:
    seed: int = 0
    accuracy_ceiling: float = 0.80
    half_saturation_flops: float = 5.0e7
    perturbation_scale: float = 0.01
    num_classes: int = 1000

    def __post_init__(self):
        if not 0.0 < self.accuracy_ceiling < 1.0:
            raise ConfigError("accuracy_ceiling must be in (0, 1)")
        if not self.half_saturation_flops > 0:
            raise ConfigError("half_saturation_flops must be positive")
        if not self.perturbation_scale >= 0:
            raise ConfigError("perturbation_scale must be non-negative")
        if self.num_classes < 2 or 1.0 / self.num_classes >= self.accuracy_ceiling:
            raise ConfigError("num_classes must put chance below accuracy_ceiling")


@dataclass(frozen=True)
class RewardParams:
    target_latency_ms: float = 75.0
    exponent: float = -0.07

    def __post_init__(self):
        if not self.target_latency_ms > 0:
            raise ConfigError("target_latency_ms must be positive")
        if not self.exponent < 0:
            raise ConfigError("reward exponent must be negative")


@dataclass(frozen=True)
class EvolutionParams:
    population: int = 32
    tournament: int = 2
    mutation_prob: float = 0.1
    elitism: int = 2

    def __post_init__(self):
        if self.population < 2:
            raise ConfigError("population must be >= 2")
        if not 1 <= self.tournament <= self.population:
            raise ConfigError("tournament size must be in 1..population")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ConfigError("mutation_prob must be in [0, 1]")
        if not 0 <= self.elitism < self.population:
            raise ConfigError("elitism must be in 0..population-1")


class Strategy(str, enum.Enum):
    RANDOM = "random"
    EVOLUTIONARY = "evolutionary"


def arch_flops_and_latency(arch: ArchSpec) -> tuple[float, float]:
    res_scale = (arch.resolution / 224.0) ** 2
    block_flops = []
    for conv_type, kernel, expansion, se, skip, width_code, depth in arch.blocks:
        width = WIDTH_MULTIPLIERS[width_code]
        block_flops.append(depth * expansion * width * width * kernel * kernel * BASE_BLOCK_COST * res_scale)
    flops = math.fsum(block_flops)
    se_share = math.fsum(f for f, b in zip(block_flops, arch.blocks) if b[3]) / flops
    latency = flops / THROUGHPUT_FLOPS_PER_MS * (1.0 + SE_LATENCY_PENALTY * se_share)
    return flops, latency


_TABLE_CACHE: dict[int, np.ndarray] = {}


def _perturbation_table(seed: int) -> np.ndarray:
    table = _TABLE_CACHE.get(seed)
    if table is None:
        width = max(len(v) for v in DIM_VALUES)
        table = generator(seed, "surrogate", "table").uniform(-1.0, 1.0, size=(ARCH_DIM, width))
        table.setflags(write=False)
        _TABLE_CACHE[seed] = table
    return table


def _perturbation(arch: ArchSpec, seed: int) -> float:
    # Additive over positions, so architectures that differ in few codes get
    # similar offsets.  Normalized to unit variance.
    table = _perturbation_table(seed)
    total = math.fsum(table[d, DIM_VALUES[d].index(v)] for d, v in enumerate(arch.values()))
    return total / math.sqrt(ARCH_DIM / 3.0)


def surrogate_accuracy(arch: ArchSpec, params: SurrogateParams) -> float:
    flops, _ = arch_flops_and_latency(arch)
    a_max = params.accuracy_ceiling
    acc = a_max * flops / (flops + params.half_saturation_flops)
    if params.perturbation_scale:
        acc += params.perturbation_scale * _perturbation(arch, params.seed)
    floor = math.nextafter(1.0 / params.num_classes, 1.0)
    return min(max(acc, floor), a_max)


def arch_distance(a: ArchSpec, b: ArchSpec) -> float:
    """Normalized Hamming distance over the 50 codes."""
    return sum(x != y for x, y in zip(a.values(), b.values())) / ARCH_DIM


DUPLICATE_CORRELATION = 0.85
DIVERSE_CORRELATION = 0.35


def effective_correlation(distance: float) -> float:
    return DIVERSE_CORRELATION + (DUPLICATE_CORRELATION - DIVERSE_CORRELATION) * (1.0 - distance)


def combine_accuracies(accuracies: Sequence[float], members: Sequence[ArchSpec]) -> float:
    """Ensemble accuracy from member accuracies and their mean pairwise distance.

    Error shrinks by ``(1 + (n-1) rho) / n``, the variance factor of an average
    of ``n`` equicorrelated terms, with ``rho`` falling as members differ more.
    """
    n = len(accuracies)
    mean_acc = math.fsum(accuracies) / n
    if n == 1:
        return mean_acc
    pairs = list(itertools.combinations(members, 2))
    distance = math.fsum(arch_distance(a, b) for a, b in pairs) / len(pairs)
    rho = effective_correlation(distance)
    return 1.0 - (1.0 - mean_acc) * (1.0 + (n - 1) * rho) / n


def ensemble_reward(accuracy: float, max_latency_ms: float, params: RewardParams) -> float:
    if not 0.0 <= accuracy <= 1.0:
        raise ConfigError(f"accuracy must be in [0, 1], got {accuracy}")
    if not max_latency_ms > 0:
        raise ConfigError(f"max latency must be positive, got {max_latency_ms}")
    return accuracy * (max_latency_ms / params.target_latency_ms) ** params.exponent


def evaluate_ensemble(e: EnsembleArch, sp: SurrogateParams, rp: RewardParams) -> tuple[float, float, float]:
    """``(ensemble accuracy, max member latency, reward)``."""
    accs = [surrogate_accuracy(m, sp) for m in e.members]
    max_latency = max(arch_flops_and_latency(m)[1] for m in e.members)
    accuracy = combine_accuracies(accs, e.members)
    return accuracy, max_latency, ensemble_reward(accuracy, max_latency, rp)


@dataclass(frozen=True)
class Evaluation:
    candidate_id: int
    genome: tuple[int, ...]
    accuracy: float
    max_latency_ms: float
    reward: float

    @property
    def ensemble_size(self) -> int:
        return len(self.genome) // ARCH_DIM

    def arch(self) -> EnsembleArch:
        return EnsembleArch.from_values(self.genome)


@dataclass
class SearchResult:
    strategy: Strategy
    ensemble_size: int
    seed: int
    evaluations: list[Evaluation] = field(default_factory=list)

    @property
    def best(self) -> Evaluation:
        # max() keeps the first maximal element, i.e. the earliest evaluation.
        return max(self.evaluations, key=lambda ev: ev.reward)

    def best_feasible(self, target_latency_ms: float) -> Evaluation | None:
        feasible = [ev for ev in self.evaluations if ev.max_latency_ms <= target_latency_ms]
        return max(feasible, key=lambda ev: ev.reward) if feasible else None

    def curve_points(self) -> list[CurvePoint]:
        family = f"search-n{self.ensemble_size}"
        return [CurvePoint(family, self.ensemble_size, ev.max_latency_ms, ev.accuracy, "ms")
                for ev in self.evaluations]

    def frontier(self) -> list[CurvePoint]:
        return pareto_frontier(self.curve_points())


class _Evaluator:
    def __init__(self, sp: SurrogateParams, rp: RewardParams):
        self.sp, self.rp = sp, rp
        self._cache: dict[tuple[int, ...], tuple[float, float, float]] = {}

    def __call__(self, candidate_id: int, genome: tuple[int, ...]) -> Evaluation:
        out = self._cache.get(genome)
        if out is None:
            out = evaluate_ensemble(EnsembleArch.from_values(genome), self.sp, self.rp)
            self._cache[genome] = out
        return Evaluation(candidate_id, genome, *out)


def _candidate_rng(seed: int, strategy: Strategy, n: int, k: int) -> np.random.Generator:
    return generator(seed, "search", strategy.value, n, k)


def _tournament(rng, population: list[Evaluation], size: int) -> Evaluation:
    picks = rng.choice(len(population), size=size, replace=False)
    contenders = [population[i] for i in sorted(picks.tolist())]
    return max(contenders, key=lambda ev: (ev.reward, -ev.candidate_id))


def _offspring(rng, space: SearchSpace, n: int, population: list[Evaluation],
               ea: EvolutionParams) -> tuple[int, ...]:
    p1 = _tournament(rng, population, ea.tournament).genome
    p2 = _tournament(rng, population, ea.tournament).genome
    if n > 1:
        cut = int(rng.integers(1, n)) * ARCH_DIM
        child = list(p1[:cut] + p2[cut:])
    else:
        child = list(p1)
    mutate = rng.random(len(child)) < ea.mutation_prob
    for i in np.flatnonzero(mutate).tolist():
        allowed = space.dim_values[i % ARCH_DIM]
        child[i] = int(allowed[rng.integers(len(allowed))])
    return tuple(child)


def search(space: SearchSpace, n: int, strategy: Strategy | str, budget: int, seed: int = 0,
           sp: SurrogateParams | None = None, rp: RewardParams | None = None,
           ea: EvolutionParams | None = None) -> SearchResult:
    """Evaluate ``budget`` candidate ensembles of size ``n``.

    Each candidate ``k`` draws from its own stream keyed by ``(seed, k)``;
    with the serial selection step per generation this makes a run a pure
    function of its arguments.
    """
    strategy = Strategy(strategy)
    if not 1 <= n <= MAX_ENSEMBLE_SIZE:
        raise ConfigError(f"ensemble size must be in 1..{MAX_ENSEMBLE_SIZE}, got {n}")
    if budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    sp = sp or SurrogateParams()
    rp = rp or RewardParams()
    ea = ea or EvolutionParams()
    evaluate = _Evaluator(sp, rp)
    result = SearchResult(strategy, n, seed)
    evals = result.evaluations

    if strategy is Strategy.RANDOM:
        for k in range(budget):
            evals.append(evaluate(k, space.sample(_candidate_rng(seed, strategy, n, k), n)))
        return result

    first = min(ea.population, budget)
    population = [evaluate(k, space.sample(_candidate_rng(seed, strategy, n, k), n))
                  for k in range(first)]
    evals.extend(population)
    while len(evals) < budget:
        ranked = sorted(population, key=lambda ev: (-ev.reward, ev.candidate_id))
        elites = ranked[:ea.elitism]
        n_children = min(ea.population - len(elites), budget - len(evals))
        start = len(evals)
        genomes = [_offspring(_candidate_rng(seed, strategy, n, k), space, n, population, ea)
                   for k in range(start, start + n_children)]
        children = [evaluate(start + i, g) for i, g in enumerate(genomes)]
        evals.extend(children)
        population = elites + children
    return result


def exhaustive_best(space: SearchSpace, n: int, sp: SurrogateParams | None = None,
                    rp: RewardParams | None = None) -> Evaluation:
    """Best-reward ensemble by full enumeration; only sensible for small spaces."""
    sp = sp or SurrogateParams()
    rp = rp or RewardParams()
    evaluate = _Evaluator(sp, rp)
    best = None
    for k, members in enumerate(itertools.product(list(space.models()), repeat=n)):
        ev = evaluate(k, tuple(v for m in members for v in m))
        if best is None or ev.reward > best.reward:
            best = ev
    return best


POINTS_HEADER = ["candidate_id", "ensemble_size", "accuracy", "max_latency_ms", "reward"]
REPORT_HEADER = ["ensemble_size", "mode", "accuracy", "max_latency_ms", "reward", "reward_gap_vs_duplicate"]


def duplicate_vs_diverse_report(latency_target_ms: float, sp: SurrogateParams | None = None,
                                rp: RewardParams | None = None, budget: int = 1000, seed: int = 0,
                                space: SearchSpace | None = None,
                                strategy: Strategy | str = Strategy.EVOLUTIONARY,
                                ea: EvolutionParams | None = None) -> list[dict]:
    """Compare duplicating the best single model with searching diverse ensembles.

    For each size 1..3, both modes report their best candidate whose max
    latency meets ``latency_target_ms``.  Rewards are computed with the target
    as the reward's reference latency.
    """
    sp = sp or SurrogateParams()
    base = rp or RewardParams()
    rp = RewardParams(latency_target_ms, base.exponent)
    space = space or SearchSpace.full()

    singles = search(space, 1, strategy, budget, seed, sp, rp, ea)
    best_single = singles.best_feasible(latency_target_ms)
    if best_single is None:
        raise ConfigError(f"no single model found under {latency_target_ms} ms; raise the target or budget")

    rows = []
    for n in range(1, MAX_ENSEMBLE_SIZE + 1):
        dup = EnsembleArch(best_single.arch().members * n)
        d_acc, d_lat, d_rew = evaluate_ensemble(dup, sp, rp)
        rows.append({"ensemble_size": n, "mode": "duplicate", "accuracy": d_acc,
                     "max_latency_ms": d_lat, "reward": d_rew, "reward_gap_vs_duplicate": 0.0})
        diverse = best_single if n == 1 else search(space, n, strategy, budget, seed, sp, rp, ea).best_feasible(latency_target_ms)
        if diverse is None:
            rows.append({"ensemble_size": n, "mode": "diverse", "accuracy": math.nan,
                         "max_latency_ms": math.nan, "reward": math.nan,
                         "reward_gap_vs_duplicate": math.nan})
            continue
        rows.append({"ensemble_size": n, "mode": "diverse", "accuracy": diverse.accuracy,
                     "max_latency_ms": diverse.max_latency_ms, "reward": diverse.reward,
                     "reward_gap_vs_duplicate": diverse.reward - d_rew})
    return rows


def write_points_csv(path, result: SearchResult):
    rows = [(ev.candidate_id, ev.ensemble_size, ev.accuracy, ev.max_latency_ms, ev.reward)
            for ev in result.evaluations]
    return atomic_write_text(path, csv_text(POINTS_HEADER, rows))


def write_report_csv(path, rows: list[dict]):
    return atomic_write_text(path, csv_text(REPORT_HEADER, [[r[h] for h in REPORT_HEADER] for r in rows]))
