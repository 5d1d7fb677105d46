"""Command-line entry point.

Subcommands ``cohort``, ``curves``, ``simulate`` and ``search`` each take
``--config <json> --out <dir> [--seed <u64>]`` and write their outputs plus a
``manifest.json`` into ``--out``.  ``rerun --manifest <path> --out <dir>``
replays a manifest and reproduces the same bytes.

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema

from . import __version__
from ._io import atomic_write_text, csv_text, sha256_file
from .aggregation import AggregationKind, AggregationRule, DEFAULT_EPSILON, aggregate
from .cohort import CohortSpec, calibrate_signal, generate_cohort
from .cost import PROFILE_SCHEMA, load_registry, registry_from_json
from .errors import ConfigError, DataFormatError, EnsembleFrontierError
from .pareto import (
    DEFAULT_MIN_GAIN,
    DEFAULT_REPLICATES,
    build_ensemble_curve,
    crossover_cost,
    dominates,
    optimal_ensemble_size,
    write_curve_csv,
    write_frontier_csv,
)
from .predictions import LabelSet, load_label_set, read_prediction_dump, save_label_set, save_prediction_dump, top1_accuracy
from .rng import derive_seed
from .search import (
    MAX_ENSEMBLE_SIZE,
    POINTS_HEADER,
    EvolutionParams,
    RewardParams,
    SearchSpace,
    SurrogateParams,
    duplicate_vs_diverse_report,
    search,
)
from .search import write_report_csv as write_search_report_csv
from .simulator import SimConfig, simulate, write_makespans_csv, write_report_csv

log = logging.getLogger("ensemble_frontier")

MANIFEST_NAME = "manifest.json"

_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}

COHORT_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": _SEED,
        "families": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string", "pattern": "^[A-Za-z0-9._=+-]+$"},
                    "num_models": {"type": "integer", "minimum": 1},
                    "num_classes": {"type": "integer", "minimum": 2},
                    "num_examples": {"type": "integer", "minimum": 1},
                    "signal": {"type": "number", "minimum": 0},
                    "target_accuracy": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "correlation": {"type": "number", "minimum": 0, "maximum": 1},
                    "temperature": {"type": "number", "exclusiveMinimum": 0},
                },
                "required": ["name", "num_models", "num_classes", "num_examples"],
                "oneOf": [{"required": ["signal"]}, {"required": ["target_accuracy"]}],
                "additionalProperties": False,
            },
        },
    },
    "required": ["families"],
    "additionalProperties": False,
}

CURVES_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": _SEED,
        "registry": {"type": "string"},
        "dumps": {"type": "string"},
        "labels": {"type": "string"},
        "rule": {"enum": [k.value for k in AggregationKind]},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-6},
        "replicates": {"type": "integer", "minimum": 1},
        "min_gain": {"type": "number", "minimum": 0},
    },
    "required": ["registry", "dumps"],
    "additionalProperties": False,
}

SIMULATE_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": _SEED,
        "registry": {"type": "string"},
        "members": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "profiles": {"type": "array", "minItems": 1, "items": PROFILE_SCHEMA},
        "num_workers": {"type": "integer", "minimum": 1},
        "num_requests": {"type": "integer", "minimum": 1},
        "scheduler": {"enum": ["lpt", "round_robin"]},
        "agg_overhead_ms": {"type": "number", "minimum": 0},
        "per_request": {"type": "boolean"},
    },
    "required": ["num_workers"],
    "oneOf": [{"required": ["registry", "members"]}, {"required": ["profiles"]}],
    "additionalProperties": False,
}

_SURROGATE_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": _SEED,
        "accuracy_ceiling": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "half_saturation_flops": {"type": "number", "exclusiveMinimum": 0},
        "perturbation_scale": {"type": "number", "minimum": 0},
        "num_classes": {"type": "integer", "minimum": 2},
    },
    "additionalProperties": False,
}

SEARCH_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": _SEED,
        "space": {"enum": ["full", "reduced"]},
        "ensemble_sizes": {
            "type": "array", "minItems": 1, "uniqueItems": True,
            "items": {"type": "integer", "minimum": 1, "maximum": MAX_ENSEMBLE_SIZE},
        },
        "strategy": {"enum": ["random", "evolutionary"]},
        "budget": {"type": "integer", "minimum": 1},
        "surrogate": _SURROGATE_SCHEMA,
        "reward": {
            "type": "object",
            "properties": {
                "target_latency_ms": {"type": "number", "exclusiveMinimum": 0},
                "exponent": {"type": "number", "exclusiveMaximum": 0},
            },
            "additionalProperties": False,
        },
        "evolution": {
            "type": "object",
            "properties": {
                "population": {"type": "integer", "minimum": 2},
                "tournament": {"type": "integer", "minimum": 1},
                "mutation_prob": {"type": "number", "minimum": 0, "maximum": 1},
                "elitism": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "report": {
            "type": "object",
            "properties": {
                "enabled": {"type": "boolean"},
                "latency_target_ms": {"type": "number", "exclusiveMinimum": 0},
                "budget": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def _validate(config: dict, schema: dict, what: str) -> None:
    try:
        jsonschema.validate(config, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{what} config error at {where}: {exc.message}") from None


def _load_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _abs(base: Path, value: str) -> str:
    p = Path(value)
    return str(p if p.is_absolute() else (base / p).resolve())


class _Run:
    """Collects the outputs of one command for its manifest."""

    def __init__(self, command: str, out: Path, seed: int, config: dict):
        self.command, self.out, self.seed, self.config = command, out, seed, config
        self.outputs: list[Path] = []

    def add(self, path: Path) -> Path:
        self.outputs.append(Path(path))
        return path

    def write_manifest(self) -> Path:
        manifest = {
            "command": self.command,
            "tool_version": __version__,
            "seed": self.seed,
            "config": self.config,
            "outputs": [
                {"path": p.relative_to(self.out).as_posix(), "sha256": sha256_file(p)}
                for p in sorted(self.outputs)
            ],
        }
        return atomic_write_text(self.out / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------- cohort

def resolve_cohort(config: dict, base: Path) -> dict:
    _validate(config, COHORT_SCHEMA, "cohort")
    names = [f["name"] for f in config["families"]]
    if len(set(names)) != len(names):
        raise ConfigError("cohort config error: family names must be unique")
    families = []
    for fam in config["families"]:
        fam = dict(fam)
        fam.setdefault("correlation", 0.3)
        fam.setdefault("temperature", 1.0)
        families.append(fam)
    return {"families": families}


def run_cohort(config: dict, seed: int, out: Path) -> _Run:
    run = _Run("cohort", out, seed, config)
    label_seed = derive_seed(seed, "cohort", "labels")
    for fam in config["families"]:
        name = fam["name"]
        if "signal" in fam:
            signal = float(fam["signal"])
        else:
            signal = calibrate_signal(fam["target_accuracy"], fam["num_classes"], fam["correlation"],
                                      fam["temperature"], seed=derive_seed(seed, "cohort", "calibrate", name))
        spec = CohortSpec(fam["num_classes"], fam["num_examples"], fam["num_models"], signal,
                          fam["correlation"], fam["temperature"],
                          seed=derive_seed(seed, "cohort", "family", name), label_seed=label_seed)
        members, labels = generate_cohort(spec)
        ids = tuple(f"ex{i:06d}" for i in range(labels.num_examples))
        labels = LabelSet(labels.labels, ids)
        for j, m in enumerate(members):
            run.add(save_prediction_dump(out / name / f"model_{j:03d}.csv", m, labels))
        run.add(save_label_set(out / name / "labels.csv", labels))
        log.info("cohort %s: %d models, signal %.6g", name, len(members), signal)
    return run


# --------------------------------------------------------------------------- curves

def resolve_curves(config: dict, base: Path) -> dict:
    _validate(config, CURVES_SCHEMA, "curves")
    out = {
        "registry": _abs(base, config["registry"]),
        "dumps": _abs(base, config["dumps"]),
        "rule": config.get("rule", AggregationKind.GEOMETRIC.value),
        "epsilon": config.get("epsilon", DEFAULT_EPSILON),
        "replicates": config.get("replicates", DEFAULT_REPLICATES),
        "min_gain": config.get("min_gain", DEFAULT_MIN_GAIN),
    }
    if "labels" in config:
        out["labels"] = _abs(base, config["labels"])
    return out


def _load_family_dumps(dumps: Path, model_id: str, shared_labels: LabelSet | None):
    folder = dumps / model_id
    files = sorted(p for p in folder.glob("*.csv") if p.name != "labels.csv") if folder.is_dir() else []
    if not files:
        raise DataFormatError(
            f"no prediction dumps for model {model_id!r}: expected {folder}/<replica>.csv "
            f"(the `cohort` subcommand writes this layout)"
        )
    contents = [read_prediction_dump(f, f"{model_id}/{f.stem}") for f in files]
    ids = contents[0].example_ids
    for c in contents[1:]:
        if c.example_ids != ids:
            raise DataFormatError(f"{model_id}: dumps disagree on example ids/order")
    labels = shared_labels
    if labels is None and (folder / "labels.csv").exists():
        labels = load_label_set(folder / "labels.csv")
    if labels is None:
        labels = contents[0].labels
    if labels is None:
        raise DataFormatError(f"{model_id}: no labels (none in dumps, no labels.csv, no 'labels' in config)")
    if labels.example_ids is not None and labels.example_ids != ids:
        raise DataFormatError(f"{model_id}: label file example ids do not match the dumps")
    return [c.predictions for c in contents], labels


def run_curves(config: dict, seed: int, out: Path) -> _Run:
    run = _Run("curves", out, seed, config)
    profiles = load_registry(config["registry"])
    dumps = Path(config["dumps"])
    if not dumps.is_dir():
        raise DataFormatError(f"dump directory not found: {dumps}")
    rule = AggregationRule(config["rule"], config["epsilon"])
    other = AggregationRule(
        AggregationKind.ARITHMETIC if rule.kind is AggregationKind.GEOMETRIC else AggregationKind.GEOMETRIC,
        config["epsilon"],
    )
    shared = load_label_set(config["labels"]) if "labels" in config else None
    curve_seed = derive_seed(seed, "curves")

    curves, comparisons, optimal = [], [], []
    for profile in profiles:
        members, labels = _load_family_dumps(dumps, profile.model_id, shared)
        curve = build_ensemble_curve(profile, members, labels, rule, config["replicates"], curve_seed)
        curves.append(curve)
        optimal.append((profile.family, optimal_ensemble_size(curve, config["min_gain"])))
        full = {rule.kind: top1_accuracy(aggregate(members, rule), labels),
                other.kind: top1_accuracy(aggregate(members, other), labels)}
        geo, arith = full[AggregationKind.GEOMETRIC], full[AggregationKind.ARITHMETIC]
        comparisons.append((profile.family, len(members), geo, arith, geo - arith))

    points = [p for c in curves for p in c.points]
    run.add(write_curve_csv(out / "curves.csv", points))
    run.add(write_frontier_csv(out / "frontier.csv", points))
    plot_rows = [(p.family, p.ensemble_size, math.log10(p.cost), p.accuracy) for p in points]
    run.add(atomic_write_text(out / "plot_points.csv",
                              csv_text(["family", "ensemble_size", "log10_cost", "accuracy"], plot_rows)))
    run.add(atomic_write_text(out / "crossover.csv", csv_text(CROSSOVER_HEADER, _crossover_rows(curves))))
    run.add(atomic_write_text(out / "rule_comparison.csv", csv_text(
        ["family", "ensemble_size", "accuracy_geometric", "accuracy_arithmetic", "geometric_minus_arithmetic"],
        comparisons)))
    run.add(atomic_write_text(out / "optimal_size.csv", csv_text(
        ["family", "optimal_ensemble_size"], optimal)))
    return run


CROSSOVER_HEADER = [
    "small_family", "large_family", "crossover_cost", "large_single_cost", "large_single_accuracy",
    "dominating_sizes", "dominating_cost", "dominating_accuracy",
]


def _crossover_rows(curves) -> list[list]:
    """One row per pair, ordered so the cheaper single model is the small family."""
    rows = []
    ordered = sorted(curves, key=lambda c: (c.points[0].cost, c.family))
    for i, small in enumerate(ordered):
        for large in ordered[i + 1:]:
            single = large.points[0]
            beating = [p for p in small.points if dominates(p, single)]
            cross = crossover_cost(small, large)
            cheapest = beating[0] if beating else None
            rows.append([
                small.family, large.family, "" if cross is None else float(cross),
                float(single.cost), float(single.accuracy),
                ";".join(str(p.ensemble_size) for p in beating),
                "" if cheapest is None else float(cheapest.cost),
                "" if cheapest is None else float(cheapest.accuracy),
            ])
    return rows


# --------------------------------------------------------------------------- simulate

def resolve_simulate(config: dict, base: Path) -> dict:
    _validate(config, SIMULATE_SCHEMA, "simulate")
    if "profiles" in config:
        profiles = [p.to_json() for p in registry_from_json(config["profiles"])]
        members = [p["model_id"] for p in profiles]
    else:
        registry = {p.model_id: p for p in load_registry(_abs(base, config["registry"]))}
        missing = [m for m in config["members"] if m not in registry]
        if missing:
            raise ConfigError(f"simulate config error: members not in registry: {missing}")
        members = list(config["members"])
        unique = list(dict.fromkeys(members))
        profiles = [registry[m].to_json() for m in unique]
    return {
        "profiles": profiles,
        "members": members,
        "num_workers": config["num_workers"],
        "num_requests": config.get("num_requests", 1000),
        "scheduler": config.get("scheduler", "lpt"),
        "agg_overhead_ms": config.get("agg_overhead_ms", 0.0),
        "per_request": config.get("per_request", True),
    }


def run_simulate(config: dict, seed: int, out: Path) -> _Run:
    run = _Run("simulate", out, seed, config)
    registry = {p.model_id: p for p in registry_from_json(config["profiles"])}
    sim = SimConfig(
        members=tuple(registry[m] for m in config["members"]),
        num_workers=config["num_workers"],
        num_requests=config["num_requests"],
        scheduler=config["scheduler"],
        agg_overhead_ms=config["agg_overhead_ms"],
        seed=derive_seed(seed, "simulate"),
    )
    report = simulate(sim)
    run.add(write_report_csv(out / "report.csv", report))
    if config["per_request"]:
        run.add(write_makespans_csv(out / "makespans.csv", report))
    return run


# --------------------------------------------------------------------------- search

def resolve_search(config: dict, base: Path, seed: int) -> dict:
    _validate(config, SEARCH_SCHEMA, "search")
    surrogate = {"seed": derive_seed(seed, "search", "surrogate"), **config.get("surrogate", {})}
    SurrogateParams(**surrogate)
    reward = {"target_latency_ms": 75.0, "exponent": -0.07, **config.get("reward", {})}
    evolution = {"population": 32, "tournament": 2, "mutation_prob": 0.1, "elitism": 2,
                 **config.get("evolution", {})}
    EvolutionParams(**evolution)
    budget = config.get("budget", 1000)
    report = {"enabled": True, "latency_target_ms": reward["target_latency_ms"], "budget": budget,
              **config.get("report", {})}
    return {
        "space": config.get("space", "full"),
        "ensemble_sizes": sorted(config.get("ensemble_sizes", [1, 2, 3])),
        "strategy": config.get("strategy", "evolutionary"),
        "budget": budget,
        "surrogate": surrogate,
        "reward": reward,
        "evolution": evolution,
        "report": report,
    }


def run_search(config: dict, seed: int, out: Path) -> _Run:
    run = _Run("search", out, seed, config)
    space = SearchSpace.full() if config["space"] == "full" else SearchSpace.reduced()
    sp = SurrogateParams(**config["surrogate"])
    rp = RewardParams(**config["reward"])
    ea = EvolutionParams(**config["evolution"])
    search_seed = derive_seed(seed, "search", "run")

    results = [search(space, n, config["strategy"], config["budget"], search_seed, sp, rp, ea)
               for n in config["ensemble_sizes"]]
    rows = [(ev.candidate_id, ev.ensemble_size, ev.accuracy, ev.max_latency_ms, ev.reward)
            for r in results for ev in r.evaluations]
    run.add(atomic_write_text(out / "points.csv", csv_text(POINTS_HEADER, rows)))
    run.add(write_frontier_csv(out / "frontier.csv", [p for r in results for p in r.curve_points()],
                               by_family=True))
    best = []
    for r in results:
        ev = r.best
        best.append({"ensemble_size": r.ensemble_size, "candidate_id": ev.candidate_id,
                     "accuracy": ev.accuracy, "max_latency_ms": ev.max_latency_ms, "reward": ev.reward,
                     "arch": ev.arch().to_json()})
    run.add(atomic_write_text(out / "best.json", json.dumps(best, indent=2) + "\n"))

    rep = config["report"]
    if rep["enabled"]:
        table = duplicate_vs_diverse_report(rep["latency_target_ms"], sp, rp, rep["budget"],
                                            derive_seed(seed, "search", "report"), space,
                                            config["strategy"], ea)
        run.add(write_search_report_csv(out / "duplicate_vs_diverse.csv", table))
    return run


# --------------------------------------------------------------------------- driver

def _resolve(command: str, raw: dict, base: Path, seed: int) -> dict:
    if command == "cohort":
        return resolve_cohort(raw, base)
    if command == "curves":
        return resolve_curves(raw, base)
    if command == "simulate":
        return resolve_simulate(raw, base)
    if command == "search":
        return resolve_search(raw, base, seed)
    raise ConfigError(f"unknown command {command!r}")


_RUNNERS = {"cohort": run_cohort, "curves": run_curves, "simulate": run_simulate, "search": run_search}


def execute(command: str, resolved: dict, seed: int, out: Path) -> Path:
    """Run an already-resolved configuration and write its manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    run = _RUNNERS[command](resolved, seed, out)
    return run.write_manifest()


def run_command(command: str, config_path, out, seed: int | None = None) -> Path:
    config_path = Path(config_path)
    raw = _load_json(config_path)
    if not isinstance(raw, dict):
        raise ConfigError(f"{config_path}: top-level JSON value must be an object")
    if seed is None:
        seed = raw.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    resolved = _resolve(command, raw, config_path.parent.resolve(), seed)
    return execute(command, resolved, seed, out)


def rerun(manifest_path, out) -> Path:
    manifest = _load_json(manifest_path)
    try:
        command, seed, config = manifest["command"], manifest["seed"], manifest["config"]
    except (KeyError, TypeError):
        raise ConfigError(f"{manifest_path}: not a run manifest") from None
    if command not in _RUNNERS:
        raise ConfigError(f"{manifest_path}: unknown command {command!r}")
    return execute(command, config, seed, out)


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensemble-frontier", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "cohort": "synthesize correlated classifier cohorts as prediction dumps",
        "curves": "ensemble accuracy-vs-FLOPs curves, frontier and crossovers",
        "simulate": "simulate distributed ensemble inference latency",
        "search": "search ensemble architectures under a max-latency reward",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=_u64, default=None, help="overrides the config's seed")
    p = sub.add_parser("rerun", help="replay a run manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "rerun":
            manifest = rerun(args.manifest, args.out)
        else:
            manifest = run_command(args.command, args.config, args.out, args.seed)
    except EnsembleFrontierError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataFormatError.exit_code
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
