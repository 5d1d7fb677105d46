import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_members
from ensemble_frontier.aggregation import AggregationRule
from ensemble_frontier.cohort import CohortSpec, generate_cohort
from ensemble_frontier.cost import ModelProfile
from ensemble_frontier.errors import ConfigError, InvariantViolation
from ensemble_frontier.pareto import (
    CurvePoint,
    EnsembleCurve,
    best_accuracy_at,
    build_ensemble_curve,
    crossover_cost,
    dominates,
    optimal_ensemble_size,
    pareto_frontier,
)
from ensemble_frontier.predictions import LabelSet, top1_accuracy

# calibrate_signal(0.9, 10, 0.3, seed=21)
SIGNAL_90 = 2.9939326210296713


def pt(cost, acc, family="f", n=1):
    return CurvePoint(family, n, cost, acc)


def brute_frontier(points):
    keep = []
    for i, p in enumerate(points):
        if any(dominates(q, p) for q in points):
            continue
        if any((q.cost, q.accuracy) == (p.cost, p.accuracy) for q in points[:i]):
            continue
        keep.append(i)
    return keep


def test_dominates_examples():
    assert dominates(pt(80, 0.95), pt(150, 0.95))
    assert not dominates(pt(80, 0.95), pt(80, 0.95))
    assert not dominates(pt(10, 0.5), pt(5, 0.9))


def test_frontier_examples():
    only = pt(3, 0.2)
    assert pareto_frontier([only]) == [only]
    small, large = pt(80e6, 0.95), pt(150e6, 0.95)
    assert pareto_frontier([large, small]) == [small]
    with pytest.raises(ConfigError):
        pareto_frontier([])


def test_frontier_duplicate_keeps_first():
    a, b = CurvePoint("a", 1, 5.0, 0.5), CurvePoint("b", 1, 5.0, 0.5)
    assert pareto_frontier([a, b]) == [a]
    assert pareto_frontier([b, a]) == [b]


def test_frontier_matches_bruteforce_500():
    rng = np.random.default_rng(11)
    pts = [pt(c, a) for c, a in zip(rng.uniform(1, 100, 500), rng.uniform(0, 1, 500))]
    got = pareto_frontier(pts)
    expected = sorted((pts[i] for i in brute_frontier(pts)), key=lambda p: p.cost)
    assert got == expected


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 20), st.integers(0, 10)), min_size=1, max_size=40))
def test_frontier_properties_with_ties(raw):
    pts = [CurvePoint(f"p{i}", 1, float(c), a / 10) for i, (c, a) in enumerate(raw)]
    front = pareto_frontier(pts)
    assert [pts[i] for i in sorted(brute_frontier(pts), key=lambda i: (pts[i].cost, i))] == front
    for a in front:
        assert not any(dominates(b, a) for b in front)
    for p in pts:
        if p not in front:
            assert any(dominates(q, p) or (q.cost, q.accuracy) == (p.cost, p.accuracy) for q in front)
    assert pareto_frontier(front) == front


def test_curve_invariants():
    with pytest.raises(InvariantViolation):
        EnsembleCurve.from_arrays("f", [2.0, 1.0], [0.1, 0.2])
    with pytest.raises(ConfigError):
        CurvePoint("f", 1, 0.0, 0.5)
    with pytest.raises(ConfigError):
        CurvePoint("f", 1, 1.0, 1.5)


def test_curve_single_member(rng):
    m = random_members(rng, 1, 50, 3)
    labels = LabelSet(rng.integers(0, 3, 50))
    curve = build_ensemble_curve(ModelProfile("p", "p", "x", 5.0), m, labels)
    assert len(curve.points) == 1
    assert curve.points[0].accuracy == top1_accuracy(m[0], labels)
    assert curve.points[0].cost == 5.0


def test_curve_identical_copies_flat(rng):
    m = random_members(rng, 1, 200, 4)[0]
    labels = LabelSet(rng.integers(0, 4, 200))
    copies = [m.with_id(f"c{i}") for i in range(8)]
    curve = build_ensemble_curve(ModelProfile("p", "p", "x", 3.0), copies, labels)
    assert set(curve.accuracies.tolist()) == {top1_accuracy(m, labels)}
    np.testing.assert_array_equal(curve.costs, 3.0 * np.arange(1, 9))


def test_curve_errors(rng):
    m = random_members(rng, 2, 10, 3)
    labels = LabelSet(rng.integers(0, 3, 10))
    with pytest.raises(ConfigError):
        build_ensemble_curve(ModelProfile("p", "p", "x", 1.0), m, labels, replicates=0)
    with pytest.raises(ConfigError):
        build_ensemble_curve(ModelProfile("p", "p", "x", 1.0), [], labels)


CURVE_90 = [0.9021, 0.9712099999999999, 0.9867975, 0.9924625, 0.9947900000000001,
            0.9960150000000001, 0.9967575, 0.9970000000000001]


def test_cohort_curve_regression():
    members, labels = generate_cohort(CohortSpec(10, 20000, 8, SIGNAL_90, 0.3, 1.0, seed=22))
    profile = ModelProfile("c", "c", "x", 1e7)
    curve = build_ensemble_curve(profile, members, labels, AggregationRule(), 20, seed=23)
    assert curve.accuracies.tolist() == CURVE_90
    inc = np.diff(curve.accuracies)
    assert np.all(inc > 0)
    assert np.all(np.diff(inc) < 0)
    assert curve.costs.tolist() == [n * profile.flops for n in range(1, 9)]


def test_optimal_size_examples():
    flat = EnsembleCurve.from_arrays("f", [1, 2, 3], [0.9, 0.9, 0.9])
    assert optimal_ensemble_size(flat) == 1
    accs = np.cumsum([0.80, 0.010, 0.005, 0.003, 0.001, 0.0005])
    curve = EnsembleCurve.from_arrays("f", np.arange(1, 7), accs)
    assert optimal_ensemble_size(curve, 0.002) == 4


def step_oracle(curve, x):
    vals = [p.accuracy for p in curve.points if p.cost <= x]
    return max(vals) if vals else None


def oracle_first_crossing(small, large, grid):
    for x in grid:
        s, l = step_oracle(small, x), step_oracle(large, x)
        if s is not None and l is not None and l > s:
            return x
    return None


def test_crossover_uniformly_worse_is_none():
    small = EnsembleCurve.from_arrays("s", [1, 2, 3], [0.8, 0.85, 0.87])
    large = EnsembleCurve.from_arrays("l", [2, 4, 6], [0.7, 0.75, 0.8])
    assert crossover_cost(small, large) is None


def random_curve(rng, family):
    n = int(rng.integers(1, 7))
    costs = np.cumsum(rng.uniform(0.5, 3.0, n)) + rng.uniform(0, 4)
    accs = np.clip(rng.uniform(0.5, 0.7) + np.cumsum(rng.uniform(-0.01, 0.05, n)), 0, 1)
    return EnsembleCurve.from_arrays(family, costs, accs)


def test_crossover_against_dense_grid():
    rng = np.random.default_rng(5)
    found = 0
    for _ in range(60):
        small, large = random_curve(rng, "s"), random_curve(rng, "l")
        lo = min(small.costs.min(), large.costs.min())
        hi = max(small.costs.max(), large.costs.max())
        grid = np.linspace(lo, hi, 10_000)
        spacing = grid[1] - grid[0]
        c = crossover_cost(small, large)
        g = oracle_first_crossing(small, large, grid)
        if g is not None:
            found += 1
            assert c is not None and c <= g < c + spacing + 1e-12
            start = max(small.costs[0], large.costs[0])
            assert c in large.costs.tolist() + [start]
        if c is not None:
            assert step_oracle(large, c) > step_oracle(small, c)
            assert oracle_first_crossing(small, large, grid[grid < c]) is None
    assert found > 10


# An EfficientNet-like ladder (costs in GFLOPs), constructed so b1 beats b0
# ensembles early while b3 ensembles stay ahead of b4 altogether.
EFFNET = {
    "b0": ([0.39, 0.78, 1.17], [0.771, 0.783, 0.787]),
    "b1": ([0.70, 1.40, 2.10], [0.791, 0.802, 0.806]),
    "b3": ([1.80, 3.60, 5.40], [0.816, 0.830, 0.834]),
    "b4": ([4.20, 8.40, 12.6], [0.829, 0.833, 0.834]),
}


def effnet(name):
    return EnsembleCurve.from_arrays(name, *EFFNET[name])


def test_effnet_style_fixture():
    assert crossover_cost(effnet("b0"), effnet("b1")) == 0.70
    assert crossover_cost(effnet("b3"), effnet("b4")) is None
    two_b3 = effnet("b3").points[1]
    assert dominates(two_b3, effnet("b4").points[0])


def test_crossover_is_asymmetric():
    rng = np.random.default_rng(8)
    for _ in range(200):
        a, b = random_curve(rng, "a"), random_curve(rng, "b")
        c = crossover_cost(a, b)
        if c is not None:
            # At the crossover cost b strictly leads, so a cannot also lead there.
            assert not best_accuracy_at(a, c) > best_accuracy_at(b, c)
            back = crossover_cost(b, a)
            assert back is None or back != c
