import math
import statistics

import numpy as np
import pytest

from ensemble_frontier.errors import ConfigError
from ensemble_frontier.pareto import dominates
from ensemble_frontier.search import (
    ARCH_DIM,
    ArchSpec,
    EnsembleArch,
    EvolutionParams,
    RewardParams,
    SearchSpace,
    Strategy,
    SurrogateParams,
    arch_flops_and_latency,
    combine_accuracies,
    duplicate_vs_diverse_report,
    ensemble_reward,
    evaluate_ensemble,
    exhaustive_best,
    search,
    surrogate_accuracy,
)
from ensemble_frontier.rng import generator

FULL = SearchSpace.full()
REDUCED = SearchSpace.reduced()


def random_arch(rng, space=FULL):
    return ArchSpec.from_values(space.sample(rng, 1))


def with_block(arch, b, field_index, value):
    blocks = [list(x) for x in arch.blocks]
    blocks[b][field_index] = value
    return ArchSpec(arch.resolution, tuple(map(tuple, blocks)))


def smallest():
    return ArchSpec(112, tuple((0, 3, 1, 0, 0, 0, 1) for _ in range(7)))


def test_dimensions_and_round_trips():
    arch = random_arch(generator(0, "t"))
    assert len(arch.values()) == ARCH_DIM == 50
    assert ArchSpec.from_values(arch.values()) == arch
    assert ArchSpec.from_json(arch.to_json()) == arch
    e = EnsembleArch((arch, arch))
    assert len(e.values()) == 100
    assert EnsembleArch.from_values(e.values()) == e
    with pytest.raises(ConfigError):
        ArchSpec.from_values(arch.values()[:-1])
    with pytest.raises(ConfigError):
        ArchSpec(100, arch.blocks)
    with pytest.raises(ConfigError):
        EnsembleArch((arch,) * 4)


def test_reduced_space_size():
    assert REDUCED.model_count == 64
    assert FULL.contains(REDUCED.sample(generator(1, "t"), 2))


def test_minimum_flops_constant():
    assert arch_flops_and_latency(smallest()) == (3937500.0, 0.984375)


def test_resolution_scales_flops_fourfold():
    rng = generator(2, "t")
    for _ in range(20):
        a = random_arch(rng)
        lo = ArchSpec(112, a.blocks)
        hi = ArchSpec(224, a.blocks)
        assert arch_flops_and_latency(hi)[0] == 4 * arch_flops_and_latency(lo)[0]


def test_width_monotone():
    rng = generator(3, "t")
    for _ in range(20):
        a = random_arch(rng)
        flops = [arch_flops_and_latency(with_block(a, 0, 5, w))[0] for w in range(4)]
        assert flops == sorted(flops) and len(set(flops)) == 4


def test_surrogate_scale_zero_monotone_in_flops():
    sp = SurrogateParams(perturbation_scale=0.0)
    rng = generator(4, "t")
    pairs = sorted((arch_flops_and_latency(a)[0], surrogate_accuracy(a, sp))
                   for a in (random_arch(rng) for _ in range(300)))
    for (f1, a1), (f2, a2) in zip(pairs, pairs[1:]):
        if f2 > f1:
            assert a2 > a1


def test_surrogate_perturbation_separates_equal_flops():
    sp = SurrogateParams()
    a = random_arch(generator(5, "t"))
    b = with_block(a, 2, 0, (a.blocks[2][0] + 1) % 3)  # conv_type only
    assert arch_flops_and_latency(a)[0] == arch_flops_and_latency(b)[0]
    assert surrogate_accuracy(a, sp) != surrogate_accuracy(b, sp)
    assert all(surrogate_accuracy(a, sp) == surrogate_accuracy(a, SurrogateParams()) for _ in range(100))


def test_surrogate_range():
    sp = SurrogateParams()
    rng = generator(6, "t")
    for _ in range(200):
        acc = surrogate_accuracy(random_arch(rng), sp)
        assert 1 / sp.num_classes < acc <= sp.accuracy_ceiling


def test_reward_examples():
    rp = RewardParams(30.0, -0.07)
    assert ensemble_reward(0.75, 60.0, rp) == pytest.approx(0.75 * 2 ** -0.07, abs=1e-15)
    assert ensemble_reward(0.75, 60.0, rp) == pytest.approx(0.714478, abs=1e-6)
    rng = np.random.default_rng(0)
    for _ in range(20):
        acc, target, w = rng.uniform(0, 1), rng.uniform(1, 200), -rng.uniform(0.01, 1)
        assert ensemble_reward(acc, target, RewardParams(target, w)) == acc
    lats = np.linspace(1, 300, 50)
    rewards = [ensemble_reward(0.7, x, rp) for x in lats]
    assert all(b < a for a, b in zip(rewards, rewards[1:]))


def test_evaluate_ensemble_examples():
    sp, rp = SurrogateParams(), RewardParams()
    a = random_arch(generator(7, "t"))
    acc1, lat1, _ = evaluate_ensemble(EnsembleArch((a,)), sp, rp)
    assert acc1 == surrogate_accuracy(a, sp)
    acc2, lat2, _ = evaluate_ensemble(EnsembleArch((a, a)), sp, rp)
    assert lat2 == lat1
    assert acc2 - acc1 == pytest.approx(0.075 * (1 - acc1), abs=1e-15)


def test_max_latency_member_sets_penalty():
    sp = SurrogateParams()
    fast = smallest()
    slow = ArchSpec(224, fast.blocks)
    l_fast, l_slow = arch_flops_and_latency(fast)[1], arch_flops_and_latency(slow)[1]
    assert l_fast < l_slow
    acc, lat, reward = evaluate_ensemble(EnsembleArch((fast, slow)), sp, RewardParams(l_slow))
    assert lat == l_slow and reward == acc


def test_permutation_invariance():
    rng = generator(8, "t")
    sp, rp = SurrogateParams(), RewardParams()
    members = [random_arch(rng) for _ in range(3)]
    base = evaluate_ensemble(EnsembleArch(tuple(members)), sp, rp)
    for perm in ([1, 0, 2], [2, 1, 0], [1, 2, 0]):
        assert evaluate_ensemble(EnsembleArch(tuple(members[i] for i in perm)), sp, rp) == base


def test_combine_diverse_beats_duplicate_at_equal_accuracy():
    a = random_arch(generator(9, "t"))
    b = with_block(a, 0, 0, (a.blocks[0][0] + 1) % 3)
    assert combine_accuracies([0.7, 0.7], [a, b]) > combine_accuracies([0.7, 0.7], [a, a])


def test_budget_one_returns_sampled_point():
    res = search(FULL, 2, Strategy.RANDOM, 1, seed=3)
    assert len(res.evaluations) == 1 and res.best is res.evaluations[0]
    res = search(FULL, 2, Strategy.EVOLUTIONARY, 1, seed=3)
    assert len(res.evaluations) == 1


def test_search_reproducible_and_sized():
    for strategy in Strategy:
        a = search(FULL, 2, strategy, 150, seed=4)
        b = search(FULL, 2, strategy, 150, seed=4)
        assert a.evaluations == b.evaluations
        assert len(a.evaluations) == 150
        assert [ev.candidate_id for ev in a.evaluations] == list(range(150))
    with pytest.raises(ConfigError):
        search(FULL, 4, Strategy.RANDOM, 10)
    with pytest.raises(ConfigError):
        search(FULL, 1, Strategy.RANDOM, 0)


def test_frontier_contained_and_non_dominated():
    res = search(FULL, 2, Strategy.EVOLUTIONARY, 300, seed=6)
    cloud = res.curve_points()
    front = res.frontier()
    assert all(p in cloud for p in front)
    for p in front:
        assert not any(dominates(q, p) for q in cloud)
    for p in cloud:
        if p not in front:
            assert any(dominates(q, p) or (q.cost, q.accuracy) == (p.cost, p.accuracy) for q in front)


def test_reduced_space_evolutionary_near_optimum():
    opt = exhaustive_best(REDUCED, 2).reward
    hits = sum(search(REDUCED, 2, Strategy.EVOLUTIONARY, 500, seed=s).best.reward >= 0.99 * opt
               for s in range(10))
    assert hits >= 9


def test_evolutionary_median_beats_random_full_space():
    evo = [search(FULL, 2, Strategy.EVOLUTIONARY, 1000, seed=s).best.reward for s in range(10)]
    rnd = [search(FULL, 2, Strategy.RANDOM, 1000, seed=s).best.reward for s in range(10)]
    assert statistics.median(evo) >= statistics.median(rnd)


def test_pure_mutation_matches_random_in_distribution():
    ea = EvolutionParams(mutation_prob=1.0, elitism=0)
    evo = np.array([search(FULL, 2, Strategy.EVOLUTIONARY, 200, seed=s, ea=ea).best.reward for s in range(20)])
    rnd = np.array([search(FULL, 2, Strategy.RANDOM, 200, seed=100 + s).best.reward for s in range(20)])
    se = math.sqrt(evo.var(ddof=1) / 20 + rnd.var(ddof=1) / 20)
    assert abs(evo.mean() - rnd.mean()) <= 3 * se


# duplicate_vs_diverse_report(75.0, SurrogateParams(), RewardParams(), budget=300, seed=5)
REPORT_REWARDS = {
    (1, "duplicate"): 0.7076906694617594,
    (1, "diverse"): 0.7076906694617594,
    (2, "duplicate"): 0.7297389472180354,
    (2, "diverse"): 0.7467129896796115,
    (3, "duplicate"): 0.7370883731367941,
    (3, "diverse"): 0.7713005364662664,
}


def test_duplicate_vs_diverse_regression():
    rows = duplicate_vs_diverse_report(75.0, SurrogateParams(), RewardParams(), budget=300, seed=5)
    assert {(r["ensemble_size"], r["mode"]): r["reward"] for r in rows} == REPORT_REWARDS
    by = {(r["ensemble_size"], r["mode"]): r for r in rows}
    for n in (1, 2, 3):
        gap = by[n, "diverse"]["reward"] - by[n, "duplicate"]["reward"]
        assert by[n, "diverse"]["reward_gap_vs_duplicate"] == gap
        assert by[n, "duplicate"]["max_latency_ms"] == by[1, "duplicate"]["max_latency_ms"]
        assert by[n, "diverse"]["max_latency_ms"] <= 75.0


def test_scale_zero_diverse_members_capped_by_best_single():
    # Without perturbation accuracy is a function of FLOPs alone, so no member
    # meeting the latency target can out-score the best feasible single model.
    sp = SurrogateParams(perturbation_scale=0.0)
    target = 60.0
    feasible = [ArchSpec.from_values(v) for v in REDUCED.models()
                if arch_flops_and_latency(ArchSpec.from_values(v))[1] <= target]
    best_single = max(surrogate_accuracy(a, sp) for a in feasible)
    rows = duplicate_vs_diverse_report(target, sp, budget=300, seed=1, space=REDUCED)
    assert rows[0]["accuracy"] == best_single
    res = search(REDUCED, 2, Strategy.EVOLUTIONARY, 300, seed=1, sp=sp, rp=RewardParams(target))
    chosen = res.best_feasible(target)
    members = chosen.arch().members
    assert statistics.fmean(surrogate_accuracy(m, sp) for m in members) <= best_single
