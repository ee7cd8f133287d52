"""Statistics, change scores, and their brute-force oracles."""
import itertools
import math

import numpy as np
import pytest

from mlsaom import (
    CovariateSet,
    EffectDescriptor,
    JointState,
    ModelSpec,
    Toggle,
    apply_toggle,
    change_scores,
    evaluation,
    statistic,
    statistic_total,
)
from mlsaom.effects import change_vector

from conftest import all_effects, full_covariates, random_state


def brute_statistic(effect, state, cov, i):
    """Naive subgraph-enumeration implementation of every effect formula."""
    x = state.x.astype(int)
    z = state.z.astype(int)
    n, h = state.n, state.h
    name, net = effect.name, effect.dependent_network
    if net == "X":
        if name == "outdegree":
            return sum(x[i, j] for j in range(n))
        if name == "reciprocity":
            return sum(x[i, j] * x[j, i] for j in range(n))
        if name == "transitive_triplets":
            return sum(x[i, j] * x[i, k] * x[k, j] for j in range(n) for k in range(n))
        if name == "transitive_recip_triplets":
            return sum(x[i, j] * x[j, i] * x[i, k] * x[k, j]
                       for j in range(n) for k in range(n))
        if name == "indegree_popularity":
            return sum(x[i, j] * x[k, i] for j in range(n) for k in range(n))
        if name == "outdegree_activity":
            return sum(x[i, j] * x[i, k] for j in range(n) for k in range(n))
        if name == "reciprocal_degree_activity":
            return sum(x[i, j] * x[i, k] * x[k, i] for j in range(n) for k in range(n))
        if name == "three_cycles":
            return sum(x[i, j] * x[j, k] * x[k, i] for j in range(n) for k in range(n))
        if name == "covariate_ego":
            B = cov.ego_values(effect.covariate, n)
            return sum(x[i, j] for j in range(n)) * B[i]
        if name == "covariate_same":
            B = cov.actor_values(effect.covariate, n)
            return sum(x[i, j] * (B[i] == B[j]) for j in range(n))
        if name == "covariate_similarity":
            B = cov.actor_values(effect.covariate, n)
            rg = cov.ranges[effect.covariate]
            c = 1.0 - cov.similarity_mean[effect.covariate]
            return sum(x[i, j] * (c - abs(B[i] - B[j]) / rg) for j in range(n))
        if name == "log_group_size_activity":
            return math.log(n) * sum(x[i, j] for j in range(n))
        if name == "od":
            return sum(x[i, j] for j in range(n)) * sum(z[i, k] for k in range(h))
        if name == "id":
            return sum(x[i, j] * z[j, k] for j in range(n) for k in range(h))
        if name == "odd":
            return sum(x[i, j] * z[i, k] * z[j, k] for j in range(n) for k in range(h))
    else:
        if name == "outdegree":
            return sum(z[i, k] for k in range(h))
        if name == "indegree_popularity":
            return sum(z[i, k] * z[j, k] for j in range(n) for k in range(h))
        if name == "outdegree_activity":
            return sum(z[i, k] * z[i, l] for k in range(h) for l in range(h))
        if name == "covariate_ego":
            B = cov.ego_values(effect.covariate, n)
            return sum(z[i, k] for k in range(h)) * B[i]
        if name == "log_group_size_activity":
            return math.log(n) * sum(z[i, k] for k in range(h))
        if name == "od":
            return sum(x[i, j] for j in range(n)) * sum(z[i, k] for k in range(h))
        if name == "id":
            return sum(x[j, i] for j in range(n)) * sum(z[i, k] for k in range(h))
        if name == "odd":
            return sum(x[i, j] * z[i, k] * z[j, k] for j in range(n) for k in range(h))
        if name == "od_av":
            outdeg = sum(x[i, j] for j in range(n))
            if outdeg == 0:
                return 0.0
            excess = sum(x[i, j] * (sum(z[j, l] for l in range(h)) - cov.zbar)
                         for j in range(n))
            return sum(z[i, k] for k in range(h)) * excess / outdeg
    raise AssertionError(name)


def test_statistics_match_brute_force_random(rng):
    for _ in range(40):
        s = random_state(rng, n=5, h=3)
        cov = full_covariates(rng, 5)
        for eff in all_effects("X") + all_effects("Z"):
            for i in range(s.n):
                assert statistic(eff, s, cov, i) == pytest.approx(
                    brute_statistic(eff, s, cov, i), abs=1e-10), eff.key


def test_statistic_examples():
    # actor with 2 one-mode out-ties and 3 two-mode ties: od = 6
    s = JointState(4, 4)
    for j in (1, 2):
        s.toggle(Toggle(0, "X", j))
    for k in (0, 1, 2):
        s.toggle(Toggle(0, "Z", k))
    cov = CovariateSet(zbar=0.0)
    assert statistic(EffectDescriptor("od", "X"), s, cov, 0) == 6.0
    assert statistic(EffectDescriptor("od", "Z"), s, cov, 0) == 6.0
    # empty network: every structural effect is 0
    empty = JointState(4, 2)
    for eff in all_effects("X", h=2):
        if eff.covariate is None:
            assert statistic(eff, empty, cov, 1) == 0.0
    # x = {1->2, 2->1, 2->3}: reciprocity statistic of actor 2 is 1
    s2 = JointState(4, 0)
    s2.toggle(Toggle(1, "X", 2))
    s2.toggle(Toggle(2, "X", 1))
    s2.toggle(Toggle(2, "X", 3))
    assert statistic(EffectDescriptor("reciprocity", "X"), s2, cov, 2) == 1.0


def test_od_av_example():
    # actor 0: z-outdegree 3, friends 1 and 2 with z-outdegrees 2 and 4, zbar = 1
    s = JointState(3, 5)
    for k in range(3):
        s.toggle(Toggle(0, "Z", k))
    for k in range(2):
        s.toggle(Toggle(1, "Z", k))
    for k in range(4):
        s.toggle(Toggle(2, "Z", k))
    s.toggle(Toggle(0, "X", 1))
    s.toggle(Toggle(0, "X", 2))
    cov = CovariateSet(zbar=1.0)
    got = statistic(EffectDescriptor("od_av", "Z"), s, cov, 0)
    assert got == pytest.approx(3 * ((2 - 1) + (4 - 1)) / 2)  # = 6


def test_od_av_zero_over_zero():
    s = JointState(3, 2)
    s.toggle(Toggle(0, "Z", 0))
    cov = CovariateSet(zbar=0.5)
    assert statistic(EffectDescriptor("od_av", "Z"), s, cov, 0) == 0.0


def test_odd_same_formula_both_networks(rng):
    for _ in range(20):
        s = random_state(rng, n=5, h=3)
        cov = CovariateSet(zbar=0.0)
        for i in range(s.n):
            a = statistic(EffectDescriptor("odd", "X"), s, cov, i)
            b = statistic(EffectDescriptor("odd", "Z"), s, cov, i)
            assert a == b


def test_log_group_size_statistic(rng):
    s = random_state(rng, n=7, h=0)
    cov = CovariateSet()
    eff = EffectDescriptor("log_group_size_activity", "X")
    for i in range(s.n):
        assert statistic(eff, s, cov, i) == pytest.approx(math.log(7) * s.xout[i])


def test_descriptor_validation():
    with pytest.raises(ValueError):
        EffectDescriptor("od_av", "X")
    with pytest.raises(ValueError):
        EffectDescriptor("covariate_ego", "X")
    with pytest.raises(ValueError):
        EffectDescriptor("outdegree", "X", covariate="sex")
    with pytest.raises(ValueError):
        EffectDescriptor("reciprocity", "Z")
    with pytest.raises(ValueError):
        EffectDescriptor("nonsense", "X")


def test_statistic_missing_covariate_errors(rng):
    s = random_state(rng, n=4, h=2)
    with pytest.raises(KeyError):
        statistic(EffectDescriptor("covariate_ego", "X", covariate="nope"), s,
                  CovariateSet(), 0)


def test_evaluation_linearity(rng):
    s = random_state(rng, n=5, h=3)
    cov = full_covariates(rng, 5)
    effs = all_effects("X")
    zero = {e: 0.0 for e in effs}
    assert evaluation(zero, s, cov, 2, "X") == 0.0
    theta = {e: float(rng.normal()) for e in effs}
    total = evaluation(theta, s, cov, 2, "X")
    parts = sum(c * statistic(e, s, cov, 2) for e, c in theta.items())
    assert total == pytest.approx(parts)
    # single outdegree effect: theta = -2, actor with 3 out-ties -> -6
    s2 = JointState(5, 0)
    for j in (1, 2, 3):
        s2.toggle(Toggle(0, "X", j))
    eff = EffectDescriptor("outdegree", "X")
    assert evaluation({eff: -2.0}, s2, CovariateSet(), 0, "X") == -6.0


def test_evaluation_rejects_wrong_network(rng):
    s = random_state(rng, n=4, h=2)
    cov = full_covariates(rng, 4)
    theta = {EffectDescriptor("outdegree", "Z"): 1.0}
    with pytest.raises(ValueError):
        evaluation(theta, s, cov, 0, "X")


def test_change_scores_match_from_scratch(rng):
    """Incremental change scores equal from-scratch differences, both networks."""
    for _ in range(60):
        s = random_state(rng, n=6, h=3)
        cov = full_covariates(rng, 6)
        i = int(rng.integers(6))
        for net in ("X", "Z"):
            theta = {e: float(rng.normal()) for e in all_effects(net)}
            scores = change_scores(theta, s, cov, i, net)
            assert scores[Toggle(i, net, None)] == 0.0
            for t, got in scores.items():
                if t.diagonal:
                    continue
                after = apply_toggle(s, t)
                ref = (evaluation(theta, after, cov, i, net)
                       - evaluation(theta, s, cov, i, net))
                assert got == pytest.approx(ref, abs=1e-12), (t, theta)


def test_change_scores_outdegree_example():
    s = JointState(3, 0)
    s.toggle(Toggle(0, "X", 1))
    theta = {EffectDescriptor("outdegree", "X"): -2.0}
    scores = change_scores(theta, s, CovariateSet(), 0, "X")
    assert scores[Toggle(0, "X", 2)] == pytest.approx(-2.0)  # creation
    assert scores[Toggle(0, "X", 1)] == pytest.approx(2.0)   # termination


def exhaustive_states(n, h):
    cells = [(i, j) for i in range(n) for j in range(n) if i != j]
    zcells = [(i, k) for i in range(n) for k in range(h)]
    for bits in itertools.product((0, 1), repeat=len(cells)):
        x = np.zeros((n, n), dtype=np.uint8)
        for (i, j), b in zip(cells, bits):
            x[i, j] = b
        if h == 0:
            yield JointState(n, 0, x, np.zeros((n, 0), dtype=np.uint8))
        else:
            for zbits in itertools.product((0, 1), repeat=len(zcells)):
                z = np.zeros((n, h), dtype=np.uint8)
                for (i, k), b in zip(zcells, zbits):
                    z[i, k] = b
                yield JointState(n, h, x, z)


def test_structural_statistics_exhaustive_n3():
    """Exact match against brute force over every joint state with n=3, h=2."""
    cov = CovariateSet(zbar=0.5)
    effs = [e for e in all_effects("X", h=2) + all_effects("Z", h=2) if e.covariate is None]
    for s in exhaustive_states(3, 2):
        for eff in effs:
            for i in range(3):
                assert statistic(eff, s, cov, i) == brute_statistic(eff, s, cov, i)


def test_statistic_total_is_actor_sum(rng):
    s = random_state(rng, n=6, h=3)
    cov = full_covariates(rng, 6)
    for eff in all_effects("X") + all_effects("Z"):
        tot = statistic_total(eff, s, cov)
        ref = sum(statistic(eff, s, cov, i) for i in range(6))
        assert tot == pytest.approx(ref, abs=1e-9)


def test_modelspec_validation():
    with pytest.raises(ValueError):
        ModelSpec([EffectDescriptor("outdegree", "Z")], [])
    m = ModelSpec([EffectDescriptor("outdegree", "X"),
                   EffectDescriptor("od", "X")], [])
    with pytest.raises(ValueError):
        m.validate_against(0, [], [])  # cross effect without a second mode
    m2 = ModelSpec([EffectDescriptor("covariate_same", "X", covariate="sex")], [])
    with pytest.raises(ValueError):
        m2.validate_against(0, [], ["sex"])  # same needs an actor covariate
    m2.validate_against(0, ["sex"], [])
