import math

import numpy as np
import pytest

from stablemanifold.dichotomy import DichotomyParams, rate_power_system
from stablemanifold.manifold import SolverConfig, cubic_perturbation, solve_manifold
from stablemanifold.rates import builtin_rate
from stablemanifold.verify import (check_decay, check_invariance, check_perturbation_bound,
                                   default_perturbation_samples, perturbation_distance,
                                   random_decay_pairs, random_invariance_samples,
                                   small_ball_radius, stability_constant)

EXP = builtin_rate("exponential")
PARAMS = DichotomyParams(D=1.0, a=-1.0, b=1.0, eps=0.0)
CFG = SolverConfig(s_grid=tuple(np.linspace(0.0, 2.0, 21)), delta=0.02, C=2.0,
                   nodes_per_axis=41, h=0.01)


@pytest.fixture(scope="module")
def solved():
    system = rate_power_system(EXP, a=-1.0, b=1.0)
    pert = cubic_perturbation(1.0)
    graph, _ = solve_manifold(system, EXP, EXP, PARAMS, pert, CFG)
    return system, pert, graph


def test_small_ball_radius(solved):
    _, _, graph = solved
    # (delta / C) * beta with beta = sqrt(2) and no nonuniform factor
    assert small_ball_radius(graph, EXP, PARAMS, 0.0) == pytest.approx(
        0.01 * math.sqrt(2.0), rel=1e-8)


def test_invariance_sample_generator(solved):
    _, _, graph = solved
    rng = np.random.default_rng(42)
    samples = random_invariance_samples(graph, EXP, PARAMS, 30, 1.0, rng)
    assert len(samples) == 30
    for s, xi, tau in samples:
        assert graph.s_grid[0] <= s <= graph.s_grid[-1]
        assert np.abs(xi).sum() <= small_ball_radius(graph, EXP, PARAMS, s) * (1 + 1e-12)
        assert 0.0 < tau <= 1.0
    again = random_invariance_samples(graph, EXP, PARAMS, 30, 1.0,
                                      np.random.default_rng(42))
    assert all(a[0] == b[0] and np.array_equal(a[1], b[1]) and a[2] == b[2]
               for a, b in zip(samples, again))


def test_invariance_holds_on_oracle(solved):
    system, pert, graph = solved
    rng = np.random.default_rng(1)
    samples = random_invariance_samples(graph, EXP, PARAMS, 25, 1.0, rng)
    report = check_invariance(graph, system, EXP, EXP, PARAMS, pert, samples,
                              h=1e-2, tol=1e-2)
    assert report.passed
    assert report.max_residual <= 1e-4
    assert report.all_within_radius
    assert len(report.rows) == 25


def test_invariance_rejects_oversized_seed(solved):
    system, pert, graph = solved
    big = small_ball_radius(graph, EXP, PARAMS, 0.5) * 2.0
    with pytest.raises(ValueError, match="outside the small ball"):
        check_invariance(graph, system, EXP, EXP, PARAMS, pert,
                         [(0.5, np.array([big]), 0.5)])


def test_decay_holds_on_oracle(solved):
    system, pert, graph = solved
    rng = np.random.default_rng(2)
    pairs = random_decay_pairs(graph, EXP, PARAMS, 25, 1.0, rng)
    report = check_decay(graph, system, EXP, EXP, PARAMS, pert, pairs,
                         h=1e-2, tol=1e-3)
    assert report.passed
    # separation here is essentially e^-tau * gap, a quarter of the bound 2C
    assert report.max_ratio <= 0.3
    assert report.rows


def test_decay_rejects_backward_time(solved):
    system, pert, graph = solved
    with pytest.raises(ValueError, match="t < s"):
        check_decay(graph, system, EXP, EXP, PARAMS, pert,
                    [(1.0, np.array([0.001]), np.array([0.002]), 0.5)])


def test_perturbation_distance_axis_attainment():
    f = cubic_perturbation(1.0)
    g = cubic_perturbation(1.05)
    samples = default_perturbation_samples(2, [0.0, 1.0], [0.25, 0.5, 1.0])
    dist = perturbation_distance(f, g, 2.0, samples)
    assert dist.value == pytest.approx(0.05, rel=1e-12)
    assert dist.n_samples == len(samples)
    zero = perturbation_distance(f, f, 2.0, samples)
    assert zero.value == 0.0


def test_perturbation_distance_empty_samples():
    f = cubic_perturbation(1.0)
    with pytest.raises(ValueError, match="empty"):
        perturbation_distance(f, f, 2.0, [])


def test_default_samples_include_axes():
    rng = np.random.default_rng(0)
    samples = default_perturbation_samples(3, [0.0], [1.0], rng)
    dirs = {tuple(u) for _, u in samples}
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        assert tuple(e) in dirs and tuple(-e) in dirs
    # 6 axis rays + 8 random directions, one t, one radius
    assert len(samples) == 14


def test_stability_constant_value():
    assert stability_constant(2.0, 2.0, 1.0, 0.02) == pytest.approx(0.3456, rel=1e-12)


def test_perturbation_bound_on_oracle():
    system = rate_power_system(EXP, a=-1.0, b=1.0)
    cfg = SolverConfig(s_grid=tuple(np.linspace(0.0, 2.0, 11)), delta=0.02, C=2.0,
                       nodes_per_axis=21, h=0.01)
    report = check_perturbation_bound(system, EXP, EXP, PARAMS,
                                      cubic_perturbation(1.0), cubic_perturbation(1.05),
                                      cfg)
    assert report.passed
    assert report.delta == pytest.approx(0.02)
    assert report.stability_k == pytest.approx(0.3456, rel=1e-12)
    assert report.f_distance.value == pytest.approx(0.05, rel=1e-12)
    # graphs -xi^3/4 and -1.05 xi^3/4 differ by (delta beta)^2 / 4 per unit
    # f-gap, far under the certified constant
    assert report.quotient == pytest.approx(2e-4, rel=1e-4)
    assert report.graph_distance <= report.stability_k * report.f_distance.value
    assert report.notes


def test_perturbation_bound_rejects_mismatched_order():
    system = rate_power_system(EXP, a=-1.0, b=1.0)
    f = cubic_perturbation(1.0)
    g_fn = lambda t, v: np.array([0.0, v[0] ** 2])
    from stablemanifold.manifold import Perturbation
    g = Perturbation(g_fn, c=1.0, q=1.0)
    cfg = SolverConfig(s_grid=(0.0, 1.0), delta=0.02, C=2.0, nodes_per_axis=5, h=0.05)
    with pytest.raises(ValueError, match="orders q must match"):
        check_perturbation_bound(system, EXP, EXP, PARAMS, f, g, cfg)
