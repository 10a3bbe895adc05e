import math

import numpy as np
import pytest

from stablemanifold.dichotomy import DichotomyParams, matrix_system, rate_power_system
from stablemanifold.errors import BlowupError
from stablemanifold.manifold import (InnerTrajectory, Perturbation, SolverConfig,
                                     cubic_perturbation, eval_phi, eval_phi_many,
                                     expression_perturbation, graph_metric_distance,
                                     inner_trajectory, nonlinear_flow,
                                     outer_contraction_factor, solve_manifold)
from stablemanifold.rates import builtin_rate

EXP = builtin_rate("exponential")
PARAMS = DichotomyParams(D=1.0, a=-1.0, b=1.0, eps=0.0)
CFG = SolverConfig(s_grid=tuple(np.linspace(0.0, 2.0, 21)), delta=0.02, C=2.0,
                   nodes_per_axis=41, h=0.01)


@pytest.fixture(scope="module")
def solved():
    # u' = -u, v' = v + u^3 carries the invariant graph v = -u^3/4
    system = rate_power_system(EXP, a=-1.0, b=1.0)
    pert = cubic_perturbation(1.0)
    graph, history = solve_manifold(system, EXP, EXP, PARAMS, pert, CFG)
    return system, pert, graph, history


def exact_phi(xi):
    return -np.asarray(xi) ** 3 / 4.0


def test_perturbation_validation():
    with pytest.raises(ValueError, match="c must be positive"):
        Perturbation(lambda t, v: v, c=0.0, q=2.0)
    with pytest.raises(ValueError, match="q must be >= 1"):
        Perturbation(lambda t, v: v, c=1.0, q=0.5)


def test_cubic_perturbation_shape():
    pert = cubic_perturbation(2.0)
    assert pert.c == 2.0 and pert.q == 2.0
    out = pert.f(0.0, np.array([0.5, 9.0]))
    assert np.allclose(out, [0.0, 0.25])
    batch = pert.batch(np.zeros(3), np.array([[0.5, 9.0], [1.0, 0.0], [-1.0, 3.0]]))
    assert np.allclose(batch, [[0.0, 0.25], [0.0, 2.0], [0.0, -2.0]])
    with pytest.raises(ValueError, match="n >= 2"):
        cubic_perturbation(1.0, n=1)


def test_expression_perturbation_matches_cubic():
    pert = expression_perturbation(["0", "u1^3"], c=1.0, q=2.0)
    ref = cubic_perturbation(1.0)
    t = np.linspace(0.0, 1.0, 5)
    v = np.column_stack([np.linspace(-0.5, 0.5, 5), np.zeros(5)])
    assert np.allclose(pert.batch(t, v), ref.batch(t, v))
    assert np.allclose(pert.f(0.3, np.array([0.2, 1.0])), ref.f(0.3, np.array([0.2, 1.0])))


def test_outer_contraction_factor_value():
    # 2^(q+2) 3^q c C^(q+1) D delta^q at the reference constants
    assert outer_contraction_factor(1.0, 2.0, 2.0, 1.0, 0.02) == pytest.approx(
        0.4608, rel=1e-12)


def test_solver_converges_in_two_iterations(solved):
    _, _, graph, history = solved
    assert len(history) == 2
    assert history[0]["distance"] == pytest.approx(2e-4, rel=1e-6)
    assert history[1]["distance"] == 0.0


def test_contraction_ratios_within_certified_factor(solved):
    _, _, _, history = solved
    factor = outer_contraction_factor(1.0, 2.0, 2.0, 1.0, 0.02)
    for row in history:
        if row["ratio"] is not None:
            assert row["ratio"] <= 1.1 * factor


def test_node_values_match_exact_graph(solved):
    _, _, graph, _ = solved
    for k in range(graph.n_slices):
        xi = graph.node_points(k)[:, 0]
        err = np.abs(graph.values[k][:, 0] - exact_phi(xi))
        assert err.max() <= 1e-8
        mask = xi != 0.0
        assert (err[mask] / np.abs(xi[mask]) ** 3).max() <= 1e-4


def test_graph_radii_from_beta(solved):
    _, _, graph, _ = solved
    # eps = 0 exponential pair: beta = sqrt(2) at every s
    assert np.allclose(graph.radii, 0.02 * math.sqrt(2.0), rtol=1e-8)
    assert graph.radius_fn(0.5) == pytest.approx(0.02 * math.sqrt(2.0), rel=1e-8)


def test_graph_is_odd(solved):
    _, _, graph, _ = solved
    for xi in [0.005, 0.015, 0.025]:
        plus = eval_phi(graph, 0.7, xi)[0]
        minus = eval_phi(graph, 0.7, -xi)[0]
        assert plus == pytest.approx(-minus, abs=1e-15)


def test_eval_phi_interpolates(solved):
    _, _, graph, _ = solved
    rng = np.random.default_rng(3)
    s = rng.uniform(0.0, 2.0, size=20)
    xi = rng.uniform(-0.028, 0.028, size=(20, 1))
    vals = eval_phi_many(graph, s, xi)
    assert np.abs(vals[:, 0] - exact_phi(xi[:, 0])).max() <= 1e-8


def test_eval_phi_beyond_horizon(solved):
    # the radius function extrapolates, and the last slice carries the values
    _, _, graph, _ = solved
    assert eval_phi(graph, 5.0, 0.02)[0] == pytest.approx(exact_phi(0.02), abs=1e-8)


def test_eval_phi_clamps_to_ball(solved):
    _, _, graph, _ = solved
    rho = graph.radius_fn(0.0)
    assert eval_phi(graph, 0.0, 10.0)[0] == eval_phi(graph, 0.0, rho)[0]


def test_graph_metric_distance_against_zero(solved):
    # sup |phi(xi)|/|xi| over nodes = rho^2/4, attained at the ball edge
    _, _, graph, _ = solved
    zeros = np.zeros_like(graph.values)
    dist = graph_metric_distance(zeros, graph.values, graph)
    rho = graph.radii.max()
    assert dist == pytest.approx(rho ** 2 / 4.0, rel=1e-4)
    assert graph_metric_distance(graph.values, graph.values, graph) == 0.0


def test_graph_lipschitz_one(solved):
    _, _, graph, _ = solved
    rng = np.random.default_rng(5)
    rho = graph.radius_fn(1.0)
    for _ in range(20):
        x1, x2 = rng.uniform(-rho, rho, size=2)
        d_phi = abs(eval_phi(graph, 1.0, x1)[0] - eval_phi(graph, 1.0, x2)[0])
        assert d_phi <= abs(x1 - x2) * 1.0001 + 1e-15


def test_inner_trajectory_decoupled_decay(solved):
    system, pert, graph, _ = solved
    traj = inner_trajectory(graph, system, EXP, EXP, PARAMS, pert,
                            s=0.0, xi=0.02, t_max=3.0, h=0.01)
    assert isinstance(traj, InnerTrajectory)
    # the stable component never feels the forcing here, so x = xi e^-(t-s)
    expected = 0.02 * np.exp(-traj.t)
    assert np.abs(traj.x[:, 0] - expected).max() <= 1e-12
    assert traj.max_decay_ratio <= 1.05
    assert traj.sweeps <= 2


def test_inner_trajectory_rejects_outside_ball(solved):
    system, pert, graph, _ = solved
    with pytest.raises(ValueError, match="outside the slice ball"):
        inner_trajectory(graph, system, EXP, EXP, PARAMS, pert,
                         s=0.0, xi=0.1, t_max=2.0, h=0.01)
    with pytest.raises(ValueError, match="t_max"):
        inner_trajectory(graph, system, EXP, EXP, PARAMS, pert,
                         s=1.0, xi=0.01, t_max=0.5, h=0.01)


def test_nonlinear_flow_preserves_graph(solved):
    system, pert, graph, _ = solved
    xi = 0.02
    v0 = np.array([xi, float(exact_phi(xi))])
    t1, v1 = nonlinear_flow(system, pert, 0.0, v0, tau=1.5, h=1e-3)
    assert t1 == pytest.approx(1.5)
    u = xi * math.exp(-1.5)
    assert v1[0] == pytest.approx(u, rel=1e-10)
    assert v1[1] == pytest.approx(float(exact_phi(u)), rel=1e-6)


def test_nonlinear_flow_matrix_route_matches(solved):
    system, pert, _, _ = solved
    mat = matrix_system(lambda t: np.diag([-1.0, 1.0]), 2, 1)
    v0 = np.array([0.02, -2e-6])
    _, va = nonlinear_flow(system, pert, 0.0, v0, tau=1.0, h=1e-3)
    _, vb = nonlinear_flow(mat, pert, 0.0, v0, tau=1.0, h=1e-3)
    assert np.allclose(va, vb, rtol=1e-9, atol=1e-15)


def test_nonlinear_flow_blowup(solved):
    system, pert, _, _ = solved
    with pytest.raises(BlowupError):
        nonlinear_flow(system, pert, 0.0, np.array([0.0, 4.0]), tau=30.0, h=1e-2,
                       blowup_factor=100.0)


def test_nonlinear_flow_validation(solved):
    system, pert, _, _ = solved
    with pytest.raises(ValueError, match="tau"):
        nonlinear_flow(system, pert, 0.0, np.zeros(2), tau=-1.0)
    with pytest.raises(ValueError, match="shape"):
        nonlinear_flow(system, pert, 0.0, np.zeros(3), tau=1.0)


def test_solver_rejects_oversized_delta():
    system = rate_power_system(EXP, a=-1.0, b=1.0)
    cfg = SolverConfig(s_grid=(0.0, 1.0), delta=0.05, C=2.0, nodes_per_axis=5, h=0.05)
    with pytest.raises(ValueError, match="certified delta_max"):
        solve_manifold(system, EXP, EXP, PARAMS, cubic_perturbation(1.0), cfg)


def test_solver_rejects_nonvanishing_perturbation():
    system = rate_power_system(EXP, a=-1.0, b=1.0)
    bad = Perturbation(lambda t, v: np.array([0.0, 1e-3 + v[0] ** 3]), c=1.0, q=2.0)
    cfg = SolverConfig(s_grid=(0.0, 1.0), delta=0.02, C=2.0, nodes_per_axis=5, h=0.05)
    with pytest.raises(ValueError, match="vanish at the origin"):
        solve_manifold(system, EXP, EXP, PARAMS, bad, cfg)


def test_solver_rejects_bad_lattice():
    system = rate_power_system(EXP, a=-1.0, b=1.0)
    cfg = SolverConfig(s_grid=(0.0, 1.0), delta=0.02, C=2.0, nodes_per_axis=4, h=0.05)
    with pytest.raises(ValueError, match="odd integer"):
        solve_manifold(system, EXP, EXP, PARAMS, cubic_perturbation(1.0), cfg)


def test_matrix_route_reproduces_graph():
    # same dynamics entering through the coefficient-matrix interface
    mat = matrix_system(lambda t: np.diag([-1.0, 1.0]), 2, 1)
    cfg = SolverConfig(s_grid=(0.0, 0.5), delta=0.02, C=2.0, nodes_per_axis=7,
                       h=0.05, tail_abs_tol=1e-9, outer_tol=1e-10)
    graph, history = solve_manifold(mat, EXP, EXP, PARAMS, cubic_perturbation(1.0), cfg)
    assert len(history) == 2
    for k in range(graph.n_slices):
        xi = graph.node_points(k)[:, 0]
        mask = xi != 0.0
        err = np.abs(graph.values[k][mask, 0] - exact_phi(xi[mask]))
        assert (err / np.abs(xi[mask]) ** 3).max() <= 1e-4
