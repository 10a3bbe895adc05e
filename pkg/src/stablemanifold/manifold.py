"""Local stable-manifold graphs via the Lyapunov-Perron fixed point.

The graph phi : (s, xi) -> eta lives on shrinking balls of radius
delta * beta(s) in the stable block.  One outer iteration maps the current
graph through::

    (Phi phi)(s, xi) = - integral_s^inf V(r,s)^-1 f_F(r, x(r), phi(r, x(r))) dr

where x is the inner trajectory solving the variation-of-constants equation

    x(t) = U(t,s) xi + integral_s^t U(t,r) f_E(r, x(r), phi(r, x(r))) dr

by Picard sweeps (cumulative Simpson on the integrand; the scalar cocycle
U(t,r) = U(t,s)/U(r,s) of block-scalar systems makes a sweep O(N)).

Graphs are stored per s-slice on a shared tensor lattice in normalized
coordinates; evaluation is multilinear per slice, linear in s between slices,
clamped radially to the slice ball (the unique Lipschitz extension beyond the
ball takes the boundary value along the ray).  Beyond the last slice the last
values are reused with the radius continued by the closed-form beta shape when
one exists, log-linearly otherwise.

Norms on state blocks are sum norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .admissibility import (BetaFunction, analytic_tail_bound, delta_max)
from .dichotomy import DichotomyParams, LinearSystem
from .errors import (BlowupError, ContractionError, ConvergenceError, DecayBoundError,
                     DivergenceError, LipschitzError, NumericalError, TailBoundError)
from .expr import compile_expression
from .quadrature import adaptive_simpson, composite_simpson, cumulative_simpson
from .rates import GrowthRate

__all__ = ["Perturbation", "cubic_perturbation", "expression_perturbation",
           "ManifoldGraph", "SolverConfig", "eval_phi", "eval_phi_many",
           "InnerTrajectory", "inner_trajectory", "apply_phi_operator",
           "solve_manifold", "nonlinear_flow", "outer_contraction_factor",
           "graph_metric_distance"]


@dataclass(frozen=True)
class Perturbation:
    """Nonlinearity f(t, v) vanishing at v = 0 with |f(t,u)-f(t,v)| <= c|u-v|(|u|+|v|)^q.

    ``f`` maps (t, v in R^n) -> R^n; ``batch`` (optional) evaluates a whole
    time/state sample block at once and exists purely for speed.
    """

    f: Callable[[float, np.ndarray], np.ndarray]
    c: float
    q: float
    label: str = ""
    f_batch: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if not self.c > 0.0:
            raise ValueError(f"perturbation constant c must be positive, got {self.c}")
        if not self.q >= 1.0:
            raise ValueError(f"perturbation order q must be >= 1, got {self.q}")

    def batch(self, t: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.f_batch is not None:
            return self.f_batch(t, v)
        return np.asarray([self.f(float(tt), vv) for tt, vv in zip(t, v)], dtype=float)


def cubic_perturbation(coef: float, n: int = 2) -> Perturbation:
    """f(t, v) = (0, ..., 0, coef * v_1^3): order-3 forcing of the last component."""
    if n < 2:
        raise ValueError("cubic perturbation needs n >= 2")

    def f(t: float, v: np.ndarray) -> np.ndarray:
        out = np.zeros(n)
        out[-1] = coef * v[0] ** 3
        return out

    def f_batch(t: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.zeros_like(v)
        out[:, -1] = coef * v[:, 0] ** 3
        return out

    return Perturbation(f, c=abs(coef), q=2.0, label=f"cubic(coef={coef:g})", f_batch=f_batch)


def expression_perturbation(components: Sequence[str], c: float, q: float,
                            label: str = "") -> Perturbation:
    """Componentwise formulas in variables t, u1..un (n = number of components)."""
    n = len(components)
    names = ("t",) + tuple(f"u{i + 1}" for i in range(n))
    fns = [compile_expression(text, variables=names) for text in components]

    def env_for(t, v):
        env = {"t": t}
        for i in range(n):
            env[f"u{i + 1}"] = v[..., i]
        return env

    def f(t: float, v: np.ndarray) -> np.ndarray:
        env = env_for(t, np.asarray(v, dtype=float))
        return np.array([float(fn(**env)) for fn in fns])

    def f_batch(t: np.ndarray, v: np.ndarray) -> np.ndarray:
        env = env_for(np.asarray(t, dtype=float), np.asarray(v, dtype=float))
        cols = [np.broadcast_to(np.asarray(fn(**env), dtype=float), t.shape) for fn in fns]
        return np.stack(cols, axis=1)

    return Perturbation(f, c=c, q=q, label=label or f"expr({', '.join(components)})",
                        f_batch=f_batch)


def outer_contraction_factor(c: float, q: float, C: float, D: float, delta: float) -> float:
    """Certified contraction factor of the graph operator on the node metric."""
    return 2.0 ** (q + 2.0) * 3.0 ** q * c * C ** (q + 1.0) * D * delta ** q


def _build_lattice(n_axes: int, nodes_per_axis: int):
    if nodes_per_axis < 3 or nodes_per_axis % 2 == 0:
        raise ValueError("nodes_per_axis must be an odd integer >= 3")
    axis = np.linspace(-1.0, 1.0, nodes_per_axis)
    grids = np.meshgrid(*([axis] * n_axes), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    l1 = np.abs(pts).sum(axis=1)
    in_ball = l1 <= 1.0 + 1e-12
    targets = pts.copy()
    outside = ~in_ball
    targets[outside] = pts[outside] / l1[outside, None]
    return pts, in_ball, targets


@dataclass
class ManifoldGraph:
    """Discrete graph phi on s-slices sharing one normalized node lattice.

    ``values[k, j]`` is phi at slice s_grid[k], node ``radii[k] * unit_lattice[j]``
    (clamped to the slice ball for the few lattice corners outside it).
    """

    s_grid: np.ndarray
    radii: np.ndarray
    unit_lattice: np.ndarray
    in_ball: np.ndarray
    targets_unit: np.ndarray
    values: np.ndarray
    n_stable: int
    n_unstable: int
    delta: float
    C: float
    nodes_per_axis: int
    radius_fn: Callable[[np.ndarray], np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def n_slices(self) -> int:
        return len(self.s_grid)

    def node_points(self, k: int) -> np.ndarray:
        """Physical node targets of slice k (out-of-ball corners clamped)."""
        return self.targets_unit * self.radii[k]


def _slice_eval(graph: ManifoldGraph, k_arr: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Evaluate per-point slice interpolants: xi (N, n_E) at slices k_arr (N,)."""
    m = graph.nodes_per_axis
    d = graph.n_stable
    rho = graph.radii[k_arr]
    u = xi / rho[:, None]
    l1 = np.abs(u).sum(axis=1)
    over = l1 > 1.0
    if np.any(over):
        u = u.copy()
        u[over] /= l1[over, None]
    pos = (u + 1.0) * (0.5 * (m - 1))
    i0 = np.floor(pos).astype(np.int64)
    np.clip(i0, 0, m - 2, out=i0)
    frac = pos - i0
    out = np.zeros((len(u), graph.n_unstable))
    for corner in range(2 ** d):
        w = np.ones(len(u))
        flat = np.zeros(len(u), dtype=np.int64)
        for axis in range(d):
            bit = (corner >> axis) & 1
            flat = flat * m + (i0[:, axis] + bit)
            w = w * (frac[:, axis] if bit else 1.0 - frac[:, axis])
        out += graph.values[k_arr, flat] * w[:, None]
    return out


def eval_phi_many(graph: ManifoldGraph, t: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Vectorized graph evaluation at times t (N,) and stable points xi (N, n_E)."""
    t = np.asarray(t, dtype=float)
    xi = np.asarray(xi, dtype=float)
    s_grid = graph.s_grid
    rho_t = np.asarray(graph.radius_fn(t), dtype=float)
    norms = np.abs(xi).sum(axis=1)
    scale = np.ones_like(norms)
    over = norms > rho_t
    scale[over] = rho_t[over] / norms[over]
    xi_c = xi * scale[:, None]
    if len(s_grid) == 1:
        return _slice_eval(graph, np.zeros(len(t), dtype=np.int64), xi_c)
    idx = np.searchsorted(s_grid, t, side="right") - 1
    np.clip(idx, 0, len(s_grid) - 1, out=idx)
    idx2 = np.minimum(idx + 1, len(s_grid) - 1)
    den = s_grid[idx2] - s_grid[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(den > 0.0, (t - s_grid[idx]) / np.where(den > 0.0, den, 1.0), 0.0)
    np.clip(w, 0.0, 1.0, out=w)
    lo = _slice_eval(graph, idx, xi_c)
    hi = _slice_eval(graph, idx2, xi_c)
    return lo * (1.0 - w[:, None]) + hi * w[:, None]


def eval_phi(graph: ManifoldGraph, s: float, xi) -> np.ndarray:
    """Graph value phi(s, xi); xi may be a scalar when the stable block is 1-D."""
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float)).reshape(1, graph.n_stable)
    return eval_phi_many(graph, np.array([float(s)]), xi_arr)[0]


def _assemble_state(x: np.ndarray, phi_vals: np.ndarray) -> np.ndarray:
    return np.concatenate([x, phi_vals], axis=1)


def _decay_envelope(t: np.ndarray, s: float, mu: GrowthRate, nu: GrowthRate,
                    params: DichotomyParams, C: float, xi_norm: float) -> np.ndarray:
    log_b = params.a * (np.asarray(mu.log_eval(t), dtype=float) - float(mu.log_eval(s)))
    return C * np.exp(log_b + params.eps * float(nu.log_eval(s))) * xi_norm


@dataclass(frozen=True)
class InnerTrajectory:
    t: np.ndarray
    x: np.ndarray
    sweeps: int
    max_decay_ratio: float


def _picard_path(graph: ManifoldGraph, system: LinearSystem, pert: Perturbation,
                 s: float, xi: np.ndarray, t_grid: np.ndarray, h: float,
                 picard_tol: float, max_sweeps: int = 80) -> tuple[np.ndarray, int]:
    """Solve the inner integral equation on block-scalar systems; returns (x, sweeps)."""
    n_e = system.n_stable
    u_factors = np.asarray(system.U(t_grid, s), dtype=float)
    if np.any(u_factors <= 0.0) or not np.all(np.isfinite(u_factors)):
        raise NumericalError("stable propagator under/overflowed on the inner grid; "
                             "shorten the integration horizon")
    x = u_factors[:, None] * xi[None, :]
    for sweep in range(1, max_sweeps + 1):
        phi_vals = eval_phi_many(graph, t_grid, x)
        fv = pert.batch(t_grid, _assemble_state(x, phi_vals))
        cum = cumulative_simpson(fv[:, :n_e] / u_factors[:, None], h)
        x_new = u_factors[:, None] * (xi[None, :] + cum)
        delta = float(np.max(np.abs(x_new - x))) if x.size else 0.0
        x = x_new
        if delta <= picard_tol:
            return x, sweep
    raise ConvergenceError(f"inner Picard sweeps stalled above tolerance {picard_tol:g}")


def _matrix_inner_path(graph: ManifoldGraph, system: LinearSystem, pert: Perturbation,
                       s: float, xi: np.ndarray, t_grid: np.ndarray) -> tuple[np.ndarray, int]:
    """Inner trajectory for matrix systems: projected 4th-order stepping."""
    n, n_e = system.n, system.n_stable
    proj = system.P(s)
    state = np.zeros(n)
    state[:n_e] = xi
    out = np.empty((len(t_grid), n_e))
    out[0] = xi

    def deriv(tt: float, vv: np.ndarray) -> np.ndarray:
        phi = eval_phi(graph, tt, vv[:n_e])
        full = np.concatenate([vv[:n_e], phi])
        return system.A(tt) @ vv + proj @ pert.f(tt, full)

    for j in range(len(t_grid) - 1):
        t0 = t_grid[j]
        dt = t_grid[j + 1] - t0
        k1 = deriv(t0, state)
        k2 = deriv(t0 + 0.5 * dt, state + 0.5 * dt * k1)
        k3 = deriv(t0 + 0.5 * dt, state + 0.5 * dt * k2)
        k4 = deriv(t0 + dt, state + dt * k3)
        state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        state[n_e:] = 0.0
        out[j + 1] = state[:n_e]
    return out, 1


def _uniform_grid(s: float, t_max: float, h: float) -> tuple[np.ndarray, float]:
    n = max(2, int(math.ceil((t_max - s) / h)))
    h_eff = (t_max - s) / n
    return s + h_eff * np.arange(n + 1), h_eff


def inner_trajectory(graph: ManifoldGraph, system: LinearSystem, mu: GrowthRate,
                     nu: GrowthRate, params: DichotomyParams, pert: Perturbation,
                     s: float, xi, t_max: float, h: float, picard_tol: float = 1e-10,
                     decay_slack: float = 1.05) -> InnerTrajectory:
    """Trajectory through (s, xi) in the stable block, coupled to the current graph.

    Requires |xi|_1 <= delta * beta(s) (the slice ball).  The accepted
    trajectory must respect |x(t)|_1 <= C (mu(t)/mu(s))^a nu(s)^eps |xi|_1 up
    to ``decay_slack``; a violation raises DecayBoundError, which signals
    either an oversized delta or a bad graph iterate.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float)).reshape(graph.n_stable)
    xi_norm = float(np.abs(xi).sum())
    rho_s = float(graph.radius_fn(np.asarray(s, dtype=float)))
    if xi_norm > rho_s * (1.0 + 1e-9):
        raise ValueError(f"|xi|={xi_norm:g} outside the slice ball of radius {rho_s:g}")
    if t_max <= s:
        raise ValueError("t_max must exceed s")
    t_grid, h_eff = _uniform_grid(s, t_max, h)
    if system.form == "closed_form":
        x, sweeps = _picard_path(graph, system, pert, s, xi, t_grid, h_eff, picard_tol)
    else:
        x, sweeps = _matrix_inner_path(graph, system, pert, s, xi, t_grid)
    if xi_norm == 0.0:
        return InnerTrajectory(t_grid, x, sweeps, 0.0)
    envelope = _decay_envelope(t_grid, s, mu, nu, params, graph.C, xi_norm)
    ratios = np.abs(x).sum(axis=1) / envelope
    worst = float(ratios.max())
    if worst > decay_slack:
        j = int(np.argmax(ratios))
        raise DecayBoundError(
            f"inner trajectory from (s={s:g}, |xi|={xi_norm:g}) broke its decay envelope: "
            f"ratio {worst:.6f} at t={t_grid[j]:g} (slack {decay_slack:g})")
    return InnerTrajectory(t_grid, x, sweeps, worst)


def _rate_integrand(mu: GrowthRate, nu: GrowthRate, p: float, eps: float):
    def w(r: float) -> float:
        return math.exp(p * float(mu.log_eval(r)) + eps * float(nu.log_eval(r)))
    return w


def _truncation_point(mu: GrowthRate, nu: GrowthRate, p: float, eps: float, s: float,
                      target: float, t_cut_max: float) -> float:
    """Smallest doubling span T with certified integral_T^inf mu^p nu^eps <= target."""
    info = analytic_tail_bound(mu, nu, p, eps)
    if info is not None and info.divergent:
        raise DivergenceError("outer integrand does not decay; dichotomy constants "
                              "are inconsistent with the perturbation order")
    span = 1.0
    if info is not None and info.fn is not None:
        while span <= t_cut_max:
            bound = info.fn(s + span)
            if math.isfinite(bound) and bound <= target:
                return s + span
            span *= 2.0
        raise TailBoundError(
            f"analytic tail bound stays above {target:.3e} within span {t_cut_max:g}")
    w = _rate_integrand(mu, nu, p, eps)
    lo = s
    deltas: list[float] = []
    while span <= t_cut_max:
        hi = s + span
        deltas.append(adaptive_simpson(w, lo, hi, max(0.01 * target, 5e-324)))
        if deltas[-1] == 0.0:
            return hi
        if len(deltas) >= 2 and deltas[-2] > 0.0:
            theta = deltas[-1] / deltas[-2]
            if theta < 1.0 and deltas[-1] * theta / (1.0 - theta) <= target:
                return hi
        lo = hi
        span *= 2.0
    raise TailBoundError(
        f"no truncation certifying tail <= {target:.3e} within span {t_cut_max:g}")


def _unstable_inverse_factors(system: LinearSystem, s: float,
                              t_grid: np.ndarray) -> np.ndarray:
    """V(r, s)^-1 along the grid: scalars for closed forms, else one backward sweep.

    Matrix systems propagate W(r) = Q(s) T(s, r) forward in r via
    W' = -W A(r), W(s) = Q(s); then V(r,s)^-1 f = W(r) f on the unstable block,
    avoiding per-sample inversions entirely.
    """
    if system.form == "closed_form":
        v = np.asarray(system.V(t_grid, s), dtype=float)
        if np.any(v == 0.0) or not np.all(np.isfinite(v)):
            raise NumericalError("unstable propagator under/overflowed on the outer grid")
        return 1.0 / v
    n = system.n
    q_s = np.eye(n) - system.P(s)
    out = np.empty((len(t_grid), n, n))
    w = q_s.copy()
    out[0] = w
    for j in range(len(t_grid) - 1):
        t0 = t_grid[j]
        dt = t_grid[j + 1] - t0
        k1 = -w @ system.A(t0)
        k2 = -(w + 0.5 * dt * k1) @ system.A(t0 + 0.5 * dt)
        k3 = -(w + 0.5 * dt * k2) @ system.A(t0 + 0.5 * dt)
        k4 = -(w + dt * k3) @ system.A(t0 + dt)
        w = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[j + 1] = w
    return out


@dataclass(frozen=True)
class SolverConfig:
    """Resolution and tolerance knobs of the manifold solver."""

    s_grid: tuple[float, ...]
    delta: float | None = None       # None: use the certified delta_max
    C: float | None = None           # None: 2 * D
    nodes_per_axis: int = 41
    h: float = 0.01
    outer_tol: float = 1e-8
    max_outer: int = 30
    picard_tol: float = 1e-10
    tail_abs_tol: float = 1e-12
    t_cut_max: float = 1e5
    lipschitz_tol: float = 1e-3
    quad_rel_tol: float = 1e-8
    decay_slack: float = 1.05
    delta_cap: float = 1.0


def graph_metric_distance(old: np.ndarray, new: np.ndarray, graph: ManifoldGraph) -> float:
    """sup over slices and nonzero in-ball nodes of |Delta phi|_1 / |xi|_1."""
    norms = np.abs(graph.targets_unit).sum(axis=1)
    mask = graph.in_ball & (norms > 0.0)
    diff = np.abs(new[:, mask] - old[:, mask]).sum(axis=2)
    scaled = diff / (norms[mask][None, :] * graph.radii[:, None])
    return float(scaled.max()) if scaled.size else 0.0


def _check_lipschitz(graph: ManifoldGraph, values: np.ndarray, tol: float):
    """Adjacent in-ball nodes must satisfy |Dphi|_1 <= (1 + tol) |Dxi|_1."""
    m = graph.nodes_per_axis
    d = graph.n_stable
    shape = (m,) * d
    in_ball = graph.in_ball.reshape(shape)
    worst = 0.0
    where = None
    for k in range(graph.n_slices):
        dxi = 2.0 * graph.radii[k] / (m - 1)
        vals = values[k].reshape(shape + (graph.n_unstable,))
        for axis in range(d):
            sl_lo = [slice(None)] * d
            sl_hi = [slice(None)] * d
            sl_lo[axis] = slice(0, m - 1)
            sl_hi[axis] = slice(1, m)
            pair_ok = in_ball[tuple(sl_lo)] & in_ball[tuple(sl_hi)]
            if not pair_ok.any():
                continue
            diff = np.abs(vals[tuple(sl_hi)] - vals[tuple(sl_lo)]).sum(axis=-1)
            ratio = float((diff[pair_ok] / dxi).max())
            if ratio > worst:
                worst = ratio
                where = (float(graph.s_grid[k]), axis)
    if worst > 1.0 + tol:
        raise LipschitzError(
            f"graph iterate violated the Lipschitz-1 bound: ratio {worst:.6f} "
            f"at slice s={where[0]:g}", worst_ratio=worst, location=where)
    return worst


def apply_phi_operator(graph: ManifoldGraph, system: LinearSystem, mu: GrowthRate,
                       nu: GrowthRate, params: DichotomyParams, pert: Perturbation,
                       cfg: SolverConfig) -> ManifoldGraph:
    """One outer iteration: recompute every node value through the graph operator.

    Truncation points come from the decay-certified tail bound of the outer
    integrand, per slice; node values at lattice corners outside the slice
    ball are computed at their radially clamped targets, which keeps the
    interpolant consistent with the Lipschitz extension.
    """
    n_e, n_f = graph.n_stable, graph.n_unstable
    new_values = np.empty_like(graph.values)
    q, c = pert.q, pert.c
    for k in range(graph.n_slices):
        s = float(graph.s_grid[k])
        rho = float(graph.radii[k])
        coef = (3.0 ** (q + 1.0) * c * graph.C ** (q + 1.0) * params.D * rho ** (q + 1.0)
                * math.exp((params.b - (q + 1.0) * params.a) * float(mu.log_eval(s))
                           + params.eps * (q + 1.0) * float(nu.log_eval(s))))
        t_cut = _truncation_point(mu, nu, (q + 1.0) * params.a - params.b, params.eps, s,
                                  cfg.tail_abs_tol / coef, cfg.t_cut_max)
        t_grid, h_eff = _uniform_grid(s, t_cut, cfg.h)
        v_inv = _unstable_inverse_factors(system, s, t_grid)
        for j in range(len(graph.targets_unit)):
            xi = graph.targets_unit[j] * rho
            if system.form == "closed_form":
                x, _ = _picard_path(graph, system, pert, s, xi, t_grid, h_eff,
                                    cfg.picard_tol)
            else:
                x, _ = _matrix_inner_path(graph, system, pert, s, xi, t_grid)
            phi_vals = eval_phi_many(graph, t_grid, x)
            fv = pert.batch(t_grid, _assemble_state(x, phi_vals))
            if system.form == "closed_form":
                integrand = v_inv[:, None] * fv[:, n_e:]
            else:
                integrand = np.einsum("rij,rj->ri", v_inv, fv)[:, n_e:]
            new_values[k, j] = -composite_simpson(integrand, h_eff)
    _check_lipschitz(graph, new_values, cfg.lipschitz_tol)
    return replace(graph, values=new_values)


def _make_radius_fn(s_grid: np.ndarray, radii: np.ndarray, beta_fn: BetaFunction):
    s_grid = np.asarray(s_grid, dtype=float)
    radii = np.asarray(radii, dtype=float)
    s_max = float(s_grid[-1])
    r_last = float(radii[-1])
    closed = beta_fn.closed_form_value
    if closed(s_max) is not None:
        ref = float(closed(s_max))

        def radius(t):
            t = np.asarray(t, dtype=float)
            base = np.interp(t, s_grid, radii)
            beyond = t > s_max
            if np.any(beyond):
                base = np.where(beyond, r_last * np.asarray(closed(t), dtype=float) / ref, base)
            return base if base.ndim else float(base)

        return radius
    if len(s_grid) >= 2:
        slope = (math.log(radii[-1]) - math.log(radii[-2])) / (s_grid[-1] - s_grid[-2])
    else:
        slope = 0.0

    def radius(t):
        t = np.asarray(t, dtype=float)
        base = np.interp(t, s_grid, radii)
        beyond = t > s_max
        if np.any(beyond):
            base = np.where(beyond, r_last * np.exp(slope * (t - s_max)), base)
        return base if base.ndim else float(base)

    return radius


def solve_manifold(system: LinearSystem, mu: GrowthRate, nu: GrowthRate,
                   params: DichotomyParams, pert: Perturbation,
                   cfg: SolverConfig) -> tuple[ManifoldGraph, list[dict]]:
    """Iterate the graph operator from phi = 0 until the node metric settles.

    Returns the converged graph and the iteration history
    [{iteration, distance, ratio}].  The measured contraction ratio must stay
    within 10% of the certified factor; persistent excess raises
    ContractionError, exhaustion of the budget raises ConvergenceError.
    """
    n_e, n_f = system.n_stable, system.n_unstable
    cap = cfg.C if cfg.C is not None else 2.0 * params.D
    if not cap > params.D:
        raise ValueError(f"capacity C={cap} must exceed D={params.D}")
    certified = delta_max(pert.c, pert.q, cap, params.D, cfg.delta_cap)
    delta = cfg.delta if cfg.delta is not None else certified
    if delta > certified * (1.0 + 1e-12):
        raise ValueError(f"delta={delta:g} exceeds the certified delta_max={certified:g}")
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    s_grid = np.asarray(cfg.s_grid, dtype=float)
    if s_grid.size == 0 or np.any(np.diff(s_grid) <= 0.0):
        raise ValueError("s_grid must be strictly increasing and nonempty")
    for s in s_grid:
        probe = np.abs(np.asarray(pert.f(float(s), np.zeros(system.n)))).max()
        if probe != 0.0:
            raise ValueError(f"perturbation must vanish at the origin; f({s:g}, 0) != 0")
    beta_fn = BetaFunction(mu, nu, params.a, params.eps, pert.q, cfg.quad_rel_tol)
    radii = np.array([delta * beta_fn.beta(float(s)) for s in s_grid])
    lattice, in_ball, targets = _build_lattice(n_e, cfg.nodes_per_axis)
    graph = ManifoldGraph(
        s_grid=s_grid, radii=radii, unit_lattice=lattice, in_ball=in_ball,
        targets_unit=targets, values=np.zeros((len(s_grid), len(lattice), n_f)),
        n_stable=n_e, n_unstable=n_f, delta=float(delta), C=float(cap),
        nodes_per_axis=cfg.nodes_per_axis,
        radius_fn=_make_radius_fn(s_grid, radii, beta_fn),
        meta={"system": system.label, "perturbation": pert.label,
              "params": params, "beta_closed_form": beta_fn.closed_form},
    )
    factor = outer_contraction_factor(pert.c, pert.q, cap, params.D, delta)
    history: list[dict] = []
    strikes = 0
    prev_distance = None
    for iteration in range(1, cfg.max_outer + 1):
        new_graph = apply_phi_operator(graph, system, mu, nu, params, pert, cfg)
        distance = graph_metric_distance(graph.values, new_graph.values, graph)
        ratio = (distance / prev_distance) if prev_distance else None
        history.append({"iteration": iteration, "distance": distance, "ratio": ratio})
        graph = new_graph
        if distance <= cfg.outer_tol:
            return graph, history
        if ratio is not None and ratio > 1.1 * factor and distance > 10.0 * cfg.outer_tol:
            strikes += 1
            if strikes >= 2:
                raise ContractionError(
                    f"outer iteration contracted at ratio {ratio:.4f}, above the "
                    f"certified factor {factor:.4f} (+10%), twice in a row")
        else:
            strikes = 0
        prev_distance = distance
    raise ConvergenceError(
        f"outer iteration did not reach {cfg.outer_tol:g} in {cfg.max_outer} steps",
        history=history)


def nonlinear_flow(system: LinearSystem, pert: Perturbation, s: float, v0, tau: float,
                   h: float = 1e-3, blowup_factor: float = 1e8) -> tuple[float, np.ndarray]:
    """Integrate the full nonlinear system from state v0 at time s for duration tau.

    Closed-form systems step the transformed variable w = T(t0+dt', t0)^-1 v,
    whose derivative has no linear part, so the linear flow is reproduced
    exactly; matrix systems use plain 4th-order steps on v' = A v + f.
    Raises BlowupError when |v|_1 exceeds blowup_factor * max(1, |v0|_1).
    """
    if tau < 0.0:
        raise ValueError("tau must be nonnegative")
    v = np.asarray(v0, dtype=float).copy()
    if v.shape != (system.n,):
        raise ValueError(f"state must have shape ({system.n},)")
    limit = blowup_factor * max(1.0, float(np.abs(v).sum()))
    if tau == 0.0:
        return s, v
    n_steps = max(1, int(math.ceil(tau / h)))
    dt = tau / n_steps
    n_e = system.n_stable
    t = s
    closed = system.form == "closed_form"
    for _ in range(n_steps):
        if closed:
            def factors(offset: float) -> np.ndarray:
                out = np.empty(system.n)
                out[:n_e] = float(system.U(t + offset, t))
                out[n_e:] = float(system.V(t + offset, t))
                return out

            def deriv(offset: float, w: np.ndarray) -> np.ndarray:
                g = factors(offset)
                return pert.f(t + offset, g * w) / g

            k1 = deriv(0.0, v)
            k2 = deriv(0.5 * dt, v + 0.5 * dt * k1)
            k3 = deriv(0.5 * dt, v + 0.5 * dt * k2)
            k4 = deriv(dt, v + dt * k3)
            v = factors(dt) * (v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        else:
            def deriv_m(tt: float, vv: np.ndarray) -> np.ndarray:
                return system.A(tt) @ vv + pert.f(tt, vv)

            k1 = deriv_m(t, v)
            k2 = deriv_m(t + 0.5 * dt, v + 0.5 * dt * k1)
            k3 = deriv_m(t + 0.5 * dt, v + 0.5 * dt * k2)
            k4 = deriv_m(t + dt, v + dt * k3)
            v = v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += dt
        total = float(np.abs(v).sum())
        if not np.isfinite(total) or total > limit:
            raise BlowupError(f"trajectory left the trust region at t={t:g}", t_blowup=t)
    return t, v
