"""Admissibility certificates: integrability, the radius function beta, delta_max.

Given rates (mu, nu), dichotomy constants (D, a, b, eps) and a perturbation
order q, the manifold construction is admissible when

* g(t) = mu(t)^(a-b) nu(t)^eps is eventually decreasing with g -> 0,
* I(s) = integral_s^inf mu(r)^(a q) nu(r)^eps dr converges,
* beta(s) = mu(s)^a / (nu(s)^(eps (1+1/q)) I(s)^(1/q)) and mu(s)^a/beta(s)
  are nonincreasing.

beta is computed from the tail integral by adaptive Simpson quadrature with a
certified truncation point; closed forms for the builtin rate pairs are kept
separately so they can serve as independent cross-checks and as cheap
extrapolators, never as the quadrature's own shortcut.

All rate evaluations run in log space so large-t probes degrade to underflow
instead of inf*0 artifacts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, TailBoundError
from .quadrature import adaptive_simpson
from .rates import GrowthRate

__all__ = ["LimitCheck", "check_limit_condition", "TailBoundInfo", "analytic_tail_bound",
           "tail_integral", "improper_rate_integral", "beta_value", "BetaFunction",
           "closed_form_beta", "fundamental_identity_residual", "MonotonicityCheck",
           "check_monotonicity", "delta_max", "delta_max_bounds", "default_capacity"]

_DEFAULT_LIMIT_GRID = (1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6)


@dataclass(frozen=True)
class LimitCheck:
    """Outcome of the mu^(a-b) nu^eps -> 0 probe on a geometric grid."""

    passed: bool
    inconclusive: bool
    eventually_decreasing: bool
    tail_drop_ok: bool
    samples: tuple[tuple[float, float], ...]


def check_limit_condition(mu: GrowthRate, nu: GrowthRate, a: float, b: float, eps: float,
                          t_grid: Sequence[float] | None = None) -> LimitCheck:
    """Probe that g(t) = mu(t)^(a-b) nu(t)^eps decays.

    Passes when g is eventually decreasing on the grid and the last sample has
    dropped below 1e-3 of the first.  Overflow artifacts (NaN in log space)
    make the check inconclusive rather than failed.
    """
    grid = np.asarray(_DEFAULT_LIMIT_GRID if t_grid is None else t_grid, dtype=float)
    if grid.size < 2:
        raise ValueError("limit-condition grid needs at least two points")
    with np.errstate(over="ignore", invalid="ignore"):
        log_g = np.asarray([(a - b) * float(mu.log_eval(t)) + eps * float(nu.log_eval(t))
                            for t in grid])
        samples = tuple((float(t), float(np.exp(lg)) if np.isfinite(lg) or lg == -np.inf
                         else float("nan"))
                        for t, lg in zip(grid, log_g))
    if np.isnan(log_g).any():
        return LimitCheck(False, True, False, False, samples)
    rises = np.nonzero(np.diff(log_g) > 0.0)[0]
    first_decreasing = int(rises[-1]) + 1 if rises.size else 0
    eventually_decreasing = first_decreasing <= log_g.size - 2
    tail_drop_ok = bool(log_g[-1] < log_g[0] + math.log(1e-3))
    return LimitCheck(eventually_decreasing and tail_drop_ok, False,
                      eventually_decreasing, tail_drop_ok, samples)


@dataclass(frozen=True)
class TailBoundInfo:
    """Certified upper bound for a rate-integral tail, or a divergence verdict."""

    fn: Callable[[float], float] | None
    exact: bool
    divergent: bool


def _l1(t):
    return 1.0 + np.log1p(t)


def _l2(t):
    return 1.0 + np.log(_l1(t))


_TRIPLES = {
    "polynomial": lambda r: (1.0, 0.0, 0.0),
    "log_poly": lambda r: (1.0, r.params["lam"], 0.0),
    "log_plain": lambda r: (0.0, 1.0, 0.0),
    "loglog_poly": lambda r: (1.0, 1.0, r.params["lam"]),
    "loglog_plain": lambda r: (0.0, 0.0, 1.0),
}


def _poly_log_tail(alpha: float, beta: float, gamma: float) -> TailBoundInfo | None:
    """Tail certificate for integrands (1+r)^alpha L1(r)^beta L2(r)^gamma.

    Uses exact antiderivatives where substitution applies and the chord
    comparison L(r)/L(T) <= (1+r)/(1+T) (valid for r >= T since L >= 1 and L
    has slope at most 1/(1+r)) to absorb positive log exponents otherwise.
    """
    if alpha < -1.0:
        shift = max(beta, 0.0) + max(gamma, 0.0)
        edge = alpha + shift + 1.0
        if edge >= 0.0:
            return None
        exact = beta == 0.0 and gamma == 0.0
        return TailBoundInfo(
            lambda T: (1.0 + T) ** (alpha + 1.0) * _l1(T) ** beta * _l2(T) ** gamma / abs(edge),
            exact, False)
    if alpha == -1.0:
        if gamma == 0.0:
            if beta < -1.0:
                return TailBoundInfo(lambda T: _l1(T) ** (beta + 1.0) / abs(beta + 1.0), True, False)
            return TailBoundInfo(None, False, True)
        if beta == -1.0:
            if gamma < -1.0:
                return TailBoundInfo(lambda T: _l2(T) ** (gamma + 1.0) / abs(gamma + 1.0), True, False)
            return TailBoundInfo(None, False, True)
        if beta < -1.0:
            if gamma <= 0.0:
                return TailBoundInfo(
                    lambda T: _l2(T) ** gamma * _l1(T) ** (beta + 1.0) / abs(beta + 1.0),
                    False, False)
            edge = beta + gamma + 1.0
            if edge >= 0.0:
                return None
            return TailBoundInfo(
                lambda T: _l2(T) ** gamma * _l1(T) ** (beta + 1.0) / abs(edge), False, False)
        return TailBoundInfo(None, False, True)
    return TailBoundInfo(None, False, True)


def analytic_tail_bound(mu: GrowthRate, nu: GrowthRate, p: float,
                        eps: float) -> TailBoundInfo | None:
    """Tail certificate for integral_T^inf mu(r)^p nu(r)^eps dr, if the family pair admits one.

    Returns None for rate pairs outside the builtin catalogue (the caller then
    falls back to the doubling heuristic).
    """
    mu_exp = mu.family == "exponential"
    nu_exp = nu.family == "exponential"
    if mu_exp and nu_exp:
        rho = p + eps
        if rho >= 0.0:
            return TailBoundInfo(None, False, True)
        return TailBoundInfo(lambda T: math.exp(rho * T) / abs(rho), True, False)
    if mu_exp:
        if p >= 0.0:
            return TailBoundInfo(None, False, True)
        if nu.family not in _TRIPLES or not nu.has_derivative:
            return None

        def bound(T: float) -> float:
            # log nu is concave for the slow families, so its slope at T bounds
            # the slope beyond T:  nu(r)^eps <= nu(T)^eps exp(eps k (r - T)).
            k = eps * float(nu.deriv(T)) / float(nu(T))
            rho = p + k
            if rho >= 0.0:
                return math.inf
            return math.exp(eps * float(nu.log_eval(T)) + p * T) / abs(rho)

        return TailBoundInfo(bound, False, False)
    if mu.family not in _TRIPLES:
        return None
    if nu_exp:
        if eps > 0.0:
            return TailBoundInfo(None, False, True)
        nu_triple = (0.0, 0.0, 0.0)
    elif nu.family in _TRIPLES:
        nu_triple = _TRIPLES[nu.family](nu)
    else:
        return None
    mu_triple = _TRIPLES[mu.family](mu)
    alpha = p * mu_triple[0] + eps * nu_triple[0]
    beta = p * mu_triple[1] + eps * nu_triple[1]
    gamma = p * mu_triple[2] + eps * nu_triple[2]
    return _poly_log_tail(alpha, beta, gamma)


def improper_rate_integral(mu: GrowthRate, nu: GrowthRate, p: float, eps: float, s: float,
                           rel_tol: float = 1e-8, max_span: float = 1e30) -> float:
    """integral_s^inf mu(r)^p nu(r)^eps dr by windowed adaptive Simpson.

    Windows double in span from s; truncation is certified by the analytic
    tail bound when the family pair has one, otherwise by geometric
    extrapolation of the window masses (conservative for power-law decay,
    whose doubling-window masses shrink by an asymptotically constant ratio).
    When the analytic tail is exact (not just an upper bound) and has fallen
    below 1e-3 of the accumulated mass, it is added instead of walked down to
    rel_tol, which keeps slowly decaying (logarithmic) tails reachable while
    leaving >= 99.9% of the value to genuine quadrature.
    Raises DivergenceError when window masses refuse to decay and
    TailBoundError when no truncation can be certified within ``max_span``.
    """
    def integrand(r: float) -> float:
        return math.exp(p * float(mu.log_eval(r)) + eps * float(nu.log_eval(r)))

    info = analytic_tail_bound(mu, nu, p, eps)
    if info is not None and info.divergent:
        raise DivergenceError(
            f"integral of {mu.label}^{p:g} * {nu.label}^{eps:g} diverges (family analysis)")
    total = 0.0
    deltas: list[float] = []
    lo = s
    hi = s + 1.0
    w0 = integrand(s)
    if w0 == 0.0 and integrand(s + 1.0) == 0.0 and integrand(s + 100.0) == 0.0:
        return 0.0  # integrand below float range throughout
    scale = max(w0, integrand(hi)) * 1.0
    first_ref = scale * (hi - lo)
    while True:
        ref = total if total > 0.0 else first_ref
        tol = 0.01 * rel_tol * ref
        delta = adaptive_simpson(integrand, lo, hi, max(tol, 5e-324))
        if not math.isfinite(delta):
            raise DivergenceError(
                f"window [{lo:g}, {hi:g}] mass overflows the float range")
        total += delta
        deltas.append(delta)
        if info is not None and info.fn is not None and total > 0.0:
            bound = info.fn(hi)
            if math.isfinite(bound):
                if bound <= 0.2 * rel_tol * total:
                    return total
                if info.exact and len(deltas) >= 2 and (
                        bound <= 1e-3 * total
                        or (hi - s >= 1e10 and bound <= total)):
                    # doubly-log tails never reach the 1e-3 fraction; past a
                    # huge span settle for quadrature >= half the mass
                    return total + bound
        elif info is None and len(deltas) >= 2 and total > 0.0:
            if deltas[-1] < 0.1 * rel_tol * total and deltas[-2] > 0.0:
                theta = deltas[-1] / deltas[-2]
                if theta < 1.0:
                    tail_est = deltas[-1] * theta / (1.0 - theta)
                    if tail_est <= rel_tol * total:
                        return total
        if (len(deltas) >= 3 and deltas[-1] > 4.0 * deltas[-2] > 0.0
                and 2.0 * deltas[-1] > total):
            raise DivergenceError("window masses are growing; partial integrals not Cauchy")
        if hi - s > 1e12 and total > 0.0 and deltas[-1] > 1e-3 * total:
            raise DivergenceError(
                f"window mass still {deltas[-1] / total:.2e} of the total at span {hi - s:.1e}; "
                "partial integrals not Cauchy")
        if hi - s > max_span:
            raise TailBoundError(
                f"no truncation certifying rel_tol={rel_tol:g} within span {max_span:g}")
        lo = hi
        hi = s + 2.0 * (hi - s)


def tail_integral(mu: GrowthRate, nu: GrowthRate, a: float, eps: float, q: float, s: float,
                  rel_tol: float = 1e-8) -> float:
    """I(s) = integral_s^inf mu(r)^(a q) nu(r)^eps dr (convergence checked, not assumed)."""
    return improper_rate_integral(mu, nu, a * q, eps, s, rel_tol)


def beta_value(mu: GrowthRate, nu: GrowthRate, a: float, eps: float, q: float, s: float,
               rel_tol: float = 1e-8) -> float:
    """beta(s) = mu(s)^a / (nu(s)^(eps(1+1/q)) I(s)^(1/q)), via the quadrature I(s)."""
    integral = tail_integral(mu, nu, a, eps, q, s, rel_tol)
    log_beta = (a * float(mu.log_eval(s)) - eps * (1.0 + 1.0 / q) * float(nu.log_eval(s))
                - math.log(integral) / q)
    return math.exp(log_beta)


def closed_form_beta(mu: GrowthRate, nu: GrowthRate, a: float, eps: float,
                     q: float) -> tuple[str, Callable[[float], float]] | None:
    """Closed-form beta for the builtin rate pairs, when the constants allow one.

    exponential pair (aq + eps < 0):
        beta(s) = |aq + eps|^(1/q) * exp(-eps (1 + 2/q) s)
    polynomial pair (aq + eps + 1 < 0):
        beta(s) = |aq + eps + 1|^(1/q) * (1+s)^(-(eps(1+2/q) + 1/q))
    log_poly(lam) with plain-log companion (aq = -1, lam - eps - 1 > 0):
        beta(s) = (lam-eps-1)^(1/q) * (1+s)^(-1/q) * L1(s)^(-(eps(1+2/q)+1/q))
    loglog_poly(lam) with plain-loglog companion (aq = -1, lam - eps - 1 > 0):
        beta(s) = (lam-eps-1)^(1/q) * ((1+s) L1(s))^(-1/q) * L2(s)^(-(eps(1+2/q)+1/q))
    """
    aq = a * q
    if mu.family == "exponential" and nu.family == "exponential":
        if aq + eps >= 0.0:
            return None
        coef = abs(aq + eps) ** (1.0 / q)
        rate = eps * (1.0 + 2.0 / q)
        return "exponential", lambda s: coef * np.exp(-rate * np.asarray(s, dtype=float))
    if mu.family == "polynomial" and nu.family == "polynomial":
        if aq + eps + 1.0 >= 0.0:
            return None
        coef = abs(aq + eps + 1.0) ** (1.0 / q)
        expo = eps * (1.0 + 2.0 / q) + 1.0 / q
        return "polynomial", lambda s: coef * (1.0 + s) ** (-expo)
    if mu.family == "log_poly" and nu.family == "log_plain":
        lam = mu.params["lam"]
        if aq != -1.0 or lam - eps - 1.0 <= 0.0:
            return None
        coef = (lam - eps - 1.0) ** (1.0 / q)
        expo = eps * (1.0 + 2.0 / q) + 1.0 / q
        return "log_poly", lambda s: coef * (1.0 + s) ** (-1.0 / q) * _l1(s) ** (-expo)
    if mu.family == "loglog_poly" and nu.family == "loglog_plain":
        lam = mu.params["lam"]
        if aq != -1.0 or lam - eps - 1.0 <= 0.0:
            return None
        coef = (lam - eps - 1.0) ** (1.0 / q)
        expo = eps * (1.0 + 2.0 / q) + 1.0 / q
        return "loglog_poly", lambda s: (coef * ((1.0 + s) * _l1(s)) ** (-1.0 / q)
                                         * _l2(s) ** (-expo))
    return None


class BetaFunction:
    """Cached radius function beta and its companion beta_tilde = beta * nu^-eps.

    Values come from the quadrature route.  ``closed_form`` is a label naming
    the matching analytic formula when one exists (kept for cross-checks and
    horizon extrapolation, not used to produce values here).
    """

    def __init__(self, mu: GrowthRate, nu: GrowthRate, a: float, eps: float, q: float,
                 rel_tol: float = 1e-8):
        self.mu = mu
        self.nu = nu
        self.a = a
        self.eps = eps
        self.q = q
        self.rel_tol = rel_tol
        cf = closed_form_beta(mu, nu, a, eps, q)
        self.closed_form = cf[0] if cf else None
        self._closed_fn = cf[1] if cf else None
        self._cache: dict[float, float] = {}

    def beta(self, s: float) -> float:
        s = float(s)
        if s not in self._cache:
            self._cache[s] = beta_value(self.mu, self.nu, self.a, self.eps, self.q, s,
                                        self.rel_tol)
        return self._cache[s]

    def beta_tilde(self, s: float) -> float:
        return self.beta(s) * math.exp(-self.eps * float(self.nu.log_eval(s)))

    def closed_form_value(self, s: float) -> float | None:
        return self._closed_fn(s) if self._closed_fn is not None else None

    def __call__(self, s: float) -> float:
        return self.beta(s)


def fundamental_identity_residual(mu: GrowthRate, nu: GrowthRate, a: float, eps: float,
                                  q: float, s: float, rel_tol: float = 1e-8) -> float:
    """|mu(s)^(-aq) nu(s)^(eps(q+1)) beta(s)^q I(s) - 1|.

    The relation is algebraically exact, so with beta taken from the closed
    form (when the rate pair has one) the residual isolates the quadrature
    error of I(s).  Without a closed form both factors share the quadrature
    value and the residual only reflects round-off.
    """
    cf = closed_form_beta(mu, nu, a, eps, q)
    if cf is not None:
        beta_s = cf[1](s)
    else:
        beta_s = beta_value(mu, nu, a, eps, q, s, rel_tol)
    integral = tail_integral(mu, nu, a, eps, q, s, rel_tol)
    log_term = (-a * q * float(mu.log_eval(s)) + eps * (q + 1.0) * float(nu.log_eval(s))
                + q * math.log(beta_s) + math.log(integral))
    return abs(math.expm1(log_term))


@dataclass(frozen=True)
class MonotonicityCheck:
    """Nonincreasing probes for beta and mu^a/beta on a grid (quadrature values)."""

    beta_nonincreasing: bool
    ratio_nonincreasing: bool
    worst_beta_uptick: float
    worst_ratio_uptick: float
    samples: tuple[tuple[float, float, float], ...]  # (s, beta, mu^a/beta)


def check_monotonicity(mu: GrowthRate, nu: GrowthRate, a: float, eps: float, q: float,
                       grid: Sequence[float], rel_tol: float = 1e-8,
                       slack: float = 1e-9) -> MonotonicityCheck:
    """Check that beta and mu^a/beta are nonincreasing along ``grid``.

    ``slack`` absorbs relative quadrature noise between neighboring values.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("monotonicity grid must be increasing with at least two points")
    betas = np.array([beta_value(mu, nu, a, eps, q, float(s), rel_tol) for s in grid])
    ratios = np.array([math.exp(a * float(mu.log_eval(s)) - math.log(bv))
                       for s, bv in zip(grid, betas)])

    def worst_uptick(vals: np.ndarray) -> float:
        rel = (vals[1:] - vals[:-1]) / vals[:-1]
        return float(rel.max(initial=-math.inf))

    wb = worst_uptick(betas)
    wr = worst_uptick(ratios)
    samples = tuple((float(s), float(bv), float(rv))
                    for s, bv, rv in zip(grid, betas, ratios))
    return MonotonicityCheck(wb <= slack, wr <= slack, wb, wr, samples)


def delta_max_bounds(c: float, q: float, C: float, D: float) -> dict[str, float]:
    """The five radius bounds whose minimum certifies the fixed-point scheme.

    Keys name the estimate each inequality protects; ``ball_closure`` is the
    only non-strict one.
    """
    if not q >= 1.0:
        raise ValueError(f"q must be >= 1, got {q}")
    if not D >= 1.0:
        raise ValueError(f"D must be >= 1, got {D}")
    if not C > D:
        raise ValueError(f"capacity C must exceed D, got C={C}, D={D}")
    if c < 0.0:
        raise ValueError(f"perturbation constant c must be >= 0, got {c}")
    if c == 0.0:
        inf = math.inf
        return dict(ball_closure=inf, inner_contraction=inf, outer_margin=inf,
                    outer_contraction=inf, graph_lipschitz_a=inf, graph_lipschitz_b=inf)
    two_q = 2.0 ** q
    three_q = 3.0 ** q
    return {
        "ball_closure": ((C - D) / (two_q * 3.0 * three_q * c * C ** (q + 1.0) * D)) ** (1.0 / q),
        "inner_contraction": (1.0 / (two_q * 3.0 * three_q * c * C ** q * D)) ** (1.0 / q),
        "outer_margin": (1.0 / (4.0 * two_q * three_q * c * C ** q * D)) ** (1.0 / q),
        "outer_contraction": (1.0 / (4.0 * two_q * three_q * c * C ** (q + 1.0) * D)) ** (1.0 / q),
        "graph_lipschitz_a": (1.0 / (2.0 * two_q * 3.0 * three_q * c * C ** q * D)) ** (1.0 / q),
        "graph_lipschitz_b": (1.0 / (4.0 * two_q * three_q * c * C ** (q + 1.0) * D)) ** (1.0 / q),
    }


def delta_max(c: float, q: float, C: float, D: float, delta_cap: float = 1.0) -> float:
    """Largest certified graph radius for perturbation constants (c, q) and capacity C.

    Exact minimum of the five proof bounds, with a 0.99 safety factor on the
    strict ones (``ball_closure`` is non-strict and taken as is).  Degenerate
    c = 0 returns ``delta_cap``.
    """
    bounds = delta_max_bounds(c, q, C, D)
    strict = min(v for k, v in bounds.items() if k != "ball_closure")
    if math.isinf(strict):
        return delta_cap
    return min(bounds["ball_closure"], 0.99 * strict, delta_cap)


def default_capacity(D: float) -> float:
    """Default decay-capacity constant C = 2D (any C > D certifies; 2D leaves margin)."""
    return 2.0 * D
