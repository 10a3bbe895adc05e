"""Growth-rate families and axiom checks.

A growth rate is an increasing function mu : [0, inf) -> [1, inf) with
mu(0) = 1 and mu(t) -> inf.  Four builtin families are provided::

    exponential   e^t
    polynomial    1 + t
    log_poly      (1 + t) * (1 + log(1 + t))^lam
    loglog_poly   (1 + t) * (1 + log(1 + t)) * (1 + log(1 + log(1 + t)))^lam

The log families admit a slower companion rate (selected with
``nu_companion=True``) used as the second leg of a nonuniform bound:
``1 + log(1 + t)`` for log_poly, ``1 + log(1 + log(1 + t))`` for loglog_poly.

Rates evaluate elementwise on numpy arrays.  ``log_eval`` gives log(mu(t))
without overflow, which downstream quadrature relies on for large t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .expr import compile_expression

__all__ = ["GrowthRate", "AxiomReport", "builtin_rate", "expression_rate",
           "check_growth_axioms", "BUILTIN_FAMILIES"]

BUILTIN_FAMILIES = ("exponential", "polynomial", "log_poly", "loglog_poly")


@dataclass(frozen=True)
class GrowthRate:
    """A scalar growth rate with optional derivative and log-scale evaluator."""

    label: str
    fn: Callable
    deriv: Callable | None = None
    log_fn: Callable | None = None
    family: str | None = None
    params: Mapping[str, float] = field(default_factory=dict)

    def __call__(self, t):
        return self.fn(t)

    def log_eval(self, t):
        """log(mu(t)), overflow-safe when a closed log form is known."""
        if self.log_fn is not None:
            return self.log_fn(t)
        return np.log(self.fn(t))

    @property
    def has_derivative(self) -> bool:
        return self.deriv is not None


def _l1(t):
    return 1.0 + np.log1p(t)


def _l2(t):
    return 1.0 + np.log(_l1(t))


def builtin_rate(family: str, lam: float | None = None, nu_companion: bool = False) -> GrowthRate:
    """Construct a builtin rate; see the module docstring for the families.

    ``lam`` is required (and must be positive) for the log families unless the
    companion rate is requested, where it plays no role.
    """
    if family not in BUILTIN_FAMILIES:
        raise ValueError(f"unknown rate family {family!r}; expected one of {BUILTIN_FAMILIES}")
    if family in ("exponential", "polynomial"):
        if nu_companion:
            pass  # these families are their own companion
        if family == "exponential":
            return GrowthRate("exponential", np.exp, deriv=np.exp, log_fn=lambda t: np.asarray(t, dtype=float) + 0.0,
                              family="exponential")
        return GrowthRate("polynomial", lambda t: 1.0 + np.asarray(t, dtype=float),
                          deriv=lambda t: np.ones_like(np.asarray(t, dtype=float)),
                          log_fn=np.log1p, family="polynomial")
    if family == "log_poly":
        if nu_companion:
            return GrowthRate("log_plain", _l1, deriv=lambda t: 1.0 / (1.0 + np.asarray(t, dtype=float)),
                              log_fn=lambda t: np.log(_l1(t)), family="log_plain")
        if lam is None or lam <= 0:
            raise ValueError("log_poly requires lam > 0")
        lam = float(lam)
        return GrowthRate(
            f"log_poly(lam={lam:g})",
            lambda t: (1.0 + np.asarray(t, dtype=float)) * _l1(t) ** lam,
            deriv=lambda t: _l1(t) ** (lam - 1.0) * (_l1(t) + lam),
            log_fn=lambda t: np.log1p(t) + lam * np.log(_l1(t)),
            family="log_poly", params={"lam": lam},
        )
    # loglog_poly
    if nu_companion:
        return GrowthRate(
            "loglog_plain", _l2,
            deriv=lambda t: 1.0 / ((1.0 + np.asarray(t, dtype=float)) * _l1(t)),
            log_fn=lambda t: np.log(_l2(t)), family="loglog_plain",
        )
    if lam is None or lam <= 0:
        raise ValueError("loglog_poly requires lam > 0")
    lam = float(lam)

    def _ll_deriv(t, lam=lam):
        l1 = _l1(t)
        l2 = _l2(t)
        return l1 * l2 ** lam + l2 ** lam + lam * l2 ** (lam - 1.0)

    return GrowthRate(
        f"loglog_poly(lam={lam:g})",
        lambda t: (1.0 + np.asarray(t, dtype=float)) * _l1(t) * _l2(t) ** lam,
        deriv=_ll_deriv,
        log_fn=lambda t: np.log1p(t) + np.log(_l1(t)) + lam * np.log(_l2(t)),
        family="loglog_poly", params={"lam": lam},
    )


def expression_rate(text: str) -> GrowthRate:
    """Compile a user-supplied rate formula in the variable ``t``.

    No derivative or closed log form is attached; axiom compliance is reported
    by :func:`check_growth_axioms`, not enforced here.
    """
    f = compile_expression(text, variables=("t",))
    return GrowthRate(text, lambda t: f(t=t))


@dataclass(frozen=True)
class AxiomReport:
    """Outcome of the three growth-rate axiom probes on a finite grid."""

    unit_at_zero: bool
    monotone_on_grid: bool
    diverges: bool
    unit_error: float
    worst_violation: float
    worst_pair: tuple[float, float] | None
    probe: tuple[float, float]
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.unit_at_zero and self.monotone_on_grid and self.diverges


def check_growth_axioms(rate: GrowthRate, grid, probe: tuple[float, float] = (1e12, 4.0),
                        atol: float = 0.0) -> AxiomReport:
    """Probe unit value at 0, monotonicity on ``grid``, and divergence.

    ``grid`` must be nonempty and start at 0.  Violations are reported, not
    raised.  Divergence is necessarily a heuristic on finite probes: the rate
    must reach probe[1] by t = probe[0] and keep strictly increasing along the
    decade ladder up to probe[0]; an overflow to inf counts as divergent.  The
    default threshold is low on purpose so the doubly-logarithmic companion
    rate (about 4.36 at 1e12) still registers as unbounded.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or grid[0] != 0.0:
        raise ValueError("grid must be nonempty and start at 0")
    notes: list[str] = []
    ladder = np.power(probe[0], np.linspace(0.25, 1.0, 4))
    with np.errstate(over="ignore", invalid="ignore"):
        vals = np.asarray(rate(grid), dtype=float)
        unit_error = abs(float(rate(0.0)) - 1.0)
        ladder_vals = np.asarray(rate(ladder), dtype=float)
    unit_ok = unit_error <= 1e-12
    if np.isnan(vals).any():
        notes.append("rate evaluated to NaN on the grid")
        monotone_ok = False
        worst = float("nan")
        pair = None
    else:
        drops = vals[:-1] - vals[1:]
        drops = np.where(np.isfinite(drops), drops, 0.0)
        worst = float(drops.max(initial=0.0))
        if worst > atol:
            i = int(np.argmax(drops))
            pair = (float(grid[i]), float(grid[i + 1]))
            monotone_ok = False
        else:
            pair = None
            monotone_ok = True
    if np.isnan(ladder_vals).any():
        diverges = False
        notes.append("divergence probe evaluated to NaN")
    elif np.isinf(ladder_vals).any():
        diverges = True
    else:
        steps_up = np.diff(ladder_vals) > 1e-12 * np.abs(ladder_vals[:-1])
        diverges = bool(ladder_vals[-1] >= probe[1] and steps_up.all())
    return AxiomReport(unit_ok, monotone_ok, diverges, unit_error, worst, pair,
                       (float(probe[0]), float(probe[1])), tuple(notes))
