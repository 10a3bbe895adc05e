"""Simpson-rule quadrature: adaptive on intervals, composite/cumulative on samples.

The adaptive rule is the classic bisection scheme with Richardson error control
(accept when the two-panel refinement moves the estimate by less than 15*tol).
The cumulative rule returns prefix integrals at every sample point of a uniform
grid; odd-index prefixes use the half-panel three-point rule so the whole table
retains O(h^4) accuracy.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["adaptive_simpson", "composite_simpson", "cumulative_simpson"]


def _adapt(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = f(lm)
    frm = f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    # non-finite estimates cannot improve under bisection; return them as the
    # honest (overflowed) answer instead of recursing exponentially
    if depth <= 0 or not np.isfinite(delta) or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return _adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + _adapt(
        f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1
    )


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float,
                     max_depth: int = 52) -> float:
    """Integrate scalar ``f`` over [a, b] to absolute tolerance ``tol``."""
    if b == a:
        return 0.0
    fa = f(a)
    fb = f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _adapt(f, a, b, fa, fm, fb, whole, tol, max_depth)


def composite_simpson(y: np.ndarray, h: float):
    """Integral of uniformly sampled ``y`` (leading axis) with spacing ``h``."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0] - 1
    if n < 1:
        return np.zeros(y.shape[1:]) if y.ndim > 1 else 0.0
    if n == 1:
        return 0.5 * h * (y[0] + y[1])
    if n % 2 == 0:
        return (h / 3.0) * (y[0] + 4.0 * y[1:-1:2].sum(axis=0) + 2.0 * y[2:-2:2].sum(axis=0) + y[-1])
    head = composite_simpson(y[:-1], h)
    tail = (h / 12.0) * (-y[-3] + 8.0 * y[-2] + 5.0 * y[-1])
    return head + tail


def cumulative_simpson(y: np.ndarray, h: float) -> np.ndarray:
    """Prefix integrals of uniformly sampled ``y`` at every sample point.

    ``y`` may be 1-D or have trailing component axes; integration runs along
    axis 0.  out[j] approximates the integral from sample 0 to sample j.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0] - 1
    out = np.zeros_like(y)
    if n < 1:
        return out
    if n == 1:
        out[1] = 0.5 * h * (y[0] + y[1])
        return out
    pair = (h / 3.0) * (y[0:-2:2] + 4.0 * y[1:-1:2] + y[2::2])
    out[2::2] = np.cumsum(pair, axis=0)
    # odd prefixes: half-panel rule using the right neighbor when it exists
    odd = np.arange(1, n + 1, 2)
    jr = odd[odd < n]
    out[jr] = out[jr - 1] + (h / 12.0) * (5.0 * y[jr - 1] + 8.0 * y[jr] - y[jr + 1])
    if n % 2 == 1:
        out[n] = out[n - 1] + (h / 12.0) * (-y[n - 2] + 8.0 * y[n - 1] + 5.0 * y[n])
    return out
