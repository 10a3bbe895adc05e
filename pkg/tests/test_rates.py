import math

import numpy as np
import pytest

from stablemanifold.rates import (BUILTIN_FAMILIES, builtin_rate, check_growth_axioms,
                                  expression_rate)

ALL_BUILTINS = [
    builtin_rate("exponential"),
    builtin_rate("polynomial"),
    builtin_rate("log_poly", lam=4.0),
    builtin_rate("log_poly", nu_companion=True),
    builtin_rate("loglog_poly", lam=2.0),
    builtin_rate("loglog_poly", nu_companion=True),
]


def test_log_poly_point_value():
    # at t = e - 1 the inner log is 1, so the value is e * 2^lam
    r = builtin_rate("log_poly", lam=4.0)
    assert r(math.e - 1.0) == pytest.approx(math.e * 16.0, rel=1e-14)


def test_loglog_poly_point_value():
    # t chosen so 1 + log(1+t) = e, hence the outer loglog factor is 2^lam
    r = builtin_rate("loglog_poly", lam=2.0)
    t = math.exp(math.e - 1.0) - 1.0
    assert r(t) == pytest.approx(math.exp(math.e - 1.0) * math.e * 4.0, rel=1e-14)


def test_companion_values():
    log_plain = builtin_rate("log_poly", nu_companion=True)
    loglog_plain = builtin_rate("loglog_poly", nu_companion=True)
    assert log_plain(math.e - 1.0) == pytest.approx(2.0, rel=1e-14)
    assert loglog_plain(math.exp(math.e - 1.0) - 1.0) == pytest.approx(2.0, rel=1e-14)


@pytest.mark.parametrize("rate", ALL_BUILTINS, ids=lambda r: r.label)
def test_unit_value_at_zero(rate):
    assert float(rate(0.0)) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("rate", ALL_BUILTINS, ids=lambda r: r.label)
def test_log_eval_consistency(rate):
    for t in (0.0, 0.5, 3.0, 20.0):
        assert float(rate.log_eval(t)) == pytest.approx(math.log(float(rate(t))),
                                                        abs=1e-12)


def test_log_eval_survives_overflow():
    r = builtin_rate("exponential")
    with np.errstate(over="ignore"):
        assert math.isinf(float(r(1000.0)))
    assert float(r.log_eval(1000.0)) == 1000.0


@pytest.mark.parametrize("rate", ALL_BUILTINS, ids=lambda r: r.label)
def test_derivative_matches_finite_difference(rate):
    assert rate.has_derivative
    h = 1e-6
    for t in (0.1, 1.0, 7.0):
        fd = (float(rate(t + h)) - float(rate(t - h))) / (2.0 * h)
        assert float(rate.deriv(t)) == pytest.approx(fd, rel=1e-7)


@pytest.mark.parametrize("rate", ALL_BUILTINS, ids=lambda r: r.label)
def test_builtin_axioms_pass(rate):
    rep = check_growth_axioms(rate, np.linspace(0.0, 50.0, 201))
    assert rep.passed, rep


def test_unknown_family_rejected():
    with pytest.raises(ValueError, match="unknown rate family"):
        builtin_rate("quadratic")


@pytest.mark.parametrize("family", ["log_poly", "loglog_poly"])
def test_log_families_require_positive_lam(family):
    with pytest.raises(ValueError, match="lam > 0"):
        builtin_rate(family)
    with pytest.raises(ValueError, match="lam > 0"):
        builtin_rate(family, lam=-1.0)


def test_expression_rate_compiles_and_evaluates():
    r = expression_rate("1 + t")
    assert float(r(3.0)) == 4.0
    assert not r.has_derivative
    rep = check_growth_axioms(r, np.linspace(0.0, 50.0, 101))
    assert rep.passed


def test_axioms_flag_non_monotone_rate():
    r = expression_rate("1 + t - t*t")
    rep = check_growth_axioms(r, np.linspace(0.0, 10.0, 101))
    assert not rep.passed
    assert not rep.monotone_on_grid
    assert rep.worst_pair is not None
    assert rep.worst_violation > 0.0


def test_axioms_flag_bounded_rate():
    r = expression_rate("2 - exp(-t)")
    rep = check_growth_axioms(r, np.linspace(0.0, 10.0, 101))
    assert rep.monotone_on_grid
    assert not rep.diverges
    assert not rep.passed


def test_axioms_flag_wrong_value_at_zero():
    r = expression_rate("2 + t")
    rep = check_growth_axioms(r, np.linspace(0.0, 10.0, 11))
    assert not rep.unit_at_zero
    assert rep.unit_error == pytest.approx(1.0)


def test_axioms_note_nan_values():
    r = expression_rate("log(t - 5)")
    with np.errstate(invalid="ignore", divide="ignore"):
        rep = check_growth_axioms(r, np.linspace(0.0, 10.0, 21))
    assert not rep.passed
    assert any("NaN" in n for n in rep.notes)


def test_axiom_grid_must_start_at_zero():
    r = builtin_rate("exponential")
    with pytest.raises(ValueError, match="start at 0"):
        check_growth_axioms(r, np.linspace(1.0, 10.0, 5))
    with pytest.raises(ValueError, match="start at 0"):
        check_growth_axioms(r, np.array([]))


def test_slow_companions_still_register_divergent():
    # doubly-logarithmic growth is unbounded even though it is ~4.4 at t = 1e12
    r = builtin_rate("loglog_poly", nu_companion=True)
    rep = check_growth_axioms(r, np.linspace(0.0, 50.0, 51))
    assert rep.diverges


def test_builtin_families_tuple():
    assert BUILTIN_FAMILIES == ("exponential", "polynomial", "log_poly", "loglog_poly")
