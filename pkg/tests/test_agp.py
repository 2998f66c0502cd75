import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize as scipy_minimize

from acdrive.agp import (ActionQuadraticForm, CoefficientFit, FitQualityWarning, SingularFormWarning,
                         ansatz_series, assemble_quadratic_form, fit_rational, minimize,
                         optimize_gamma_table, quadratic_form_from_samples)
from acdrive.poly import PhasePolynomial as P
from acdrive.systems import SystemSpec, build_hamiltonian, oscillator_shell_ensemble


def test_minimize_matches_grid_search():
    form = ActionQuadraticForm.from_two_parameter(0.0, -2.0, 0.0, 1.0, 1.0, 0.0)
    np.testing.assert_allclose(minimize(form), [1.0, 0.0], atol=1e-14)
    g = np.linspace(-3, 3, 601)
    G1, G2 = np.meshgrid(g, g, indexing="ij")
    S = -2 * G1 + G1 ** 2 + G2 ** 2
    i, j = np.unravel_index(np.argmin(S), S.shape)
    assert (g[i], g[j]) == pytest.approx((1.0, 0.0), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 4))
def test_minimize_random_spd(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    A = B @ B.T + 0.5 * np.eye(n)
    b = rng.normal(size=n)
    form = ActionQuadraticForm(1.0, b, A)
    got = minimize(form)
    np.testing.assert_allclose(got, np.linalg.solve(A, -0.5 * b), rtol=1e-8, atol=1e-10)
    ref = scipy_minimize(form, np.zeros(n), method="BFGS", options={"gtol": 1e-10}).x
    np.testing.assert_allclose(got, ref, atol=1e-5)


def test_singular_form_warns():
    form = ActionQuadraticForm(1.0, np.array([1.0, 1.0]), np.ones((2, 2)))
    with pytest.warns(SingularFormWarning):
        g = minimize(form)
    np.testing.assert_allclose(g, [-0.25, -0.25])


def test_form_from_samples_equals_variance():
    rng = np.random.default_rng(2)
    g00 = rng.normal(size=200)
    gj = rng.normal(size=(2, 200)) + 0.3 * g00
    w = rng.uniform(size=200)
    w /= w.sum()
    form = quadratic_form_from_samples(g00, gj, w)
    for gamma in rng.normal(size=(5, 2)):
        s = g00 + gamma @ gj
        assert form(gamma) == pytest.approx(w @ (s - w @ s) ** 2, rel=1e-12)
    shifted = quadratic_form_from_samples(g00 + 5.0, gj - 2.0, w)
    assert shifted.c == pytest.approx(form.c)
    np.testing.assert_allclose(shifted.A, form.A)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_nested_minimum_is_monotone(seed):
    rng = np.random.default_rng(seed)
    g00 = rng.normal(size=50)
    gj = rng.normal(size=(2, 50))
    w = np.full(50, 1 / 50)
    f2 = quadratic_form_from_samples(g00, gj, w)
    f1 = quadratic_form_from_samples(g00, gj[:1], w)
    assert f2(minimize(f2)) <= f1(minimize(f1)) + 1e-12


def test_harmonic_shell_exact_agp():
    H0 = build_hamiltonian(SystemSpec.oscillator())
    ens = oscillator_shell_ensemble(1.0, 64, seed=0)
    terms = [P.monomial(1, [3], [1]), P.monomial(1, [1], [3])]
    form = assemble_quadratic_form(ens, H0.at(0.0), terms)
    g = minimize(form)
    np.testing.assert_allclose(g, [-5 / 32, -3 / 32], atol=1e-12)
    assert form(g) < 1e-20


def test_optimized_table_monotone_in_order():
    spec = SystemSpec.fput(2)
    grid = np.linspace(0, 1, 6)
    t1 = optimize_gamma_table(spec, M=32, ansatz_order=1, beta_grid=grid, tau_ref=50.0)
    t2 = optimize_gamma_table(spec, M=32, ansatz_order=2, beta_grid=grid, tau_ref=50.0)
    assert np.all(t2.actions <= t1.actions * (1 + 1e-9) + 1e-18)
    assert np.all(t1.actions <= t1.bare_actions)


def test_ansatz_series_bases():
    osc = SystemSpec.oscillator()
    assert ansatz_series(osc, 2)[1][0] == P.monomial(1, [1], [3])
    nested = ansatz_series(osc, 1, basis="nested")
    assert len(nested) == 1
    with pytest.raises(ValueError):
        ansatz_series(SystemSpec.fput(2), 1, basis="monomial")
    with pytest.raises(ValueError):
        ansatz_series(osc, 3)


def _table(fn, n=101):
    b = np.linspace(0, 1, n)
    return list(zip(b, fn(b)))


def test_rational_round_trip():
    f = CoefficientFit([-0.15, 0.4, -0.2, 0.05], [1.5, 0.3, 0.1])
    fit = fit_rational(_table(f.rational))
    b = np.linspace(0, 1, 257)
    np.testing.assert_allclose(fit(b), f(b), atol=1e-6)
    assert fit.accepted


def test_constant_table():
    fit = fit_rational(_table(lambda b: np.full_like(b, -0.3)))
    np.testing.assert_allclose(fit(np.linspace(0, 1, 9)), -0.3, atol=1e-10)


def test_denominator_stays_non_negative():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FitQualityWarning)
        fit = fit_rational(_table(lambda b: 1.0 / (1.0 - 0.5 * b)))
    assert np.all(fit.c >= 0)
    with pytest.raises(ValueError):
        CoefficientFit([1.0], [-0.1])


def test_fit_scale_covariance():
    fn = lambda b: -0.1 + 0.3 * b / (1 + 2 * b)
    f1 = fit_rational(_table(fn))
    f3 = fit_rational(_table(lambda b: 3 * fn(b)))
    b = np.linspace(0, 1, 33)
    np.testing.assert_allclose(f3(b), 3 * f1(b), atol=1e-8)


def test_bad_fit_falls_back_to_table():
    table = _table(lambda b: np.where(b < 0.5, 0.0, 1.0))
    with pytest.warns(FitQualityWarning):
        fit = fit_rational(table, gate=0.02)
    assert not fit.accepted
    xs = np.array([t[0] for t in table])
    np.testing.assert_allclose(fit(xs), [t[1] for t in table], atol=1e-12)


def test_perturbed_and_serialized():
    fit = CoefficientFit([0.1, -0.4, 0.2, 0.0], [0.5, 0.0, 0.0])
    pert = fit.perturbed(0.1)
    b = np.linspace(0, 1, 5)
    np.testing.assert_allclose(pert(b) - fit(b), -0.04 * b / fit.denominator(b), atol=1e-14)
    assert fit.perturbed(0.0)(0.7) == fit(0.7)
    back = CoefficientFit.from_dict(fit.to_dict())
    np.testing.assert_array_equal(back.b, fit.b)
    np.testing.assert_array_equal(back.c, fit.c)


def test_fit_needs_enough_points():
    with pytest.raises(ValueError):
        fit_rational([(0.0, 1.0), (1.0, 2.0)])
