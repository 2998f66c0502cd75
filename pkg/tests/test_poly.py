import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acdrive.poly import (PhasePolynomial as P, PolynomialFamily, VectorEvaluator, add,
                          compile_evaluator, gradient_vector_evaluator, multiply,
                          nested_bracket_ansatz, nested_bracket_expansion, partial_derivative,
                          poisson_bracket)
from acdrive.systems import SystemSpec, build_hamiltonian


def osc_H(beta=0.0):
    return build_hamiltonian(SystemSpec.oscillator()).at(beta)


def test_add_merges_and_cancels():
    a = P.from_terms(1, {(1, 0): 2.0, (0, 1): 1.0})
    b = P.from_terms(1, {(1, 0): -2.0, (0, 2): 3.0})
    assert add(a, b) == P.from_terms(1, {(0, 1): 1.0, (0, 2): 3.0})
    assert (a - a).is_zero()
    assert P.from_terms(1, [(1.0, (2, 0)), (2.5, (2, 0))]) == P.monomial(1, [2], coefficient=3.5)


def test_multiply_and_power():
    x, p = P.q(1, 0), P.p(1, 0)
    assert multiply(x + p, x - p) == x ** 2 - p ** 2
    assert (x * 2.0 + 1.0) ** 0 == P.constant(1, 1.0)
    assert (x + p) ** 3 == x ** 3 + 3.0 * x ** 2 * p + 3.0 * x * p ** 2 + p ** 3


def test_partial_derivative():
    f = P.monomial(2, [3, 1], [0, 2], coefficient=2.0)
    assert partial_derivative(f, 0) == P.monomial(2, [2, 1], [0, 2], coefficient=6.0)
    assert partial_derivative(f, 3) == P.monomial(2, [3, 1], [0, 1], coefficient=4.0)
    assert partial_derivative(f, 2).is_zero()
    with pytest.raises(IndexError):
        partial_derivative(f, 4)


def test_canonical_pair():
    n = 3
    for i in range(n):
        for j in range(n):
            br = poisson_bracket(P.q(n, i), P.p(n, j))
            assert br == (P.constant(n, 1.0) if i == j else P(n))


def test_x3p_bracket_with_quartic_hamiltonian():
    beta = 0.7
    x3p = P.monomial(1, [3], [1])
    # {x^3 p, p^2/2 + x^2/2 + beta x^4/4} = 3 x^2 p^2 - x^4 - beta x^6
    expected = P.from_terms(1, {(2, 2): 3.0, (4, 0): -1.0, (6, 0): -beta})
    assert poisson_bracket(x3p, osc_H(beta)).allclose(expected, atol=1e-14)
    xp3 = P.monomial(1, [1], [3])
    assert poisson_bracket(xp3, osc_H(0.0)) == P.from_terms(1, {(0, 4): 1.0, (2, 2): -3.0})


def _fd_bracket(fa, fb, z, h=1e-5):
    n = z.size // 2
    grads = []
    for f in (fa, fb):
        g = np.empty(2 * n)
        for i in range(2 * n):
            e = np.zeros(2 * n)
            e[i] = h
            g[i] = (f(z + e) - f(z - e)) / (2 * h)
        grads.append(g)
    ga, gb = grads
    return float(ga[:n] @ gb[n:] - ga[n:] @ gb[:n])


def test_bracket_matches_finite_differences():
    rng = np.random.default_rng(5)
    spec = SystemSpec.fput(2)
    H = build_hamiltonian(spec).at(0.8)
    A = P.from_terms(2, {(1, 0, 1, 0): 1.0, (2, 1, 0, 1): -0.5, (0, 0, 0, 3): 0.25})
    br = compile_evaluator(poisson_bracket(A, H))
    fa, fh = compile_evaluator(A), compile_evaluator(H)
    for z in rng.uniform(-1, 1, size=(100, 4)):
        assert br(z) == pytest.approx(_fd_bracket(fa, fh, z), abs=1e-8)


def test_nested_ansatz_oscillator_support():
    H0 = build_hamiltonian(SystemSpec.oscillator())
    x1, x2 = nested_bracket_ansatz(H0, 0.0, 2)
    assert x1 == P.monomial(1, [3], [1])
    assert set(x2.to_dict()) == {(3, 1), (1, 3)}


def test_nested_ansatz_rejects_zero_order():
    with pytest.raises(ValueError):
        nested_bracket_expansion(build_hamiltonian(SystemSpec.oscillator()), 0)


def test_nested_ansatz_vanishes_for_constant_drive():
    fam = PolynomialFamily(osc_H(0.0), P.constant(1, 2.0))
    assert all(x.is_zero() for x in nested_bracket_ansatz(fam, 0.3, 2))


def test_series_matches_frozen_brackets():
    H0 = build_hamiltonian(SystemSpec.fput(2))
    beta = 0.4
    Hb, dH = H0.at(beta), H0.linear_in_beta
    inner = poisson_bracket(Hb, dH)
    x1 = inner.scale(-1.0)
    x2 = poisson_bracket(Hb, poisson_bracket(Hb, inner))
    got = nested_bracket_ansatz(H0, beta, 2)
    assert got[0].allclose(x1, 1e-12)
    assert got[1].allclose(x2, 1e-10)


def test_evaluation_examples():
    f = P.from_terms(2, {(2, 0, 0, 1): 3.0, (0, 0, 0, 0): -1.0})
    assert f(np.array([2.0, 5.0, 7.0, -1.0])) == pytest.approx(-13.0)
    assert osc_H(1.0)(np.array([1.0, 1.0])) == pytest.approx(1.25)


def test_batch_matches_pointwise():
    rng = np.random.default_rng(0)
    H = build_hamiltonian(SystemSpec.fput(3)).at(1.0)
    z = rng.normal(size=(10_000, 6))
    batch = compile_evaluator(H)(z)
    idx = rng.choice(z.shape[0], 50, replace=False)
    point = np.array([compile_evaluator(H)(z[i]) for i in idx])
    np.testing.assert_allclose(batch[idx], point, rtol=1e-14)
    direct = 0.5 * (z[:, 3:] ** 2).sum(1)
    r = np.diff(np.hstack([np.zeros((z.shape[0], 1)), z[:, :3], np.zeros((z.shape[0], 1))]), axis=1)
    direct += (0.5 * r ** 2 + 0.25 * r ** 4).sum(1)
    np.testing.assert_allclose(batch, direct, rtol=1e-12)


def test_gradient_against_finite_differences():
    rng = np.random.default_rng(1)
    H = build_hamiltonian(SystemSpec.fput(3)).at(0.9) + P.monomial(3, [1, 0, 2], [0, 1, 0], 0.3)
    grad = gradient_vector_evaluator(H)
    f = compile_evaluator(H)
    h = 1e-6
    for z in rng.uniform(-1, 1, size=(20, 6)):
        fd = np.array([(f(z + h * e) - f(z - h * e)) / (2 * h) for e in np.eye(6)])
        np.testing.assert_allclose(grad(z), fd, atol=1e-6)


def test_vector_evaluator_dimension_mismatch():
    with pytest.raises(ValueError):
        VectorEvaluator([P.q(1, 0), P.q(2, 0)])


def test_text_round_trip():
    f = P.from_terms(2, {(1, 0, 0, 3): 0.1, (0, 2, 1, 0): -7.25, (0, 0, 0, 0): 3.0})
    text = f.to_text()
    assert P.from_text(2, text) == f
    assert P.from_text(1, "2.0 q1^3 p1\n-1.0 p1^2") == P.from_terms(1, {(3, 1): 2.0, (0, 2): -1.0})


# -- algebraic properties on random integer polynomials ------------------------

def polynomials(n, max_deg):
    mono = st.lists(st.integers(0, max_deg), min_size=2 * n, max_size=2 * n).filter(
        lambda e: sum(e) <= max_deg)
    return st.dictionaries(mono.map(tuple), st.integers(-5, 5).map(float), max_size=4).map(
        lambda d: P.from_terms(n, d))


@st.composite
def poly_triples(draw, max_deg=6):
    n = draw(st.integers(1, 4))
    return n, [draw(polynomials(n, max_deg)) for _ in range(3)]


@settings(max_examples=60, deadline=None)
@given(poly_triples())
def test_antisymmetry(data):
    _, (a, b, _) = data
    assert poisson_bracket(a, b) == -poisson_bracket(b, a)
    assert poisson_bracket(a, a).is_zero()


@settings(max_examples=60, deadline=None)
@given(poly_triples())
def test_leibniz(data):
    _, (a, b, c) = data
    lhs = poisson_bracket(a, b * c)
    rhs = poisson_bracket(a, b) * c + b * poisson_bracket(a, c)
    assert lhs == rhs


@settings(max_examples=40, deadline=None)
@given(poly_triples(max_deg=4))
def test_jacobi(data):
    _, (a, b, c) = data
    total = (poisson_bracket(a, poisson_bracket(b, c)) + poisson_bracket(b, poisson_bracket(c, a))
             + poisson_bracket(c, poisson_bracket(a, b)))
    assert total.is_zero()


@settings(max_examples=40, deadline=None)
@given(poly_triples(max_deg=4), st.integers(0, 2 ** 31))
def test_evaluation_is_a_ring_homomorphism(data, seed):
    n, (a, b, _) = data
    z = np.random.default_rng(seed).uniform(-1, 1, 2 * n)
    assert (a + b)(z) == pytest.approx(a(z) + b(z), abs=1e-9)
    assert (a * b)(z) == pytest.approx(a(z) * b(z), abs=1e-9)
