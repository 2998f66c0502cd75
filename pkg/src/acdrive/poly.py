"""Sparse polynomials over a 2N-dimensional classical phase space.

A polynomial is stored as an integer exponent matrix of shape ``(T, 2N)``
(first N columns are q-exponents, last N are p-exponents) together with a
coefficient vector of length T.  Terms are kept in graded lexicographic
order with like terms merged, so two equal polynomials always carry
identical arrays.
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np
import numba

__all__ = [
    "PhasePolynomial",
    "PolynomialFamily",
    "Evaluator",
    "VectorEvaluator",
    "add",
    "multiply",
    "partial_derivative",
    "poisson_bracket",
    "nested_bracket_ansatz",
    "nested_bracket_expansion",
    "compile_evaluator",
    "gradient_evaluators",
]

CANCEL_TOL = 1e-14
_EXP_DTYPE = np.int16
# exponent-matrix entries above which products are formed in chunks
_PRODUCT_CHUNK = 4_000_000


def _canonical(exps: np.ndarray, coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if coeffs.size == 0:
        return exps.reshape(0, exps.shape[1]), coeffs.reshape(0)
    uniq, inv = np.unique(exps, axis=0, return_inverse=True)
    merged = np.bincount(inv.ravel(), weights=coeffs, minlength=uniq.shape[0])
    keep = np.abs(merged) > CANCEL_TOL
    uniq, merged = uniq[keep], merged[keep]
    # np.unique sorts rows lexicographically; a stable sort on degree gives grlex
    order = np.argsort(uniq.sum(axis=1), kind="stable")
    return np.ascontiguousarray(uniq[order]), merged[order]


def _raw_product(ea, ca, eb, cb):
    if ca.size == 0 or cb.size == 0:
        nv = ea.shape[1]
        return np.zeros((0, nv), _EXP_DTYPE), np.zeros(0)
    exps = (ea[:, None, :] + eb[None, :, :]).reshape(-1, ea.shape[1])
    coeffs = np.outer(ca, cb).ravel()
    return exps, coeffs


def _raw_derivative(exps, coeffs, index):
    e = exps[:, index]
    mask = e > 0
    out = exps[mask].copy()
    out[:, index] -= 1
    return out, coeffs[mask] * e[mask]


class PhasePolynomial:
    """Immutable sparse polynomial in canonical coordinates ``(q_1..q_N, p_1..p_N)``.

    Parameters
    ----------
    dimension : int
        Number of degrees of freedom N.
    exponents : array_like, shape (T, 2N)
        Exponent rows.  Duplicates are merged.
    coefficients : array_like, shape (T,)
        Real coefficients.
    """

    __slots__ = ("dimension", "_exps", "_coeffs", "_hash")

    def __init__(self, dimension: int, exponents=None, coefficients=None, *, _canonical_input=False):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        nv = 2 * dimension
        if exponents is None:
            exps = np.zeros((0, nv), _EXP_DTYPE)
            coeffs = np.zeros(0)
        else:
            exps = np.asarray(exponents, dtype=_EXP_DTYPE).reshape(-1, nv)
            coeffs = np.asarray(coefficients, dtype=float).reshape(-1)
            if exps.shape[0] != coeffs.shape[0]:
                raise ValueError("exponent rows and coefficients differ in length")
            if np.any(exps < 0):
                raise ValueError("exponents must be non-negative")
            if not np.all(np.isfinite(coeffs)):
                raise ValueError("coefficients must be finite")
            if not _canonical_input:
                exps, coeffs = _canonical(exps, coeffs)
        exps.setflags(write=False)
        coeffs.setflags(write=False)
        self.dimension = dimension
        self._exps = exps
        self._coeffs = coeffs
        self._hash = None

    # -- constructors -------------------------------------------------
    @classmethod
    def zero(cls, dimension: int) -> "PhasePolynomial":
        return cls(dimension)

    @classmethod
    def constant(cls, dimension: int, value: float) -> "PhasePolynomial":
        return cls(dimension, np.zeros((1, 2 * dimension)), [value])

    @classmethod
    def monomial(cls, dimension: int, q_exps: Sequence[int] = (), p_exps: Sequence[int] = (),
                 coefficient: float = 1.0) -> "PhasePolynomial":
        row = np.zeros(2 * dimension, dtype=_EXP_DTYPE)
        row[: len(q_exps)] = q_exps
        row[dimension: dimension + len(p_exps)] = p_exps
        return cls(dimension, row[None, :], [coefficient])

    @classmethod
    def q(cls, dimension: int, i: int) -> "PhasePolynomial":
        """The coordinate q_{i+1} (zero-based index)."""
        row = np.zeros(2 * dimension, dtype=_EXP_DTYPE)
        row[i] = 1
        return cls(dimension, row[None, :], [1.0])

    @classmethod
    def p(cls, dimension: int, i: int) -> "PhasePolynomial":
        """The momentum p_{i+1} (zero-based index)."""
        row = np.zeros(2 * dimension, dtype=_EXP_DTYPE)
        row[dimension + i] = 1
        return cls(dimension, row[None, :], [1.0])

    @classmethod
    def from_terms(cls, dimension: int, terms: Mapping[tuple, float] | Iterable[tuple]) -> "PhasePolynomial":
        """Build from ``{exponent_tuple: coeff}`` or an iterable of ``(coeff, exponent_tuple)``."""
        if isinstance(terms, Mapping):
            items = [(c, e) for e, c in terms.items()]
        else:
            items = list(terms)
        if not items:
            return cls(dimension)
        coeffs = [c for c, _ in items]
        exps = [e for _, e in items]
        return cls(dimension, exps, coeffs)

    # -- accessors ----------------------------------------------------
    @property
    def exponents(self) -> np.ndarray:
        return self._exps

    @property
    def coefficients(self) -> np.ndarray:
        return self._coeffs

    @property
    def n_terms(self) -> int:
        return self._coeffs.size

    def __len__(self) -> int:
        return self._coeffs.size

    def is_zero(self) -> bool:
        return self._coeffs.size == 0

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        if self.is_zero():
            return -1
        return int(self._exps.sum(axis=1).max())

    def terms(self):
        """Iterate ``(coefficient, exponent_tuple)`` in canonical order."""
        for c, e in zip(self._coeffs, self._exps):
            yield float(c), tuple(int(x) for x in e)

    def to_dict(self) -> dict[tuple, float]:
        return {e: c for c, e in self.terms()}

    # -- arithmetic ---------------------------------------------------
    def _check(self, other: "PhasePolynomial") -> None:
        if other.dimension != self.dimension:
            raise ValueError(f"dimension mismatch: {self.dimension} vs {other.dimension}")

    def _coerce(self, other):
        if isinstance(other, PhasePolynomial):
            self._check(other)
            return other
        if np.isscalar(other):
            return PhasePolynomial.constant(self.dimension, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return PhasePolynomial(self.dimension,
                               np.vstack([self._exps, other._exps]),
                               np.concatenate([self._coeffs, other._coeffs]))

    __radd__ = __add__

    def __neg__(self):
        return PhasePolynomial(self.dimension, self._exps.copy(), -self._coeffs, _canonical_input=True)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, factor: float) -> "PhasePolynomial":
        if factor == 0:
            return PhasePolynomial(self.dimension)
        return PhasePolynomial(self.dimension, self._exps.copy(), self._coeffs * factor,
                               _canonical_input=abs(factor) >= 1)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.scale(float(other))
        if not isinstance(other, PhasePolynomial):
            return NotImplemented
        self._check(other)
        return _product(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return self.scale(float(other))
        return NotImplemented

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative power")
        out = PhasePolynomial.constant(self.dimension, 1.0)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def derivative(self, index: int) -> "PhasePolynomial":
        if not 0 <= index < 2 * self.dimension:
            raise IndexError(f"variable index {index} out of range for dimension {self.dimension}")
        exps, coeffs = _raw_derivative(self._exps, self._coeffs, index)
        return PhasePolynomial(self.dimension, exps, coeffs)

    def bracket(self, other: "PhasePolynomial") -> "PhasePolynomial":
        return poisson_bracket(self, other)

    def __eq__(self, other):
        if not isinstance(other, PhasePolynomial):
            return NotImplemented
        return (self.dimension == other.dimension
                and self._exps.shape == other._exps.shape
                and np.array_equal(self._exps, other._exps)
                and np.array_equal(self._coeffs, other._coeffs))

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self.dimension, self._exps.tobytes(), self._coeffs.tobytes()))
        return self._hash

    def allclose(self, other: "PhasePolynomial", atol: float = 1e-10) -> bool:
        """Coefficient-wise comparison with absolute tolerance."""
        return (self - other).max_abs_coefficient() <= atol

    def max_abs_coefficient(self) -> float:
        return float(np.abs(self._coeffs).max()) if self._coeffs.size else 0.0

    def chop(self, tol: float) -> "PhasePolynomial":
        keep = np.abs(self._coeffs) > tol
        return PhasePolynomial(self.dimension, self._exps[keep].copy(), self._coeffs[keep].copy(),
                               _canonical_input=True)

    def __call__(self, z):
        return compile_evaluator(self)(z)

    # -- text ---------------------------------------------------------
    def variable_names(self) -> list[str]:
        n = self.dimension
        return [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]

    def to_text(self) -> str:
        """One term per line, ``coeff q1^a ... pN^b``, canonical order."""
        names = self.variable_names()
        lines = []
        for c, e in self.terms():
            factors = [f"{names[i]}^{k}" for i, k in enumerate(e) if k]
            lines.append(" ".join([repr(c)] + factors))
        return "\n".join(lines)

    @classmethod
    def from_text(cls, dimension: int, text: str) -> "PhasePolynomial":
        names = {f"q{i + 1}": i for i in range(dimension)}
        names.update({f"p{i + 1}": dimension + i for i in range(dimension)})
        rows, coeffs = [], []
        for line in text.strip().splitlines():
            parts = line.split()
            if not parts:
                continue
            row = [0] * (2 * dimension)
            for factor in parts[1:]:
                name, _, k = factor.partition("^")
                row[names[name]] += int(k or 1)
            rows.append(row)
            coeffs.append(float(parts[0]))
        if not rows:
            return cls(dimension)
        return cls(dimension, rows, coeffs)

    def __repr__(self):
        if self.is_zero():
            return f"PhasePolynomial(N={self.dimension}, 0)"
        text = self.to_text().replace("\n", " + ")
        if len(text) > 200:
            text = text[:200] + " ..."
        return f"PhasePolynomial(N={self.dimension}, {text})"


def _product(a: PhasePolynomial, b: PhasePolynomial) -> PhasePolynomial:
    if a.is_zero() or b.is_zero():
        return PhasePolynomial(a.dimension)
    nv = 2 * a.dimension
    rows_per_chunk = max(1, _PRODUCT_CHUNK // (b.n_terms * nv))
    parts_e, parts_c = [], []
    for start in range(0, a.n_terms, rows_per_chunk):
        sl = slice(start, start + rows_per_chunk)
        e, c = _raw_product(a._exps[sl], a._coeffs[sl], b._exps, b._coeffs)
        e, c = _canonical(e, c)
        parts_e.append(e)
        parts_c.append(c)
    return PhasePolynomial(a.dimension, np.vstack(parts_e), np.concatenate(parts_c))


def add(a: PhasePolynomial, b: PhasePolynomial) -> PhasePolynomial:
    a._check(b)
    return a + b


def multiply(a: PhasePolynomial, b: PhasePolynomial) -> PhasePolynomial:
    a._check(b)
    return a * b


def partial_derivative(a: PhasePolynomial, variable_index: int) -> PhasePolynomial:
    return a.derivative(variable_index)


def poisson_bracket(a: PhasePolynomial, b: PhasePolynomial) -> PhasePolynomial:
    """Canonical Poisson bracket ``{a, b} = sum_i da/dq_i db/dp_i - da/dp_i db/dq_i``."""
    a._check(b)
    n = a.dimension
    parts_e, parts_c = [], []
    for i in range(n):
        for qa, pb, sign in ((i, n + i, 1.0), (n + i, i, -1.0)):
            ea, ca = _raw_derivative(a._exps, a._coeffs, qa)
            if ca.size == 0:
                continue
            eb, cb = _raw_derivative(b._exps, b._coeffs, pb)
            if cb.size == 0:
                continue
            e, c = _raw_product(ea, ca, eb, cb)
            e, c = _canonical(e, sign * c)
            parts_e.append(e)
            parts_c.append(c)
    if not parts_e:
        return PhasePolynomial(n)
    return PhasePolynomial(n, np.vstack(parts_e), np.concatenate(parts_c))


class PolynomialFamily:
    """H(beta) = base + beta * linear_in_beta."""

    def __init__(self, base: PhasePolynomial, linear_in_beta: PhasePolynomial):
        base._check(linear_in_beta)
        self.base = base
        self.linear_in_beta = linear_in_beta

    @property
    def dimension(self) -> int:
        return self.base.dimension

    def at(self, beta: float) -> PhasePolynomial:
        return self.base + self.linear_in_beta.scale(beta)

    def derivative_beta(self) -> PhasePolynomial:
        return self.linear_in_beta

    def __repr__(self):
        return f"PolynomialFamily(base={self.base!r}, linear={self.linear_in_beta!r})"


def _bracket_series(h: list[PhasePolynomial], f: list[PhasePolynomial]) -> list[PhasePolynomial]:
    # {sum_a beta^a h_a, sum_b beta^b f_b} collected by powers of beta
    n = h[0].dimension
    out = [PhasePolynomial(n) for _ in range(len(h) + len(f) - 1)]
    for a, ha in enumerate(h):
        if ha.is_zero():
            continue
        for b, fb in enumerate(f):
            if fb.is_zero():
                continue
            out[a + b] = out[a + b] + poisson_bracket(ha, fb)
    while len(out) > 1 and out[-1].is_zero():
        out.pop()
    return out


def nested_bracket_expansion(H0: PolynomialFamily, order: int) -> list[list[PhasePolynomial]]:
    """Ansatz terms as polynomials in beta.

    Returns ``terms`` where ``terms[k-1][m]`` is the coefficient of ``beta**m``
    in ``X_k = (-1)**k {H0, {H0, ... {H0, dH0/dbeta}}}`` (2k-1 brackets).
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    h = [H0.base, H0.linear_in_beta]
    current = [H0.linear_in_beta]
    terms = []
    for k in range(1, order + 1):
        n_brackets = 1 if k == 1 else 2
        for _ in range(n_brackets):
            current = _bracket_series(h, current)
        sign = -1.0 if k % 2 else 1.0
        terms.append([c.scale(sign) for c in current])
    return terms


def evaluate_series(series: Sequence[PhasePolynomial], beta: float) -> PhasePolynomial:
    out = PhasePolynomial(series[0].dimension)
    for m, c in enumerate(series):
        if not c.is_zero():
            out = out + c.scale(beta ** m)
    return out


def nested_bracket_ansatz(H0: PolynomialFamily, beta: float, order: int) -> list[PhasePolynomial]:
    """``[X_1, ..., X_order]`` of the nested-bracket expansion with H0 frozen at ``beta``."""
    return [evaluate_series(s, beta) for s in nested_bracket_expansion(H0, order)]


# -- evaluation ------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _eval_kernel(z, fvar, fexp, fcount, owner, coeffs, max_exp, n_out):
    m_pts, nv = z.shape
    kmax = 0
    for v in range(nv):
        if max_exp[v] > kmax:
            kmax = max_exp[v]
    out = np.zeros((n_out, m_pts))
    pw = np.ones((nv, kmax + 1))
    for m in range(m_pts):
        for v in range(nv):
            x = z[m, v]
            acc = 1.0
            for e in range(1, max_exp[v] + 1):
                acc *= x
                pw[v, e] = acc
        for t in range(coeffs.shape[0]):
            val = coeffs[t]
            for k in range(fcount[t]):
                val *= pw[fvar[t, k], fexp[t, k]]
            out[owner[t], m] += val
    return out


class VectorEvaluator:
    """Batched evaluation of several polynomials sharing one phase space.

    Calling with ``z`` of shape ``(2N,)`` returns shape ``(K,)``; with shape
    ``(M, 2N)`` returns ``(K, M)``.
    """

    def __init__(self, polys: Sequence[PhasePolynomial]):
        if not polys:
            raise ValueError("need at least one polynomial")
        n = polys[0].dimension
        for poly in polys:
            if poly.dimension != n:
                raise ValueError("dimension mismatch")
        self.dimension = n
        self.n_outputs = len(polys)
        nv = 2 * n
        exps = np.vstack([poly.exponents for poly in polys]).astype(np.int64).reshape(-1, nv)
        self._coeffs = np.ascontiguousarray(np.concatenate([poly.coefficients for poly in polys]), dtype=float)
        self._owner = np.concatenate(
            [np.full(poly.n_terms, k, dtype=np.int64) for k, poly in enumerate(polys)])
        self.max_exp = exps.max(axis=0) if exps.size else np.zeros(nv, np.int64)
        nnz = (exps > 0).sum(axis=1)
        width = max(int(nnz.max()) if nnz.size else 0, 1)
        rows, cols = np.nonzero(exps)
        pos = np.arange(rows.size) - np.searchsorted(rows, rows)
        self._fvar = np.zeros((exps.shape[0], width), np.int64)
        self._fexp = np.zeros((exps.shape[0], width), np.int64)
        self._fvar[rows, pos] = cols
        self._fexp[rows, pos] = exps[rows, cols]
        self._fcount = nnz.astype(np.int64)
        self.n_terms = self._coeffs.size

    def kernel_arrays(self):
        """Flat term tables ``(fvar, fexp, fcount, owner, coeffs, max_exp)`` for compiled loops."""
        return self._fvar, self._fexp, self._fcount, self._owner, self._coeffs, self.max_exp

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        z2 = np.ascontiguousarray(z.reshape(-1, 2 * self.dimension))
        out = _eval_kernel(z2, self._fvar, self._fexp, self._fcount, self._owner,
                           self._coeffs, self.max_exp, self.n_outputs)
        return out[:, 0] if single else out


class Evaluator:
    """Compiled scalar polynomial: ``z -> value`` (batched over leading axis)."""

    def __init__(self, poly: PhasePolynomial):
        self.poly = poly
        self._vec = VectorEvaluator([poly])

    def __call__(self, z):
        out = self._vec(z)
        return out[0]


def compile_evaluator(a: PhasePolynomial) -> Evaluator:
    return Evaluator(a)


def gradient_evaluators(a: PhasePolynomial) -> tuple[list[Evaluator], list[Evaluator]]:
    """Evaluators of ``(da/dq_i for i) , (da/dp_i for i)``."""
    n = a.dimension
    dq = [Evaluator(a.derivative(i)) for i in range(n)]
    dp = [Evaluator(a.derivative(n + i)) for i in range(n)]
    return dq, dp


def gradient_vector_evaluator(a: PhasePolynomial) -> VectorEvaluator:
    """One evaluator returning the full gradient ``(dq_1..dq_N, dp_1..dp_N)``."""
    return VectorEvaluator([a.derivative(i) for i in range(2 * a.dimension)])
