"""Variational optimization of adiabatic gauge potential coefficients.

The action is the ensemble variance of ``G = dH0/dbeta - {A, H0}`` with
``A = sum_j gamma_j X_j``.  It is quadratic in the gammas, so each grid
point reduces to a small linear solve.  Optimized tables are then fitted
with rational functions whose denominator coefficients are non-negative.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares, lsq_linear

from .dynamics import IntegratorConfig, RampProtocol, adiabatic_reference_trajectory
from .poly import (PhasePolynomial, PolynomialFamily, VectorEvaluator, _bracket_series,
                   evaluate_series, nested_bracket_expansion, poisson_bracket)
from .systems import Ensemble, SystemSpec, build_hamiltonian, initial_ensemble

log = logging.getLogger(__name__)


class SingularFormWarning(UserWarning):
    """Ansatz terms are linearly dependent on the sampled distribution."""


class FitQualityWarning(UserWarning):
    """Rational fit residual is above the acceptance gate."""


# -- ansatz ------------------------------------------------------------------

def ansatz_series(spec: SystemSpec, order: int, basis: str = "auto") -> list[list[PhasePolynomial]]:
    """beta-power series of the ansatz terms.

    ``basis="nested"`` uses the nested Poisson-bracket expansion.
    ``basis="monomial"`` (oscillator only) uses the fixed basis x^3 p, x p^3.
    ``"auto"`` picks monomial for the oscillator and nested otherwise.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    if basis == "auto":
        basis = "nested" if spec.is_fput else "monomial"
    if basis == "monomial":
        if spec.is_fput:
            raise ValueError("the monomial basis is defined for the oscillator only")
        if order > 2:
            raise ValueError("the monomial basis has two terms")
        fixed = [PhasePolynomial.monomial(1, [3], [1]), PhasePolynomial.monomial(1, [1], [3])]
        return [[t] for t in fixed[:order]]
    if basis == "nested":
        return nested_bracket_expansion(build_hamiltonian(spec), order)
    raise ValueError(f"unknown basis {basis!r}")


@dataclass(frozen=True)
class GTerms:
    """G00 = dH0/dbeta, Gj = -{Xj, H0}."""

    G00: PhasePolynomial
    Gj: tuple[PhasePolynomial, ...]


def g_terms(H0_at_beta: PhasePolynomial, dH0: PhasePolynomial,
            ansatz_terms: Sequence[PhasePolynomial]) -> GTerms:
    return GTerms(dH0, tuple(-poisson_bracket(x, H0_at_beta) for x in ansatz_terms))


class GSeries:
    """G00 and the Gj as beta-power series, compiled for batched evaluation."""

    def __init__(self, H0: PolynomialFamily, terms: Sequence[Sequence[PhasePolynomial]]):
        h = [H0.base, H0.linear_in_beta]
        self.g00 = H0.linear_in_beta
        self.gj = [_bracket_series(h, list(series)) for series in terms]
        layout = [self.g00]
        self._slots = []
        for series in self.gj:
            self._slots.append(list(range(len(layout), len(layout) + len(series))))
            layout.extend(series)
        self._eval = VectorEvaluator(layout)

    @property
    def n_terms(self) -> int:
        return len(self.gj)

    def values(self, z: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
        """(G00 values (M,), Gj values (l, M)) on the points ``z`` at ``beta``."""
        raw = self._eval(np.atleast_2d(z))
        g00 = raw[0]
        gj = np.array([sum(raw[s] * beta ** m for m, s in enumerate(slots)) for slots in self._slots])
        return g00, gj

    def polynomials(self, beta: float) -> GTerms:
        return GTerms(self.g00, tuple(evaluate_series(s, beta) for s in self.gj))


# -- quadratic form ------------------------------------------------------------

@dataclass(frozen=True)
class ActionQuadraticForm:
    """S(gamma) = c + b.gamma + gamma.A.gamma."""

    c: float
    b: np.ndarray
    A: np.ndarray

    @property
    def n_params(self) -> int:
        return self.b.shape[0]

    def __call__(self, gamma) -> float:
        g = np.asarray(gamma, float)
        return float(self.c + self.b @ g + g @ self.A @ g)

    # two-parameter naming
    @property
    def a00(self):
        return self.c

    @property
    def a10(self):
        return self.b[0]

    @property
    def a01(self):
        return self.b[1]

    @property
    def a20(self):
        return self.A[0, 0]

    @property
    def a02(self):
        return self.A[1, 1]

    @property
    def a11(self):
        return 2.0 * self.A[0, 1]

    @classmethod
    def from_two_parameter(cls, a00, a10, a01, a20, a02, a11) -> "ActionQuadraticForm":
        A = np.array([[a20, a11 / 2.0], [a11 / 2.0, a02]])
        return cls(float(a00), np.array([a10, a01], float), A)

    def scaled(self, factor: float) -> "ActionQuadraticForm":
        return ActionQuadraticForm(self.c * factor, self.b * factor, self.A * factor)

    @staticmethod
    def average(forms: Sequence["ActionQuadraticForm"], weights: Sequence[float]) -> "ActionQuadraticForm":
        w = np.asarray(weights, float)
        w = w / w.sum()
        return ActionQuadraticForm(float(sum(wi * f.c for wi, f in zip(w, forms))),
                                   sum(wi * f.b for wi, f in zip(w, forms)),
                                   sum(wi * f.A for wi, f in zip(w, forms)))


def quadratic_form_from_samples(g00: np.ndarray, gj: np.ndarray, weights: np.ndarray) -> ActionQuadraticForm:
    """Weighted moments: c = Var G00, b = 2 Cov(G00, Gj), A = Cov(Gj, Gk)."""
    w = np.asarray(weights, float)
    gj = np.atleast_2d(gj)
    d00 = g00 - w @ g00
    dj = gj - (gj @ w)[:, None]
    c = float(w @ (d00 * d00))
    b = 2.0 * (dj * w) @ d00
    A = (dj * w) @ dj.T
    A = 0.5 * (A + A.T)
    return ActionQuadraticForm(max(c, 0.0), b, A)


def assemble_quadratic_form(ensemble: Ensemble, H0_at_beta: PhasePolynomial, ansatz_terms: Sequence[PhasePolynomial],
                            dH0: PhasePolynomial | None = None, spec: SystemSpec | None = None
                            ) -> ActionQuadraticForm:
    """Quadratic action on ``ensemble`` for terms frozen at one beta.

    ``dH0`` defaults to the quartic part of the system Hamiltonian (``spec``
    defaults to the oscillator when N = 1 and the FPUT chain otherwise).
    """
    if ensemble.size < 1:
        raise ValueError("empty ensemble")
    if not ansatz_terms:
        raise ValueError("need at least one ansatz term")
    if dH0 is None:
        if spec is None:
            from .systems import FPUT, OSCILLATOR
            spec = SystemSpec(OSCILLATOR if ansatz_terms[0].dimension == 1 else FPUT, ansatz_terms[0].dimension)
        dH0 = build_hamiltonian(spec).linear_in_beta
    gt = g_terms(H0_at_beta, dH0, ansatz_terms)
    vals = VectorEvaluator([gt.G00, *gt.Gj])(ensemble.points)
    return quadratic_form_from_samples(vals[0], vals[1:], ensemble.weights)


def minimize_two_parameter(form: ActionQuadraticForm) -> np.ndarray:
    """Closed-form stationary point for two coefficients."""
    a10, a01, a20, a02, a11 = form.a10, form.a01, form.a20, form.a02, form.a11
    den = a11 ** 2 - 4.0 * a02 * a20
    return np.array([(2 * a02 * a10 - a01 * a11) / den, (2 * a01 * a20 - a10 * a11) / den])


def minimize(form: ActionQuadraticForm, rcond: float = 1e-12) -> np.ndarray:
    """Stationary point of the form, solving A gamma = -b/2.

    A singular (or numerically rank-deficient) A gives the minimum-norm
    solution and a :class:`SingularFormWarning`.
    """
    A, b = form.A, form.b
    scale = np.abs(np.diag(A)).max() if A.size else 0.0
    if scale == 0.0:
        if np.any(b != 0):
            warnings.warn("action has no quadratic part", SingularFormWarning, stacklevel=2)
        return np.zeros_like(b)
    d = np.sqrt(np.maximum(np.diag(A), scale * 1e-300))
    As = A / np.outer(d, d)
    eig = np.linalg.eigvalsh(As)
    if eig.min() <= rcond * eig.max():
        warnings.warn("degenerate ansatz on this distribution; using minimum-norm solution",
                      SingularFormWarning, stacklevel=2)
        return np.linalg.lstsq(A, -0.5 * b, rcond=rcond)[0]
    if form.n_params == 2:
        return minimize_two_parameter(form)
    return np.linalg.solve(A, -0.5 * b)


# -- tables ----------------------------------------------------------------------

@dataclass
class GammaTable:
    """Optimized coefficients on a beta grid."""

    betas: np.ndarray
    gammas: np.ndarray          # shape (n_beta, order)
    actions: np.ndarray         # minimized action per grid point
    bare_actions: np.ndarray    # action at gamma = 0
    singular: list = field(default_factory=list)

    @property
    def order(self) -> int:
        return self.gammas.shape[1]

    def table(self, j: int) -> list[tuple[float, float]]:
        return [(float(b), float(g)) for b, g in zip(self.betas, self.gammas[:, j])]


def default_beta_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def realization_snapshots(spec: SystemSpec, E0: float, M: int, seed: int, k: int, index: int,
                          tau_ref: float, beta_grid, config: IntegratorConfig | None = None) -> list[Ensemble]:
    ens = initial_ensemble(spec, E0, M, seed, k=k, stream=(1, index))
    return adiabatic_reference_trajectory(spec, ens, RampProtocol(tau_ref), beta_grid, config)


def optimize_from_snapshots(spec: SystemSpec, snapshot_sets: Sequence[Sequence[Ensemble]],
                            realization_weights: Sequence[float], beta_grid,
                            terms: Sequence[Sequence[PhasePolynomial]]) -> GammaTable:
    """Minimize the realization-averaged action at every grid point."""
    H0 = build_hamiltonian(spec)
    gser = GSeries(H0, terms)
    beta_grid = np.asarray(beta_grid, float)
    gam, act, bare, singular = [], [], [], []
    for i, beta in enumerate(beta_grid):
        forms = []
        for snaps in snapshot_sets:
            ens = snaps[i]
            g00, gj = gser.values(ens.points, beta)
            forms.append(quadratic_form_from_samples(g00, gj, ens.weights))
        form = ActionQuadraticForm.average(forms, realization_weights)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SingularFormWarning)
            g = minimize(form)
        if any(issubclass(c.category, SingularFormWarning) for c in caught):
            singular.append(float(beta))
        gam.append(g)
        act.append(form(g))
        bare.append(form.c)
    if singular:
        log.warning("singular action at %d grid points", len(singular))
    return GammaTable(beta_grid, np.array(gam), np.array(act), np.array(bare), singular)


def optimize_gamma_table(spec: SystemSpec, E0: float = 1.0, M: int = 128, seed: int = 0, k: int = 1,
                         ansatz_order: int = 2, beta_grid=None, tau_ref: float | None = None,
                         energy_realizations: Sequence[tuple[float, float]] | None = None,
                         basis: str = "auto", config: IntegratorConfig | None = None) -> GammaTable:
    """Full optimization pipeline: reference ramps, actions, minimization.

    ``energy_realizations`` is a list of ``(E0, weight)``; ``None`` means a
    single realization at ``E0``.
    """
    beta_grid = default_beta_grid() if beta_grid is None else np.asarray(beta_grid, float)
    if tau_ref is None:
        tau_ref = 500.0 if spec.is_fput else 2000.0
    realizations = energy_realizations or [(E0, 1.0)]
    snapshot_sets = [realization_snapshots(spec, e, M, seed, k, r, tau_ref, beta_grid, config)
                     for r, (e, _) in enumerate(realizations)]
    terms = ansatz_series(spec, ansatz_order, basis)
    return optimize_from_snapshots(spec, snapshot_sets, [w for _, w in realizations], beta_grid, terms)


# -- rational fits -------------------------------------------------------------------

@dataclass
class CoefficientFit:
    """gamma(beta) = (b0 + b1 beta + ...) / (1 + c1 beta + ...), with c_i >= 0."""

    b: np.ndarray
    c: np.ndarray
    residual: float = 0.0
    raw_table: list = field(default_factory=list)
    gate: float = 0.02
    delta: float = 0.0

    def __post_init__(self):
        self.b = np.asarray(self.b, float)
        self.c = np.asarray(self.c, float)
        if np.any(self.c < 0):
            raise ValueError("denominator coefficients must be non-negative")
        self._spline = None

    @property
    def degrees(self) -> tuple[int, int]:
        return self.b.size - 1, self.c.size

    @property
    def accepted(self) -> bool:
        """Whether the fit residual is within the gate (relative to max |gamma|)."""
        if not self.raw_table:
            return True
        scale = max(abs(g) for _, g in self.raw_table)
        return self.residual <= self.gate * max(scale, 1e-300)

    def numerator(self, beta):
        b = self.b.copy()
        if b.size > 1:
            b[1] *= 1.0 + self.delta
        return np.polyval(b[::-1], beta)

    def denominator(self, beta):
        return np.polyval(np.concatenate([[1.0], self.c])[::-1], beta)

    def rational(self, beta):
        return self.numerator(beta) / self.denominator(beta)

    def __call__(self, beta):
        if self.accepted:
            return self.rational(beta)
        # gated out: follow the raw table, carrying the same Delta shift
        if self._spline is None:
            xs, ys = zip(*self.raw_table)
            self._spline = CubicSpline(np.asarray(xs), np.asarray(ys))
        out = self._spline(beta)
        if self.delta and self.b.size > 1:
            out = out + self.delta * self.b[1] * np.asarray(beta) / self.denominator(beta)
        return out

    def perturbed(self, delta: float) -> "CoefficientFit":
        """Copy with b1 -> b1 (1 + delta)."""
        return CoefficientFit(self.b.copy(), self.c.copy(), self.residual, list(self.raw_table), self.gate, delta)

    def to_dict(self) -> dict:
        return {"b": [float(x) for x in self.b], "c": [float(x) for x in self.c],
                "residual": float(self.residual), "gate": self.gate,
                "raw_table": [[float(x), float(y)] for x, y in self.raw_table]}

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientFit":
        return cls(np.array(d["b"], float), np.array(d["c"], float), float(d.get("residual", 0.0)),
                   [tuple(r) for r in d.get("raw_table", [])], float(d.get("gate", 0.02)))


def evaluate_coefficient(fit: CoefficientFit, beta):
    if np.any(np.asarray(beta) < 0) or np.any(np.asarray(beta) > 1):
        raise ValueError("beta outside [0, 1]")
    return fit(beta)


def _rational_residual(x, beta, gamma, m):
    b, c = x[: m + 1], x[m + 1:]
    num = np.polyval(b[::-1], beta)
    den = 1.0 + beta * np.polyval(c[::-1], beta) if c.size else np.ones_like(beta)
    return num / den - gamma


def fit_rational(table, degrees: tuple[int, int] = (3, 3), gate: float = 0.02) -> CoefficientFit:
    """Bounded least-squares rational fit of ``[(beta, gamma), ...]``.

    Starts from the linearized problem ``gamma (1 + sum c beta^i) = sum b beta^i``
    and from a pure polynomial, then refines the true residual on the box
    ``c >= 0``.  Emits :class:`FitQualityWarning` when the max residual exceeds
    ``gate * max|gamma|``.
    """
    m, n = degrees
    beta = np.array([t[0] for t in table], float)
    gamma = np.array([t[1] for t in table], float)
    if beta.size < m + n + 2:
        raise ValueError(f"need at least {m + n + 2} points for degrees {degrees}")
    scale = max(float(np.abs(gamma).max()), 1e-300)
    g = gamma / scale
    V = np.vander(beta, m + 1, increasing=True)
    W = -g[:, None] * np.vander(beta, n + 1, increasing=True)[:, 1:]
    lower = np.concatenate([np.full(m + 1, -np.inf), np.zeros(n)])
    upper = np.full(m + n + 1, np.inf)
    starts = []
    if n:
        lin = lsq_linear(np.hstack([V, W]), g, bounds=(lower, upper), lsq_solver="exact")
        starts.append(lin.x)
    poly = np.linalg.lstsq(V, g, rcond=None)[0]
    starts.append(np.concatenate([poly, np.zeros(n)]))
    best = None
    for x0 in starts:
        x0 = np.clip(x0, lower, upper)
        res = least_squares(_rational_residual, x0, args=(beta, g, m), bounds=(lower, upper),
                            method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        cost = float(np.sum(res.fun ** 2))
        if best is None or cost < best[0]:
            best = (cost, res.x)
    x = best[1]
    b = x[: m + 1] * scale
    c = np.maximum(x[m + 1:], 0.0)
    fit = CoefficientFit(b, c, 0.0, [(float(u), float(v)) for u, v in zip(beta, gamma)], gate)
    fit.residual = float(np.abs(fit.rational(beta) - gamma).max())
    if not fit.accepted:
        warnings.warn(f"rational fit residual {fit.residual:.3g} exceeds gate; raw table used",
                      FitQualityWarning, stacklevel=2)
    return fit


def fit_table(table: GammaTable, degrees: tuple[int, int] = (3, 3), gate: float = 0.02) -> list[CoefficientFit]:
    return [fit_rational(table.table(j), degrees, gate) for j in range(table.order)]
