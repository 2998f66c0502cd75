"""Quantum anharmonic oscillator in a truncated Fock basis (hbar = m = omega = 1).

The counter-diabatic term uses the Weyl-symmetrized versions of x^3 p and
x p^3.  Time evolution is unitary by construction: each step applies
exponentials of Hermitian matrices computed from their eigendecomposition.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .agp import ActionQuadraticForm, GammaTable, default_beta_grid, minimize
from .dynamics import RampProtocol


class NormDriftError(RuntimeError):
    pass


class DegenerateSpectrumWarning(UserWarning):
    pass


@dataclass(frozen=True)
class HilbertConfig:
    dimension: int = 128
    n0: int = 0

    def __post_init__(self):
        if self.dimension < 8:
            raise ValueError("Hilbert dimension must be >= 8")
        if not 0 <= self.n0 < self.dimension:
            raise ValueError("initial eigen-index outside the basis")


@dataclass(frozen=True)
class Operators:
    x: np.ndarray
    p: np.ndarray
    H_base: np.ndarray
    H_quartic: np.ndarray

    @property
    def dimension(self) -> int:
        return self.x.shape[0]

    def hamiltonian(self, beta: float) -> np.ndarray:
        return self.H_base + beta * self.H_quartic


def annihilation(D: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, D, dtype=float)), 1).astype(complex)


def build_operators(config: HilbertConfig | int = HilbertConfig()) -> Operators:
    """x = (a + a^dag)/sqrt2, p = i(a^dag - a)/sqrt2, H(beta) = N + 1/2 + beta x^4/4."""
    D = config if isinstance(config, int) else config.dimension
    a = annihilation(D)
    ad = a.conj().T
    x = (a + ad) / math.sqrt(2.0)
    p = 1j * (ad - a) / math.sqrt(2.0)
    H_base = np.diag(np.arange(D) + 0.5).astype(complex)
    x2 = x @ x
    return Operators(x, p, H_base, 0.25 * (x2 @ x2))


def weyl_agp(order: int, gamma1: float, gamma2: float = 0.0, ops: Operators | None = None) -> np.ndarray:
    """Symmetrized x^3 p (and, for order 2, x p^3) counter-term."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    ops = ops or build_operators()
    W1, W2 = weyl_terms(ops)
    out = gamma1 * W1
    if order == 2:
        out = out + gamma2 * W2
    return out


def weyl_terms(ops: Operators) -> tuple[np.ndarray, np.ndarray]:
    """(x^3 p + p x^3)/2 and (x p^3 + p x p^2 + p^2 x p + p^3 x)/4."""
    x, p = ops.x, ops.p
    x3 = x @ x @ x
    p2 = p @ p
    p3 = p2 @ p
    W1 = 0.5 * (x3 @ p + p @ x3)
    W2 = 0.25 * (x @ p3 + p @ x @ p2 + p2 @ x @ p + p3 @ x)
    return W1, W2


def eigenstate_action(ops: Operators, beta: float, order: int, n: int = 0) -> ActionQuadraticForm:
    """Quadratic action Var_n(G) in eigenstate ``n`` of H(beta).

    G = dH/dbeta + i[A, H], the quantum image of dH/dbeta - {A, H}.
    """
    H = ops.hamiltonian(beta)
    _, V = np.linalg.eigh(H)
    psi = V[:, n]
    gens = [ops.H_quartic] + [1j * (W @ H - H @ W) for W in weyl_terms(ops)[:order]]
    v = np.array([g @ psi for g in gens])
    means = v @ psi.conj()
    C = np.real(v.conj() @ v.T - np.outer(means.conj(), means))
    C = 0.5 * (C + C.T)
    return ActionQuadraticForm(max(float(C[0, 0]), 0.0), 2.0 * C[0, 1:], C[1:, 1:])


def optimize_quantum_table(order: int, config: HilbertConfig = HilbertConfig(), beta_grid=None,
                           ops: Operators | None = None) -> GammaTable:
    """Eigenstate-variational Weyl coefficients on a beta grid."""
    ops = ops or build_operators(config)
    beta_grid = default_beta_grid() if beta_grid is None else np.asarray(beta_grid, float)
    gam, act, bare = [], [], []
    for beta in beta_grid:
        form = eigenstate_action(ops, float(beta), order, config.n0)
        g = minimize(form)
        gam.append(g)
        act.append(form(g))
        bare.append(form.c)
    return GammaTable(beta_grid, np.array(gam), np.array(act), np.array(bare))


def is_hermitian(M: np.ndarray, atol: float = 1e-12) -> bool:
    return bool(np.allclose(M, M.conj().T, atol=atol, rtol=0))


def _expm_herm(H: np.ndarray, dt: float) -> np.ndarray:
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * dt * w)) @ V.conj().T


# fourth-order commutator-free exponential, two Gauss points
_G = math.sqrt(3.0) / 6.0
_A1 = (3.0 - 2.0 * math.sqrt(3.0)) / 12.0
_A2 = (3.0 + 2.0 * math.sqrt(3.0)) / 12.0


class QuantumDrive:
    """H_ACD(t) = H0(beta) + beta_dot (gamma1 W1 + gamma2 W2) on a truncated basis."""

    def __init__(self, ops: Operators, coefficients: Sequence[Callable[[float], float]] = ()):
        if len(coefficients) > 2:
            raise ValueError("at most two Weyl-ordered terms")
        self.ops = ops
        self.coefficients = list(coefficients)
        self._terms = weyl_terms(ops)[: len(self.coefficients)]

    @property
    def order(self) -> int:
        return len(self.coefficients)

    def hamiltonian(self, protocol: RampProtocol, t: float) -> np.ndarray:
        beta = protocol.beta(t)
        H = self.ops.hamiltonian(beta)
        if self.coefficients:
            bdot = protocol.beta_dot(t)
            if bdot != 0.0:
                for fn, W in zip(self.coefficients, self._terms):
                    H = H + (bdot * float(fn(beta))) * W
        return H


def evolve_schrodinger(state: np.ndarray, protocol: RampProtocol, drive: QuantumDrive,
                       steps: int | None = None, scheme: str = "cf4") -> np.ndarray:
    """Propagate ``state`` over [0, tau] under the driven Hamiltonian.

    ``scheme`` is ``"cf4"`` (fourth-order commutator-free) or ``"midpoint"``.
    """
    psi = np.asarray(state, complex).copy()
    norm0 = np.linalg.norm(psi)
    if abs(norm0 - 1.0) > 1e-10:
        raise ValueError("initial state must be normalized")
    tau = protocol.tau
    if steps is None:
        steps = max(400, int(math.ceil(tau / 0.05)))
    h = tau / steps
    for i in range(steps):
        t = i * h
        if scheme == "midpoint":
            psi = _expm_herm(drive.hamiltonian(protocol, t + 0.5 * h), h) @ psi
        elif scheme == "cf4":
            H1 = drive.hamiltonian(protocol, t + (0.5 - _G) * h)
            H2 = drive.hamiltonian(protocol, t + (0.5 + _G) * h)
            psi = _expm_herm(_A2 * H1 + _A1 * H2, h) @ psi
            psi = _expm_herm(_A1 * H1 + _A2 * H2, h) @ psi
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    drift = abs(np.linalg.norm(psi) - 1.0)
    if drift > 1e-6:
        raise NormDriftError(f"norm drifted by {drift:.3g}; reduce the step")
    return psi


def eigenstate(H: np.ndarray, n: int) -> np.ndarray:
    _, V = np.linalg.eigh(H)
    return V[:, n]


def dephased_variance(c: np.ndarray, O_eig: np.ndarray) -> tuple[float, float]:
    """Infinite-time mean and variance of <O>(t) from eigenbasis amplitudes ``c``."""
    pops = np.abs(c) ** 2
    mean = float(np.real(pops @ np.diag(O_eig)))
    off = np.abs(O_eig) ** 2
    np.fill_diagonal(off, 0.0)
    return mean, float(pops @ off @ pops)


def quantum_foms(final_state: np.ndarray, H_final: np.ndarray, n_target: int = 0,
                 observable: np.ndarray | None = None, gap_tol: float = 1e-10) -> tuple[float, float, float]:
    """(1 - F^2, energy variance, delta_QM) of ``final_state``.

    The target is eigenstate ``n_target`` of ``H_final``; ``observable``
    (default: the harmonic part N + 1/2) enters delta_QM.
    """
    psi = np.asarray(final_state, complex)
    w, V = np.linalg.eigh(H_final)
    if np.any(np.diff(w) < gap_tol):
        warnings.warn("near-degenerate final spectrum; dephasing formula assumption violated",
                      DegenerateSpectrumWarning, stacklevel=2)
    c = V.conj().T @ psi
    infidelity = float(max(1.0 - abs(c[n_target]) ** 2, 0.0))
    Hpsi = H_final @ psi
    e1 = np.real(np.vdot(psi, Hpsi))
    e2 = np.real(np.vdot(Hpsi, Hpsi))
    evar = float(max(e2 - e1 ** 2, 0.0))
    if observable is None:
        observable = np.diag(np.arange(H_final.shape[0]) + 0.5).astype(complex)
    O_eig = V.conj().T @ observable @ V
    _, dvar = dephased_variance(c, O_eig)
    return infidelity, evar, dvar


def run_quantum_ramp(tau: float, coefficients: Sequence[Callable[[float], float]] = (),
                     config: HilbertConfig = HilbertConfig(), steps: int | None = None,
                     ops: Operators | None = None) -> tuple[float, float, float]:
    """Start in eigenstate n0 of H(0), ramp over ``tau``, return the three quantum FoMs."""
    ops = ops or build_operators(config)
    psi0 = eigenstate(ops.hamiltonian(0.0), config.n0)
    drive = QuantumDrive(ops, coefficients)
    psi = evolve_schrodinger(psi0, RampProtocol(tau), drive, steps)
    return quantum_foms(psi, ops.hamiltonian(1.0), config.n0, ops.H_base)
