"""System definitions: quartic oscillator and the fixed-wall beta-FPUT chain.

Also holds the normal-mode transform and the constructors for stationary
initial ensembles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import stats

from .poly import PhasePolynomial, PolynomialFamily

OSCILLATOR = "oscillator"
FPUT = "fput"


@dataclass(frozen=True)
class SystemSpec:
    """Which Hamiltonian to build.

    ``kind`` is ``"oscillator"`` (N = 1) or ``"fput"``.  FPUT walls are fixed:
    q_0 = q_{N+1} = 0 and these sites are not dynamical variables.
    """

    kind: Literal["oscillator", "fput"] = OSCILLATOR
    N: int = 1
    boundary: str = "fixed"

    def __post_init__(self):
        if self.kind not in (OSCILLATOR, FPUT):
            raise ValueError(f"unknown system kind {self.kind!r}")
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.kind == OSCILLATOR and self.N != 1:
            raise ValueError("the oscillator has N = 1")
        if self.boundary != "fixed":
            raise ValueError("only fixed boundaries are supported")

    @classmethod
    def oscillator(cls) -> "SystemSpec":
        return cls(OSCILLATOR, 1)

    @classmethod
    def fput(cls, N: int) -> "SystemSpec":
        return cls(FPUT, N)

    @property
    def is_fput(self) -> bool:
        return self.kind == FPUT


def build_hamiltonian(spec: SystemSpec) -> PolynomialFamily:
    """H0(beta) = base + beta * quartic."""
    n = spec.N
    P = PhasePolynomial
    if spec.kind == OSCILLATOR:
        base = P.monomial(1, p_exps=[2], coefficient=0.5) + P.monomial(1, q_exps=[2], coefficient=0.5)
        return PolynomialFamily(base, P.monomial(1, q_exps=[4], coefficient=0.25))
    base = P(n)
    quartic = P(n)
    for i in range(n):
        base = base + P.p(n, i) ** 2 * 0.5
    zero = P(n)
    for bond in range(n + 1):
        right = P.q(n, bond) if bond < n else zero
        left = P.q(n, bond - 1) if bond >= 1 else zero
        r = right - left
        base = base + (r ** 2) * 0.5
        quartic = quartic + (r ** 4) * 0.25
    return PolynomialFamily(base, quartic)


def harmonic_hamiltonian(spec: SystemSpec) -> PhasePolynomial:
    """The beta-independent part of H0 (H_lin)."""
    return build_hamiltonian(spec).base


# -- normal modes ------------------------------------------------------------

def mode_frequencies(N: int) -> np.ndarray:
    k = np.arange(1, N + 1)
    return 2.0 * np.sin(np.pi * k / (2.0 * (N + 1)))


def mode_matrix(N: int) -> np.ndarray:
    """Symmetric orthogonal sine kernel S with q = S Q and Q = S q."""
    n = np.arange(1, N + 1)
    return math.sqrt(2.0 / (N + 1)) * np.sin(np.outer(n, n) * np.pi / (N + 1))


@dataclass(frozen=True)
class ModeCoordinates:
    Q: np.ndarray
    P: np.ndarray

    def energies(self) -> np.ndarray:
        """Per-mode harmonic energies (P_k^2 + w_k^2 Q_k^2)/2."""
        w = mode_frequencies(self.Q.shape[-1])
        return 0.5 * (self.P ** 2 + (w * self.Q) ** 2)


@dataclass(frozen=True)
class PhaseState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("phase state must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.q, float), np.asarray(self.p, float)])


def mode_transform(spec: SystemSpec, state: PhaseState) -> ModeCoordinates:
    if not spec.is_fput:
        raise ValueError("normal modes are defined for the FPUT chain only")
    S = mode_matrix(spec.N)
    return ModeCoordinates(np.asarray(state.q) @ S, np.asarray(state.p) @ S)


def inverse_mode_transform(spec: SystemSpec, modes: ModeCoordinates) -> PhaseState:
    if not spec.is_fput:
        raise ValueError("normal modes are defined for the FPUT chain only")
    S = mode_matrix(spec.N)
    return PhaseState(np.asarray(modes.Q) @ S, np.asarray(modes.P) @ S)


# -- ensembles ---------------------------------------------------------------

@dataclass(frozen=True)
class Ensemble:
    """Weighted phase-space points.

    ``points`` has shape ``(M, 2N)`` with q in the first N columns.
    """

    points: np.ndarray
    weights: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] < 1:
            raise ValueError("ensemble needs at least one member")
        if w.shape[0] != pts.shape[0]:
            raise ValueError("one weight per member required")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points, seed=None, **meta) -> "Ensemble":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(pts, np.full(pts.shape[0], 1.0 / pts.shape[0]), seed, dict(meta))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1] // 2

    @property
    def q(self) -> np.ndarray:
        return self.points[:, : self.dimension]

    @property
    def p(self) -> np.ndarray:
        return self.points[:, self.dimension:]

    def members(self) -> list[PhaseState]:
        return [PhaseState(row[: self.dimension], row[self.dimension:]) for row in self.points]

    def with_points(self, points) -> "Ensemble":
        return Ensemble(points, self.weights, self.seed, self.meta)

    def mean(self, values) -> float:
        return float(np.dot(self.weights, values))

    def variance(self, values) -> float:
        values = np.asarray(values, float)
        mu = np.dot(self.weights, values)
        return float(max(np.dot(self.weights, (values - mu) ** 2), 0.0))

    def to_csv(self, path) -> None:
        n = self.dimension
        header = ["member", "weight"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for m, (w, row) in enumerate(zip(self.weights, self.points)):
                writer.writerow([m, repr(float(w))] + [repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path, seed=None) -> "Ensemble":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [list(map(float, r)) for r in reader]
        if header[:2] != ["member", "weight"]:
            raise ValueError("not an ensemble snapshot file")
        arr = np.array(rows)
        return cls(arr[:, 2:], arr[:, 1], seed)


def seed_stream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the sub-stream ``path`` of the master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


def stratified_phases(M: int, seed: int, offset: float | None = None, stream: tuple = ()) -> np.ndarray:
    """theta_m = 2 pi (m + u) / M with one shared offset u drawn per seed."""
    if M < 1:
        raise ValueError("M must be >= 1")
    u = seed_stream(seed, 0, *stream).uniform() if offset is None else float(offset)
    return 2.0 * np.pi * (np.arange(M) + u) / M


def oscillator_shell_ensemble(E0: float, M: int, seed: int = 0, offset: float | None = None,
                              stream: tuple = ()) -> Ensemble:
    """M equal-weight points on the harmonic orbit (x^2 + p^2)/2 = E0."""
    if E0 <= 0:
        raise ValueError("E0 must be positive")
    theta = stratified_phases(M, seed, offset, stream)
    r = math.sqrt(2.0 * E0)
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return Ensemble.uniform(pts, seed, system=OSCILLATOR, E0=E0)


def mode_amplitude(N: int, k: int, E0: float) -> float:
    """Site amplitude A with E0 = A^2 (N+1) sin^2(k pi / 2(N+1))."""
    return math.sqrt(E0 / ((N + 1) * math.sin(k * math.pi / (2 * (N + 1))) ** 2))


def fput_mode_ensemble(spec: SystemSpec, k: int, E0: float, M: int, seed: int = 0,
                       offset: float | None = None, stream: tuple = ()) -> Ensemble:
    """Single populated normal mode, phase-averaged over one mode period."""
    if not spec.is_fput:
        raise ValueError("FPUT spec required")
    N = spec.N
    if not 1 <= k <= N:
        raise ValueError(f"mode index k={k} outside 1..{N}")
    if E0 <= 0:
        raise ValueError("E0 must be positive")
    A = mode_amplitude(N, k, E0)
    w = mode_frequencies(N)[k - 1]
    Q0 = A * math.sqrt((N + 1) / 2.0)
    theta = stratified_phases(M, seed, offset, stream)
    Q = np.zeros((M, N))
    P = np.zeros((M, N))
    # free evolution by time theta / w rotates (w Q, P) clockwise
    Q[:, k - 1] = Q0 * np.cos(theta)
    P[:, k - 1] = -w * Q0 * np.sin(theta)
    S = mode_matrix(N)
    pts = np.hstack([Q @ S, P @ S])
    return Ensemble.uniform(pts, seed, system=FPUT, N=N, k=k, E0=E0, A=A)


def thermodynamic_sequence(lam: float, A: float, N: int) -> tuple[int, float]:
    """Mode index and energy for fixed wavelength and amplitude at size N."""
    k_real = 2.0 * (N + 1) / lam
    k = int(round(k_real))
    if k < 1 or abs(k - k_real) > 1e-9 or k > N:
        raise ValueError(f"2(N+1)/lambda = {k_real} is not a valid integer mode index")
    E0 = A ** 2 * (N + 1) * math.sin(k * math.pi / (2 * (N + 1))) ** 2
    return k, E0


def gaussian_energy_realizations(mean_E: float, d_E: float, count: int,
                                 seed: int | None = None) -> list[tuple[float, float]]:
    """Equal-weight stratified quantiles of a Gaussian truncated to E > 0.

    ``seed`` is accepted for interface symmetry; the quantile rule is deterministic.
    """
    if mean_E <= 0 or d_E < 0 or count < 1:
        raise ValueError("need mean_E > 0, d_E >= 0, count >= 1")
    w = 1.0 / count
    if d_E == 0:
        return [(float(mean_E), w)] * count
    a = -mean_E / d_E
    u = (np.arange(count) + 0.5) / count
    energies = stats.truncnorm.ppf(u, a, np.inf, loc=mean_E, scale=d_E)
    return [(float(e), w) for e in energies]


def truncated_gaussian_mean(mean_E: float, d_E: float) -> float:
    return float(stats.truncnorm.mean(-mean_E / d_E, np.inf, loc=mean_E, scale=d_E))


def initial_ensemble(spec: SystemSpec, E0: float, M: int, seed: int = 0, k: int = 1,
                     stream: tuple = ()) -> Ensemble:
    """Stationary starting ensemble for either system."""
    if spec.is_fput:
        return fput_mode_ensemble(spec, k, E0, M, seed, stream=stream)
    return oscillator_shell_ensemble(E0, M, seed, stream=stream)
