"""Ramp protocol, ACD equations of motion and ensemble propagation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
from scipy.integrate import solve_ivp

from .poly import PhasePolynomial, PolynomialFamily, VectorEvaluator
from .systems import Ensemble, SystemSpec, build_hamiltonian

QUENCH_TAU = 3e-4


class IntegrationError(RuntimeError):
    """Propagation produced a non-finite state or could not take a step."""


@dataclass(frozen=True)
class RampProtocol:
    """beta(t) = beta_i + (beta_f - beta_i) sin^2((pi/2) sin^2(pi t / 2 tau))."""

    tau: float
    beta_initial: float = 0.0
    beta_final: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        eps = 1e-12 * max(1.0, self.tau)
        if np.any(t < -eps) or np.any(t > self.tau + eps):
            raise ValueError(f"t outside [0, {self.tau}]")
        return np.clip(t, 0.0, self.tau)

    def beta(self, t):
        t = self._check(t)
        v = np.pi * t / (2.0 * self.tau)
        u = 0.5 * np.pi * np.sin(v) ** 2
        out = self.beta_initial + (self.beta_final - self.beta_initial) * np.sin(u) ** 2
        return float(out) if out.ndim == 0 else out

    def beta_dot(self, t):
        t = self._check(t)
        v = np.pi * t / (2.0 * self.tau)
        u = 0.5 * np.pi * np.sin(v) ** 2
        # d/dt sin^2(u) = sin(2u) u',  u' = (pi/2) sin(2v) v'
        out = ((self.beta_final - self.beta_initial) * np.sin(2 * u)
               * 0.5 * np.pi * np.sin(2 * v) * np.pi / (2.0 * self.tau))
        return float(out) if out.ndim == 0 else out

    def time_at_beta(self, beta):
        """Inverse of beta(t) on [0, tau]."""
        frac = (np.asarray(beta, float) - self.beta_initial) / (self.beta_final - self.beta_initial)
        if np.any(frac < -1e-12) or np.any(frac > 1 + 1e-12):
            raise ValueError("beta outside the ramp range")
        frac = np.clip(frac, 0.0, 1.0)
        s = (2.0 / np.pi) * np.arcsin(np.sqrt(frac))
        out = (2.0 * self.tau / np.pi) * np.arcsin(np.sqrt(s))
        return float(out) if out.ndim == 0 else out


def beta_of_t(protocol: RampProtocol, t):
    return protocol.beta(t)


def beta_dot_of_t(protocol: RampProtocol, t):
    return protocol.beta_dot(t)


@dataclass
class DriveSpec:
    """H_ACD = H0(beta) + beta_dot * sum_j gamma_j(beta) X_j(beta).

    ``terms[j]`` is the beta-power series of X_j, ``coefficients[j]`` maps
    beta to gamma_j.  Empty lists give the unassisted drive.
    """

    system: SystemSpec
    terms: list[list[PhasePolynomial]] = field(default_factory=list)
    coefficients: list[Callable[[float], float]] = field(default_factory=list)
    label: str = "unassisted"

    def __post_init__(self):
        if len(self.terms) != len(self.coefficients):
            raise ValueError("one coefficient function per ansatz term")

    @classmethod
    def unassisted(cls, system: SystemSpec) -> "DriveSpec":
        return cls(system)

    @property
    def order(self) -> int:
        return len(self.terms)


class VectorField:
    """Hamilton's equations for the ACD Hamiltonian along a ramp.

    Call as ``field(t, z)`` with ``z`` of shape ``(M, 2N)``; returns ``dz/dt``.
    """

    def __init__(self, drive: DriveSpec, protocol: RampProtocol | None,
                 H0: PolynomialFamily | None = None, frozen_beta: float | None = None):
        if protocol is None and frozen_beta is None:
            raise ValueError("need a protocol or a frozen beta")
        self.drive = drive
        self.protocol = protocol
        self.frozen_beta = frozen_beta
        H0 = H0 if H0 is not None else build_hamiltonian(drive.system)
        self.H0 = H0
        n = drive.system.N
        self.dimension = n
        blocks = [H0.base, H0.linear_in_beta]
        self._block_index = []
        for j, series in enumerate(drive.terms):
            for m, poly in enumerate(series):
                if not poly.is_zero():
                    blocks.append(poly)
                    self._block_index.append((j, m))
        self._n_blocks = len(blocks)
        grads = [poly.derivative(i) for poly in blocks for i in range(2 * n)]
        self._grad = VectorEvaluator(grads)
        self._value = VectorEvaluator(blocks)

    def stage_weights(self, times) -> np.ndarray:
        """Block weights at each of ``times``, shape ``(len(times), n_blocks)``."""
        times = np.atleast_1d(np.asarray(times, float))
        w = np.zeros((times.size, self._n_blocks))
        w[:, 0] = 1.0
        if self.frozen_beta is not None:
            w[:, 1] = self.frozen_beta
            return w
        beta = np.atleast_1d(self.protocol.beta(times))
        bdot = np.atleast_1d(self.protocol.beta_dot(times))
        w[:, 1] = beta
        if self._block_index:
            gam = []
            for j, fn in enumerate(self.drive.coefficients):
                g = np.broadcast_to(np.asarray(fn(beta), float), beta.shape)
                if not np.all(np.isfinite(g)):
                    raise IntegrationError(f"coefficient {j} is not finite on the ramp")
                gam.append(g)
            for b, (j, m) in enumerate(self._block_index, start=2):
                w[:, b] = bdot * gam[j] * beta ** m
        return w

    def kernel_arrays(self):
        fvar, fexp, fcount, owner, coeffs, max_exp = self._grad.kernel_arrays()
        nv = 2 * self.dimension
        return fvar, fexp, fcount, owner // nv, owner % nv, coeffs, max_exp

    def _weights(self, t: float) -> np.ndarray:
        w = np.zeros(self._n_blocks)
        if self.frozen_beta is not None:
            w[0], w[1] = 1.0, self.frozen_beta
            return w
        beta = self.protocol.beta(t)
        bdot = self.protocol.beta_dot(t)
        w[0], w[1] = 1.0, beta
        if bdot != 0.0 and self._block_index:
            gam = []
            for j, fn in enumerate(self.drive.coefficients):
                g = float(fn(beta))
                if not math.isfinite(g):
                    raise IntegrationError(f"coefficient {j} is not finite at beta={beta}")
                gam.append(g)
            for b, (j, m) in enumerate(self._block_index, start=2):
                w[b] = bdot * gam[j] * beta ** m
        return w

    def gradient(self, t: float, z: np.ndarray) -> np.ndarray:
        """dH_ACD/dz with shape ``(M, 2N)``."""
        z2 = np.atleast_2d(z)
        vals = self._grad(z2).reshape(self._n_blocks, 2 * self.dimension, z2.shape[0])
        g = np.tensordot(self._weights(t), vals, axes=1)
        return g.T

    def __call__(self, t: float, z: np.ndarray) -> np.ndarray:
        g = self.gradient(t, z)
        n = self.dimension
        return np.concatenate([g[:, n:], -g[:, :n]], axis=1)

    def hamiltonian(self, t: float, z: np.ndarray) -> np.ndarray:
        z2 = np.atleast_2d(z)
        return self._weights(t) @ self._value(z2)


def acd_equations(drive: DriveSpec, protocol: RampProtocol) -> VectorField:
    return VectorField(drive, protocol)


def static_field(spec: SystemSpec, beta: float) -> VectorField:
    """Bare dynamics of H0 with beta held fixed."""
    return VectorField(DriveSpec.unassisted(spec), None, frozen_beta=beta)


@dataclass(frozen=True)
class IntegratorConfig:
    """``method`` is ``"rk4"`` (fixed ``step``) or ``"adaptive"`` (DOP853 at ``tolerance``)."""

    method: str = "rk4"
    step: float | None = None
    tolerance: float = 1e-10
    max_steps: int = 50_000_000

    def __post_init__(self):
        if self.method not in ("rk4", "adaptive"):
            raise ValueError(f"unknown integrator {self.method!r}")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if not 0 < self.tolerance <= 1e-2:
            raise ValueError("tolerance must lie in (0, 1e-2]")


def default_step(tau: float) -> float:
    """tau/2000, floored at 1e-5 and capped at 1e-2 for long ramps."""
    return min(max(min(tau / 2000.0, 1e-2), 1e-5), tau)


def _check_finite(z: np.ndarray, t: float) -> None:
    bad = ~np.all(np.isfinite(z), axis=1)
    if np.any(bad):
        raise IntegrationError(f"non-finite state for member {int(np.argmax(bad))} at t={t:.6g}")


_CHUNK = 128


@numba.njit(cache=True, nogil=True)
def _hamilton_rhs(z, w, dz, pw, g, val, fvar, fexp, fcount, tblock, tcomp, coeffs, max_exp):
    # z, dz, g: (nv, m); pw: (nv, kmax + 1, m).  Members sit in the innermost
    # axis so every loop below is a contiguous sweep over the chunk.
    nv, m = z.shape
    n = nv // 2
    for v in range(nv):
        for e in range(1, max_exp[v] + 1):
            for j in range(m):
                pw[v, e, j] = pw[v, e - 1, j] * z[v, j]
        g[v, :] = 0.0
    for t in range(coeffs.shape[0]):
        wt = w[tblock[t]]
        if wt == 0.0:
            continue
        c = coeffs[t] * wt
        for j in range(m):
            val[j] = c
        for k in range(fcount[t]):
            a = fvar[t, k]
            e = fexp[t, k]
            for j in range(m):
                val[j] *= pw[a, e, j]
        comp = tcomp[t]
        for j in range(m):
            g[comp, j] += val[j]
    for i in range(n):
        for j in range(m):
            dz[i, j] = g[n + i, j]
            dz[n + i, j] = -g[i, j]


@numba.njit(cache=True, nogil=True)
def _rk4_kernel(z0, W, h, fvar, fexp, fcount, tblock, tcomp, coeffs, max_exp):
    m_pts, nv = z0.shape
    n_steps = (W.shape[0] - 1) // 2
    kmax = 0
    for v in range(nv):
        if max_exp[v] > kmax:
            kmax = max_exp[v]
    out = z0.copy()
    bad = np.full(m_pts, -1)
    for start in range(0, m_pts, _CHUNK):
        stop = min(start + _CHUNK, m_pts)
        m = stop - start
        z = np.ascontiguousarray(out[start:stop].T)
        pw = np.ones((nv, kmax + 1, m))
        g = np.zeros((nv, m))
        val = np.zeros(m)
        k1 = np.zeros((nv, m))
        k2 = np.zeros((nv, m))
        k3 = np.zeros((nv, m))
        k4 = np.zeros((nv, m))
        y = np.zeros((nv, m))
        for i in range(n_steps):
            _hamilton_rhs(z, W[2 * i], k1, pw, g, val, fvar, fexp, fcount, tblock, tcomp, coeffs, max_exp)
            for v in range(nv):
                for j in range(m):
                    y[v, j] = z[v, j] + 0.5 * h * k1[v, j]
            _hamilton_rhs(y, W[2 * i + 1], k2, pw, g, val, fvar, fexp, fcount, tblock, tcomp, coeffs, max_exp)
            for v in range(nv):
                for j in range(m):
                    y[v, j] = z[v, j] + 0.5 * h * k2[v, j]
            _hamilton_rhs(y, W[2 * i + 1], k3, pw, g, val, fvar, fexp, fcount, tblock, tcomp, coeffs, max_exp)
            for v in range(nv):
                for j in range(m):
                    y[v, j] = z[v, j] + h * k3[v, j]
            _hamilton_rhs(y, W[2 * i + 2], k4, pw, g, val, fvar, fexp, fcount, tblock, tcomp, coeffs, max_exp)
            for v in range(nv):
                for j in range(m):
                    z[v, j] += (h / 6.0) * (k1[v, j] + 2.0 * k2[v, j] + 2.0 * k3[v, j] + k4[v, j])
            for j in range(m):
                if bad[start + j] < 0:
                    for v in range(nv):
                        if not np.isfinite(z[v, j]):
                            bad[start + j] = i
                            break
        out[start:stop] = z.T
    return out, bad


def _n_steps(t0: float, t1: float, step: float) -> int:
    return max(1, int(math.ceil((t1 - t0) / step - 1e-9)))


def rk4_integrate(fun, z: np.ndarray, t0: float, t1: float, step: float,
                  callback: Callable | None = None) -> np.ndarray:
    """Fixed-step RK4 from t0 to t1 with the step shrunk to land on t1.

    A :class:`VectorField` without ``callback`` runs in a compiled per-member
    loop; anything else goes through the generic array implementation.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if t1 == t0:
        return np.array(z, dtype=float)
    n = _n_steps(t0, t1, step)
    h = (t1 - t0) / n
    if isinstance(fun, VectorField) and callback is None:
        W = fun.stage_weights(t0 + 0.5 * h * np.arange(2 * n + 1))
        out, bad = _rk4_kernel(np.ascontiguousarray(z, dtype=float), W, h, *fun.kernel_arrays())
        if np.any(bad >= 0):
            m = int(np.argmax(bad >= 0))
            raise IntegrationError(f"non-finite state for member {m} at t={t0 + (bad[m] + 1) * h:.6g}")
        return out
    z = np.array(z, dtype=float)
    t = t0
    for i in range(n):
        k1 = fun(t, z)
        k2 = fun(t + 0.5 * h, z + 0.5 * h * k1)
        k3 = fun(t + 0.5 * h, z + 0.5 * h * k2)
        t_next = t0 + (i + 1) * h
        k4 = fun(t_next, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t_next
        if (i & 63) == 63:
            _check_finite(z, t)
        if callback is not None:
            callback(t, z)
    _check_finite(z, t1)
    return z


def _adaptive_integrate(fun, z: np.ndarray, t0: float, t1: float, tol: float) -> np.ndarray:
    if t1 == t0:
        return z.copy()
    shape = z.shape

    def flat(t, y):
        return fun(t, y.reshape(shape)).ravel()

    sol = solve_ivp(flat, (t0, t1), z.ravel(), method="DOP853", rtol=tol, atol=tol)
    if not sol.success:
        raise IntegrationError(f"adaptive integration failed: {sol.message}")
    out = sol.y[:, -1].reshape(shape)
    _check_finite(out, t1)
    return out


def propagate(z: np.ndarray, field: VectorField, t0: float, t1: float,
              config: IntegratorConfig | None = None, callback: Callable | None = None) -> np.ndarray:
    config = config or IntegratorConfig()
    if config.method == "adaptive":
        return _adaptive_integrate(field, np.atleast_2d(z), t0, t1, config.tolerance)
    tau = field.protocol.tau if field.protocol is not None else (t1 - t0)
    step = config.step or default_step(tau)
    if (t1 - t0) / step > config.max_steps:
        raise IntegrationError("step count exceeds max_steps")
    return rk4_integrate(field, np.atleast_2d(z), t0, t1, step, callback)


def evolve_ensemble(ensemble: Ensemble, field: VectorField, t0: float, t1: float,
                    config: IntegratorConfig | None = None, trajectory=None) -> Ensemble:
    """Propagate every member from t0 to t1; weights and order are preserved."""
    callback = trajectory.record if trajectory is not None else None
    if trajectory is not None:
        trajectory.record(t0, ensemble.points)
    z = propagate(ensemble.points, field, t0, t1, config, callback)
    return ensemble.with_points(z)


def run_ramp(ensemble: Ensemble, drive: DriveSpec, protocol: RampProtocol,
             config: IntegratorConfig | None = None) -> Ensemble:
    """Evolve through the full ramp t in [0, tau]."""
    return evolve_ensemble(ensemble, VectorField(drive, protocol), 0.0, protocol.tau, config)


def adiabatic_reference_trajectory(spec: SystemSpec, ensemble: Ensemble, protocol_slow: RampProtocol,
                                   grid: Sequence[float], config: IntegratorConfig | None = None
                                   ) -> list[Ensemble]:
    """Snapshots of a slow unassisted ramp where beta(t) crosses each grid value."""
    grid = np.asarray(grid, float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("beta grid must be strictly increasing")
    config = config or IntegratorConfig(step=0.02)
    field = VectorField(DriveSpec.unassisted(spec), protocol_slow)
    times = protocol_slow.time_at_beta(np.atleast_1d(grid))
    snaps = []
    z = np.array(ensemble.points)
    t = 0.0
    for t_next in np.atleast_1d(times):
        z = propagate(z, field, t, float(t_next), config)
        t = float(t_next)
        snaps.append(ensemble.with_points(z))
    return snaps


class TrajectoryWriter:
    """CSV dump ``t,member,q...,p...`` every ``stride`` recorded steps."""

    def __init__(self, path, dimension: int, stride: int = 1):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(["t", "member"] + [f"q{i + 1}" for i in range(dimension)]
                              + [f"p{i + 1}" for i in range(dimension)])
        self.stride = max(1, int(stride))
        self._count = 0

    def record(self, t: float, z: np.ndarray) -> None:
        if self._count % self.stride == 0:
            for m, row in enumerate(np.atleast_2d(z)):
                self._writer.writerow([repr(float(t)), m] + [repr(float(x)) for x in row])
        self._count += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
