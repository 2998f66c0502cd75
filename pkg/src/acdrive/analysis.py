"""Experiment suites: duration sweeps, instability study, fit perturbations, overlaps."""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import simpson

from .agp import (CoefficientFit, FitQualityWarning, GammaTable, ansatz_series, default_beta_grid,
                  fit_table, optimize_from_snapshots, realization_snapshots)
from .dynamics import DriveSpec, IntegratorConfig, RampProtocol, run_ramp
from .fom import ENERGY_VARIANCE, final_energy_variance
from .systems import Ensemble, SystemSpec, gaussian_energy_realizations, initial_ensemble

QUENCH_TAU = 3e-4
RESULT_COLUMNS = ("system", "N", "k", "E0", "dE", "order", "tau", "fom_kind", "value", "seed", "M")

# stream label for FoM-evaluation ensembles; optimization uses (1, realization)
EVAL_STREAM = (2, 0)


def default_tau_grid(n: int = 24, lo: float = QUENCH_TAU, hi: float = 30.0) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def default_delta_grid(n: int = 41, half_width: float = 0.2) -> np.ndarray:
    return np.linspace(-half_width, half_width, n)


# -- results ------------------------------------------------------------------------

@dataclass
class ResultTable:
    """Rows following :data:`RESULT_COLUMNS`, plus optional extra columns."""

    rows: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def extend(self, other: "ResultTable") -> None:
        self.rows.extend(other.rows)

    def select(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def values(self, order: int, fom_kind: str = ENERGY_VARIANCE, **match) -> tuple[np.ndarray, np.ndarray]:
        rows = sorted(self.select(order=order, fom_kind=fom_kind, **match), key=lambda r: r["tau"])
        return np.array([r["tau"] for r in rows]), np.array([r["value"] for r in rows])

    def value(self, order: int, tau: float, fom_kind: str = ENERGY_VARIANCE, **match) -> float:
        rows = [r for r in self.select(order=order, fom_kind=fom_kind, **match) if math.isclose(r["tau"], tau)]
        if len(rows) != 1:
            raise KeyError(f"expected one row for order={order}, tau={tau}, got {len(rows)}")
        return rows[0]["value"]

    def columns(self) -> list[str]:
        extra = []
        for r in self.rows:
            extra += [k for k in r if k not in RESULT_COLUMNS and k not in extra]
        return list(RESULT_COLUMNS) + extra

    def to_csv(self, path) -> None:
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    @classmethod
    def from_csv(cls, path) -> "ResultTable":
        ints = {"N", "k", "order", "seed", "M"}
        rows = []
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                out = {}
                for key, v in r.items():
                    if key in ints:
                        out[key] = int(v)
                    elif key in ("system", "fom_kind"):
                        out[key] = v
                    else:
                        try:
                            out[key] = float(v)
                        except ValueError:
                            out[key] = v
                rows.append(out)
        return cls(rows)


# -- optimization pipeline -------------------------------------------------------------

@dataclass
class OptimizedCoefficients:
    """Tables and fits for several ansatz orders from one set of reference ramps."""

    system: SystemSpec
    E0: float
    d_E: float
    k: int
    seed: int
    tables: dict[int, GammaTable]
    fits: dict[int, list[CoefficientFit]]


def optimize_orders(system: SystemSpec, orders: Sequence[int] = (1, 2), E0: float = 1.0, k: int = 1,
                    d_E: float = 0.0, realizations: int = 40, M: int = 128, seed: int = 0,
                    tau_ref: float | None = None, beta_grid=None, degrees: tuple[int, int] = (3, 3),
                    gate: float = 0.02, basis: str = "auto", config: IntegratorConfig | None = None,
                    threads: int = 1) -> OptimizedCoefficients:
    """Optimize and fit every requested order.

    With ``d_E > 0`` the action is averaged over ``realizations`` energies
    drawn as stratified quantiles of a Gaussian truncated to E > 0.
    """
    beta_grid = default_beta_grid() if beta_grid is None else np.asarray(beta_grid, float)
    if tau_ref is None:
        tau_ref = 500.0 if system.is_fput else 2000.0
    energies = gaussian_energy_realizations(E0, d_E, realizations) if d_E > 0 else [(E0, 1.0)]

    def job(r):
        return realization_snapshots(system, energies[r][0], M, seed, k, r, tau_ref, beta_grid, config)

    snapshot_sets = _map(job, range(len(energies)), threads)
    weights = [w for _, w in energies]
    full = ansatz_series(system, max(orders), basis)
    tables, fits = {}, {}
    for order in orders:
        tables[order] = optimize_from_snapshots(system, snapshot_sets, weights, beta_grid, full[:order])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FitQualityWarning)
            fits[order] = fit_table(tables[order], degrees, gate)
    return OptimizedCoefficients(system, E0, d_E, k, seed, tables, fits)


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- sweeps ---------------------------------------------------------------------------

@dataclass
class SweepSpec:
    """One duration sweep; order 0 means unassisted driving."""

    system: SystemSpec
    tau_grid: np.ndarray = field(default_factory=default_tau_grid)
    orders: tuple[int, ...] = (0, 1, 2)
    k: int = 1
    E0: float = 1.0
    d_E: float = 0.0
    seed: int = 0
    M: int = 1024

    def __post_init__(self):
        self.tau_grid = np.asarray(self.tau_grid, float)
        if self.tau_grid.ndim != 1 or self.tau_grid.size == 0:
            raise ValueError("tau_grid must be a non-empty 1-d sequence")
        if np.any(self.tau_grid <= 0):
            raise ValueError("tau_grid must be positive")
        if np.any(np.diff(self.tau_grid) <= 0):
            raise ValueError("tau_grid must be sorted ascending")
        if any(o not in (0, 1, 2) for o in self.orders):
            raise ValueError("orders must be drawn from {0, 1, 2}")

    def row(self, order: int, tau: float, kind: str, value: float) -> dict:
        return {"system": self.system.kind, "N": self.system.N, "k": self.k, "E0": float(self.E0),
                "dE": float(self.d_E), "order": int(order), "tau": float(tau), "fom_kind": kind,
                "value": float(value), "seed": int(self.seed), "M": int(self.M)}


def evaluation_ensemble(spec: SweepSpec) -> Ensemble:
    return initial_ensemble(spec.system, spec.E0, spec.M, spec.seed, k=spec.k, stream=EVAL_STREAM)


def drive_for(system: SystemSpec, order: int, fits: Mapping[int, Sequence[CoefficientFit]] | None,
              basis: str = "auto") -> DriveSpec:
    if order == 0:
        return DriveSpec.unassisted(system)
    if not fits or order not in fits:
        raise KeyError(f"no coefficient fits for order {order}")
    coeffs = list(fits[order])
    if len(coeffs) != order:
        raise ValueError(f"order {order} needs {order} coefficients, got {len(coeffs)}")
    return DriveSpec(system, ansatz_series(system, order, basis), coeffs, f"order-{order}")


def quench_fom(system: SystemSpec, ensemble: Ensemble, drive: DriveSpec, tau: float,
               config: IntegratorConfig | None = None) -> float:
    out = run_ramp(ensemble, drive, RampProtocol(tau), config)
    return final_energy_variance(out, system)


def run_tau_sweep(spec: SweepSpec, fits: Mapping[int, Sequence[CoefficientFit]] | None = None,
                  config: IntegratorConfig | None = None, threads: int = 1) -> ResultTable:
    """Final energy variance (per site for FPUT) for every (order, tau).

    Rows are ordered by (order, tau) whatever the thread count.
    """
    ensemble = evaluation_ensemble(spec)
    drives = {o: drive_for(spec.system, o, fits) for o in spec.orders}
    jobs = [(o, float(t)) for o in spec.orders for t in spec.tau_grid]

    def job(item):
        o, t = item
        return spec.row(o, t, ENERGY_VARIANCE, quench_fom(spec.system, ensemble, drives[o], t, config))

    return ResultTable(_map(job, jobs, threads))


def quench_factors(table: ResultTable, tau: float = QUENCH_TAU) -> dict[int, float]:
    """Unassisted / order-n final variance at ``tau`` for each ACD order present."""
    base = table.value(0, tau)
    orders = sorted({r["order"] for r in table.rows if r["order"] > 0})
    return {o: base / table.value(o, tau) for o in orders}


# -- instability ---------------------------------------------------------------------

@dataclass
class InstabilityResult:
    coefficients: dict[float, OptimizedCoefficients]
    sweeps: dict[float, ResultTable]

    def inverted_at_quench(self, d_E: float) -> bool:
        t = self.sweeps[d_E]
        tau0 = float(min(r["tau"] for r in t.rows))
        return t.value(2, tau0) > t.value(1, tau0)


def instability_study(N: int = 5, k: int = 1, E0: float = 1.0, d_E_values: Sequence[float] = (0.0, 0.4),
                      realizations: int = 40, M_opt: int = 128, M_opt_broadened: int = 32,
                      M_eval: int = 1024, tau_grid=None, seed: int = 0, tau_ref: float | None = None,
                      config: IntegratorConfig | None = None, threads: int = 1) -> InstabilityResult:
    """Full sweeps for a long-wavelength initial state, with and without energy broadening."""
    system = SystemSpec.fput(N)
    tau_grid = default_tau_grid() if tau_grid is None else tau_grid
    coeffs, sweeps = {}, {}
    for d_E in d_E_values:
        M = M_opt if d_E == 0 else M_opt_broadened
        oc = optimize_orders(system, (1, 2), E0, k, d_E, realizations, M, seed, tau_ref,
                             config=config, threads=threads)
        coeffs[d_E] = oc
        spec = SweepSpec(system, tau_grid, (0, 1, 2), k, E0, d_E, seed, M_eval)
        sweeps[d_E] = run_tau_sweep(spec, oc.fits, config, threads)
    return InstabilityResult(coeffs, sweeps)


# -- Delta perturbation -----------------------------------------------------------------

@dataclass
class DeltaSensitivity:
    deltas: np.ndarray
    values: dict[int, np.ndarray]
    slopes: dict[int, float]
    tau: float

    def to_table(self, spec: SweepSpec) -> ResultTable:
        rows = []
        for order in sorted(self.values):
            for d, v in zip(self.deltas, self.values[order]):
                row = spec.row(order, self.tau, ENERGY_VARIANCE, v)
                row["Delta"] = float(d)
                rows.append(row)
        return ResultTable(rows)


def central_slope(deltas: np.ndarray, values: np.ndarray) -> float:
    """Central difference at Delta = 0 using the nearest grid points on each side."""
    deltas = np.asarray(deltas, float)
    if not np.any(deltas == 0):
        raise ValueError("Delta grid must contain 0")
    lo = deltas < 0
    hi = deltas > 0
    if not lo.any() or not hi.any():
        raise ValueError("Delta grid must extend on both sides of 0")
    i = int(np.flatnonzero(lo)[np.argmax(deltas[lo])])
    j = int(np.flatnonzero(hi)[np.argmin(deltas[hi])])
    return float((values[j] - values[i]) / (deltas[j] - deltas[i]))


def perturbed_fits(fits: Sequence[CoefficientFit], delta: float, which: int | None = None) -> list[CoefficientFit]:
    """Apply b1 -> b1 (1 + delta) to every fit, or only to fit ``which``."""
    return [f.perturbed(delta) if which is None or i == which else f for i, f in enumerate(fits)]


def delta_sensitivity(spec: SweepSpec, fits: Mapping[int, Sequence[CoefficientFit]], deltas=None,
                      tau: float = QUENCH_TAU, which: int | None = None,
                      config: IntegratorConfig | None = None, threads: int = 1) -> DeltaSensitivity:
    """Quench FoM against the fit perturbation Delta for every ACD order in ``fits``.

    ``which=None`` perturbs all coefficients together; an index perturbs one.
    """
    deltas = default_delta_grid() if deltas is None else np.asarray(deltas, float)
    ensemble = evaluation_ensemble(spec)
    orders = sorted(o for o in fits if o > 0)
    jobs = [(o, float(d)) for o in orders for d in deltas]

    def job(item):
        o, d = item
        drive = drive_for(spec.system, o, {o: perturbed_fits(fits[o], d, which)})
        return quench_fom(spec.system, ensemble, drive, tau, config)

    flat = _map(job, jobs, threads)
    values = {o: np.array(flat[i * len(deltas):(i + 1) * len(deltas)]) for i, o in enumerate(orders)}
    slopes = {o: central_slope(deltas, v) for o, v in values.items()}
    return DeltaSensitivity(deltas, values, slopes, tau)


# -- functional overlap ------------------------------------------------------------------

def as_function(obj) -> Callable:
    """Callable gamma(beta) from a fit, a callable or a ``[(beta, gamma)]`` table."""
    if isinstance(obj, CoefficientFit) or callable(obj):
        return obj
    from scipy.interpolate import CubicSpline
    xs, ys = zip(*obj)
    return CubicSpline(np.asarray(xs, float), np.asarray(ys, float))


def functional_overlap(f, g, nodes: int = 201) -> float:
    """<f, g>^2 / (<f, f> <g, g>) on beta in [0, 1], by composite Simpson."""
    if nodes < 3:
        raise ValueError("need at least 3 nodes")
    if nodes % 2 == 0:
        nodes += 1
    beta = np.linspace(0.0, 1.0, nodes)
    fv = np.asarray(as_function(f)(beta), float)
    gv = np.asarray(as_function(g)(beta), float)
    ff = simpson(fv * fv, x=beta)
    gg = simpson(gv * gv, x=beta)
    if ff <= 0 or gg <= 0:
        raise ValueError("zero-norm coefficient function")
    fg = simpson(fv * gv, x=beta)
    return float(min(fg * fg / (ff * gg), 1.0))


def overlap_curve(reference: OptimizedCoefficients, broadened: Mapping[float, OptimizedCoefficients],
                  order: int = 2) -> dict[int, dict[float, float]]:
    """F^2 of each coefficient of ``order`` against the unbroadened reference, per d_E."""
    out: dict[int, dict[float, float]] = {}
    for i, ref in enumerate(reference.fits[order]):
        out[i] = {0.0: 1.0} if reference.d_E == 0 else {}
        for d_E, oc in sorted(broadened.items()):
            out[i][float(d_E)] = functional_overlap(oc.fits[order][i], ref)
    return out


# -- quantum sweep ------------------------------------------------------------------------

QUANTUM_KINDS = ("infidelity", "q_energy_var", "delta_qm")


def quantum_coefficients(orders: Sequence[int], config=None, beta_grid=None,
                         degrees: tuple[int, int] = (3, 3), gate: float = 0.02) -> dict[int, list[CoefficientFit]]:
    """Eigenstate-variational Weyl coefficients, fitted like the classical ones."""
    from .quantum import HilbertConfig, build_operators, optimize_quantum_table
    config = config or HilbertConfig()
    ops = build_operators(config)
    out = {}
    for order in orders:
        if order == 0:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", FitQualityWarning)
            out[order] = fit_table(optimize_quantum_table(order, config, beta_grid, ops), degrees, gate)
    return out


def run_quantum_sweep(tau_grid, orders: Sequence[int] = (0, 1, 2),
                      fits: Mapping[int, Sequence[CoefficientFit]] | None = None, config=None,
                      E0: float = 1.0, seed: int = 0, steps: int | None = None, threads: int = 1) -> ResultTable:
    """Quantum FoMs for every (order, tau); ``fits`` defaults to the eigenstate-variational ones."""
    from .quantum import HilbertConfig, build_operators, run_quantum_ramp
    config = config or HilbertConfig()
    if fits is None:
        fits = quantum_coefficients(orders, config)
    ops = build_operators(config)
    spec = SweepSpec(SystemSpec.oscillator(), tau_grid, tuple(orders), 1, E0, 0.0, seed, config.dimension)
    jobs = [(o, float(t)) for o in spec.orders for t in spec.tau_grid]

    def job(item):
        o, t = item
        coeffs = [] if o == 0 else list(fits[o])
        values = run_quantum_ramp(t, coeffs, config, steps, ops)
        rows = []
        for kind, v in zip(QUANTUM_KINDS, values):
            row = spec.row(o, t, kind, v)
            row["n0"] = config.n0
            rows.append(row)
        return rows

    return ResultTable([r for rows in _map(job, jobs, threads) for r in rows])
