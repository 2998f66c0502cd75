"""Command-line entry point: ``acdrive optimize | sweep | analyze | quantum-sweep``.

Every command reads an optional JSON config (unknown keys are rejected),
applies flag overrides, writes its outputs and a ``manifest.json`` beside
them.  Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import analysis, io
from .agp import SingularFormWarning, default_beta_grid
from .dynamics import IntegrationError, IntegratorConfig
from .fom import UndefinedFoMError
from .quantum import HilbertConfig, NormDriftError
from .systems import SystemSpec, thermodynamic_sequence

log = logging.getLogger("acdrive")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

DEFAULTS = {
    "system": {"kind": "oscillator", "N": 1, "k": 1, "E0": 1.0, "lambda": None, "A": None},
    "ensemble": {"M": 128, "M_eval": 1024, "seed": 0, "d_E": 0.0, "realizations": 40},
    "optimization": {"ansatz_order": 2, "beta_grid": 101, "tau_ref": None, "fit_degrees": [3, 3],
                     "gate": 0.02, "basis": "auto"},
    "dynamics": {"integrator": "rk4", "step": None, "tolerance": 1e-10},
    "experiment": {"tau_grid": {"lo": 3e-4, "hi": 30.0, "n": 24}, "orders": [0, 1, 2],
                   "Delta_grid": {"lo": -0.2, "hi": 0.2, "n": 41}, "tau_quench": 3e-4,
                   "dE_grid": {"lo": 0.0, "hi": 1.5, "n": 16}, "perturb": None},
    "quantum": {"dimension": 128, "n0": 0, "coefficients": "quantum", "steps": None},
    "output": {"dir": "results"},
}


class ConfigError(ValueError):
    pass


def merge_config(user: dict, base: dict = DEFAULTS, path: str = "") -> dict:
    """Deep-merge ``user`` into a copy of ``base``; unknown keys raise ConfigError."""
    out = copy.deepcopy(base)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and key not in ("tau_grid", "Delta_grid", "dE_grid"):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            out[key] = merge_config(value, base[key], where)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        user = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be an object")
    return merge_config(user)


def parse_grid(spec, name: str) -> np.ndarray:
    """A grid from a list, a ``{lo, hi, n}`` object (log-spaced for tau) or ``"lo:hi:n"``."""
    if isinstance(spec, str):
        try:
            lo, hi, n = spec.split(":")
            spec = {"lo": float(lo), "hi": float(hi), "n": int(n)}
        except ValueError as exc:
            raise ConfigError(f"{name}: expected 'lo:hi:n', got {spec!r}") from exc
    if isinstance(spec, dict):
        if set(spec) != {"lo", "hi", "n"}:
            raise ConfigError(f"{name}: grid object needs exactly lo, hi, n")
        lo, hi, n = float(spec["lo"]), float(spec["hi"]), int(spec["n"])
        if n < 1 or hi < lo:
            raise ConfigError(f"{name}: invalid grid bounds")
        if name == "tau_grid":
            if lo <= 0:
                raise ConfigError("tau_grid must be positive")
            return np.geomspace(lo, hi, n)
        return np.linspace(lo, hi, n)
    try:
        grid = np.asarray(spec, float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: not a numeric grid") from exc
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigError(f"{name}: must be a non-empty list")
    return grid


def resolve_system(cfg: dict) -> tuple[SystemSpec, int, float]:
    s = cfg["system"]
    try:
        if s["kind"] == "oscillator":
            return SystemSpec.oscillator(), 1, float(s["E0"])
        spec = SystemSpec.fput(int(s["N"]))
        if s["lambda"] is not None or s["A"] is not None:
            if s["lambda"] is None or s["A"] is None:
                raise ConfigError("lambda and A must be given together")
            k, E0 = thermodynamic_sequence(float(s["lambda"]), float(s["A"]), spec.N)
            return spec, k, E0
        k = int(s["k"])
        if not 1 <= k <= spec.N:
            raise ConfigError(f"mode index k={k} outside 1..{spec.N}")
        return spec, k, float(s["E0"])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def integrator(cfg: dict) -> IntegratorConfig:
    d = cfg["dynamics"]
    try:
        return IntegratorConfig(d["integrator"], d["step"], float(d["tolerance"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def hilbert(cfg: dict) -> HilbertConfig:
    q = cfg["quantum"]
    try:
        return HilbertConfig(int(q["dimension"]), int(q["n0"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def output_dir(cfg: dict) -> Path:
    out = Path(cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _optimize(cfg: dict, orders, d_E: float | None = None, threads: int = 1) -> analysis.OptimizedCoefficients:
    system, k, E0 = resolve_system(cfg)
    e, o = cfg["ensemble"], cfg["optimization"]
    d_E = float(e["d_E"]) if d_E is None else d_E
    return analysis.optimize_orders(system, orders, E0, k, d_E, int(e["realizations"]), int(e["M"]),
                                    int(e["seed"]), o["tau_ref"], default_beta_grid(int(o["beta_grid"])),
                                    tuple(o["fit_degrees"]), float(o["gate"]), o["basis"], integrator(cfg),
                                    threads)


def _sweep_spec(cfg: dict, tau_grid=None, orders=None, d_E: float | None = None) -> analysis.SweepSpec:
    system, k, E0 = resolve_system(cfg)
    e, x = cfg["ensemble"], cfg["experiment"]
    tau_grid = parse_grid(x["tau_grid"], "tau_grid") if tau_grid is None else tau_grid
    orders = tuple(x["orders"]) if orders is None else orders
    d_E = float(e["d_E"]) if d_E is None else d_E
    try:
        return analysis.SweepSpec(system, tau_grid, orders, k, E0, d_E, int(e["seed"]), int(e["M_eval"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_fits(paths) -> dict:
    fits = {}
    for p in paths or ():
        try:
            meta, f = io.read_coefficient_file(p)
        except FileNotFoundError as exc:
            raise ConfigError(f"coefficient file {p} not found") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        fits[int(meta["ansatz_order"])] = f
    return fits


def _finish(out: Path, command: str, cfg: dict, inputs, outputs) -> None:
    manifest = out / "manifest.json"
    io.write_manifest(manifest, command, cfg, inputs, outputs)
    for p in outputs:
        print(p)
    print(manifest)


# -- commands --------------------------------------------------------------------------

def cmd_optimize(cfg: dict, args) -> int:
    order = int(cfg["optimization"]["ansatz_order"])
    if order < 1:
        raise ConfigError("ansatz_order must be >= 1")
    oc = _optimize(cfg, tuple(range(1, order + 1)), threads=args.threads)
    out = output_dir(cfg)
    outputs = []
    for o in sorted(oc.fits):
        path = out / f"coefficients_order{o}.json"
        io.write_coefficient_file(path, oc, o)
        table = out / f"gamma_order{o}.csv"
        io.write_gamma_csv(table, oc.tables[o])
        outputs += [path, table]
    _finish(out, "optimize", cfg, [args.config] if args.config else [], outputs)
    singular = sorted({b for t in oc.tables.values() for b in t.singular})
    if singular:
        print(f"numerical failure: singular action at beta = {singular}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_sweep(cfg: dict, args) -> int:
    if args.quantum:
        return cmd_quantum_sweep(cfg, args)
    fits = _load_fits(args.coefficients)
    spec = _sweep_spec(cfg)
    missing = [o for o in spec.orders if o > 0 and o not in fits]
    if missing:
        raise ConfigError(f"no coefficient file for orders {missing}; pass --coefficients")
    table = analysis.run_tau_sweep(spec, fits, integrator(cfg), args.threads)
    out = output_dir(cfg)
    path = out / "sweep.csv"
    table.to_csv(path)
    if args.quench_factors:
        tau_q = float(cfg["experiment"]["tau_quench"])
        if 0 not in spec.orders or not np.any(np.isclose(spec.tau_grid, tau_q)):
            raise ConfigError("--quench-factors needs order 0 and tau_quench in the tau grid")
        for o, f in analysis.quench_factors(table, float(spec.tau_grid[np.isclose(spec.tau_grid, tau_q)][0])).items():
            print(f"quench suppression order {o}: {f:.4g}")
    _finish(out, "sweep", cfg, ([args.config] if args.config else []) + list(args.coefficients or []), [path])
    return EXIT_OK


def cmd_quantum_sweep(cfg: dict, args) -> int:
    q = cfg["quantum"]
    hc = hilbert(cfg)
    orders = tuple(cfg["experiment"]["orders"])
    source = q["coefficients"]
    if source == "classical":
        fits = _load_fits(args.coefficients)
        missing = [o for o in orders if o > 0 and o not in fits]
        if missing:
            raise ConfigError(f"classical coefficients requested but missing for orders {missing}")
    elif source == "quantum":
        fits = analysis.quantum_coefficients(orders, hc)
    else:
        raise ConfigError("quantum.coefficients must be 'quantum' or 'classical'")
    tau_grid = parse_grid(cfg["experiment"]["tau_grid"], "tau_grid")
    table = analysis.run_quantum_sweep(tau_grid, orders, fits, hc, float(cfg["system"]["E0"]),
                                       int(cfg["ensemble"]["seed"]), q["steps"], args.threads)
    out = output_dir(cfg)
    path = out / "quantum_sweep.csv"
    table.to_csv(path)
    _finish(out, "quantum-sweep", cfg, ([args.config] if args.config else []) + list(args.coefficients or []),
            [path])
    return EXIT_OK


def cmd_analyze(cfg: dict, args) -> int:
    out = output_dir(cfg)
    x = cfg["experiment"]
    inputs = ([args.config] if args.config else []) + list(args.coefficients or [])
    if args.what == "delta":
        d_E = float(cfg["ensemble"]["d_E"]) if args.dE is None else args.dE
        fits = _load_fits(args.coefficients)
        if not fits:
            fits = _optimize(cfg, (1, 2), d_E, args.threads).fits
        tau_q = float(x["tau_quench"])
        spec = _sweep_spec(cfg, [tau_q], tuple(sorted(fits)), d_E)
        deltas = parse_grid(x["Delta_grid"], "Delta_grid")
        res = analysis.delta_sensitivity(spec, fits, deltas, tau_q, x["perturb"], integrator(cfg), args.threads)
        path = out / "delta.csv"
        res.to_table(spec).to_csv(path)
        for o, s in sorted(res.slopes.items()):
            print(f"slope at Delta=0, order {o}: {s:.4g}")
    elif args.what == "overlap":
        grid = parse_grid(args.dE_grid if args.dE_grid else x["dE_grid"], "dE_grid")
        order = int(cfg["optimization"]["ansatz_order"])
        ref = _optimize(cfg, (order,), 0.0, args.threads)
        broadened = {float(d): (ref if d == 0 else _optimize(cfg, (order,), float(d), args.threads)) for d in grid}
        curve = analysis.overlap_curve(ref, broadened, order)
        path = out / "overlap.csv"
        with open(path, "w") as fh:
            fh.write("dE,coefficient,overlap\n")
            for i, row in curve.items():
                for d, v in sorted(row.items()):
                    fh.write(f"{d!r},{i + 1},{v!r}\n")
    elif args.what == "instability":
        system, k, E0 = resolve_system(cfg)
        if not system.is_fput:
            raise ConfigError("the instability study needs an FPUT system")
        e = cfg["ensemble"]
        res = analysis.instability_study(system.N, k, E0, (0.0, float(args.dE if args.dE is not None else 0.4)),
                                         int(e["realizations"]), int(e["M"]), min(int(e["M"]), 32),
                                         int(e["M_eval"]), parse_grid(x["tau_grid"], "tau_grid"), int(e["seed"]),
                                         cfg["optimization"]["tau_ref"], integrator(cfg), args.threads)
        table = analysis.ResultTable()
        for t in res.sweeps.values():
            table.extend(t)
        path = out / "instability.csv"
        table.to_csv(path)
        for d_E in res.sweeps:
            print(f"d_E={d_E}: order 2 worse than order 1 at quench: {res.inverted_at_quench(d_E)}")
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(args.what)
    _finish(out, f"analyze {args.what}", cfg, inputs, [path])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acdrive", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override ensemble.seed")
    common.add_argument("--out", help="override output.dir")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent jobs")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("optimize", parents=[common], help="optimize and fit gauge-potential coefficients")

    sw = sub.add_parser("sweep", parents=[common], help="final energy variance over ramp durations")
    sw.add_argument("--coefficients", nargs="*", help="coefficient JSON files, one per order")
    sw.add_argument("--quench-factors", action="store_true", help="print suppression at tau_quench")
    sw.add_argument("--quantum", action="store_true", help="run the quantum reference instead")

    an = sub.add_parser("analyze", parents=[common], help="delta | overlap | instability")
    an.add_argument("what", choices=["delta", "overlap", "instability"])
    an.add_argument("--coefficients", nargs="*")
    an.add_argument("--dE", type=float, help="energy broadening for delta / instability")
    an.add_argument("--dE-grid", dest="dE_grid", help="lo:hi:n grid for overlap")

    qs = sub.add_parser("quantum-sweep", parents=[common], help="quantum oscillator FoMs over durations")
    qs.add_argument("--coefficients", nargs="*")
    return parser


COMMANDS = {"optimize": cmd_optimize, "sweep": cmd_sweep, "analyze": cmd_analyze,
            "quantum-sweep": cmd_quantum_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["ensemble"]["seed"] = args.seed
        if args.out is not None:
            cfg["output"]["dir"] = args.out
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        with warnings.catch_warnings():
            warnings.simplefilter("error", SingularFormWarning)
            return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, NormDriftError, UndefinedFoMError, SingularFormWarning,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
