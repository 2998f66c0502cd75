"""Coefficient files, gamma tables and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable

from . import __version__
from .agp import CoefficientFit, GammaTable
from .analysis import OptimizedCoefficients


def coefficient_record(oc: OptimizedCoefficients, order: int) -> dict:
    return {
        "system": oc.system.kind,
        "N": oc.system.N,
        "k": oc.k,
        "E0": float(oc.E0),
        "d_E": float(oc.d_E),
        "ansatz_order": int(order),
        "seed": int(oc.seed),
        "coefficients": [f.to_dict() for f in oc.fits[order]],
    }


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_coefficient_file(path, oc: OptimizedCoefficients, order: int) -> None:
    write_json(path, coefficient_record(oc, order))


def read_coefficient_file(path) -> tuple[dict, list[CoefficientFit]]:
    """Return ``(metadata, fits)``; raises ``ValueError`` on a malformed file."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    missing = {"system", "N", "k", "E0", "d_E", "ansatz_order", "seed", "coefficients"} - set(data)
    if missing:
        raise ValueError(f"{path}: missing keys {sorted(missing)}")
    fits = [CoefficientFit.from_dict(d) for d in data["coefficients"]]
    if len(fits) != data["ansatz_order"]:
        raise ValueError(f"{path}: {len(fits)} coefficients for ansatz order {data['ansatz_order']}")
    meta = {k: v for k, v in data.items() if k != "coefficients"}
    return meta, fits


def write_gamma_csv(path, table: GammaTable) -> None:
    """beta, gamma_1..gamma_l, action, bare_action."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta"] + [f"gamma{j + 1}" for j in range(table.order)] + ["action", "bare_action"])
        for i, b in enumerate(table.betas):
            w.writerow([repr(float(b))] + [repr(float(g)) for g in table.gammas[i]]
                       + [repr(float(table.actions[i])), repr(float(table.bare_actions[i]))])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, config: dict, inputs: Iterable = (), outputs: Iterable = ()) -> None:
    """Resolved config, library version and sha256 of every input and output file."""
    write_json(path, {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(p): file_digest(p) for p in outputs},
    })
