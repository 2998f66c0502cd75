"""Classical figures of merit for non-adiabaticity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import IntegratorConfig, rk4_integrate, static_field
from .poly import PhasePolynomial, compile_evaluator
from .systems import Ensemble, SystemSpec, build_hamiltonian

ENERGY_VARIANCE = "energy_variance"
TEMPORAL_VARIANCE = "temporal_variance"


class UndefinedFoMError(ValueError):
    """The requested figure of merit does not exist for this input."""


@dataclass
class FoMResult:
    kind: str
    value: float
    normalization: str = "per-system"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("figures of merit are variances and cannot be negative")


def energy_variance(ensemble: Ensemble, H_final: PhasePolynomial, per_site: bool = False) -> float:
    """Weighted variance of ``H_final`` over the ensemble (optionally divided by N)."""
    values = compile_evaluator(H_final)(ensemble.points)
    var = ensemble.variance(values)
    return var / H_final.dimension if per_site else var


def final_energy_variance(ensemble: Ensemble, spec: SystemSpec, beta_final: float = 1.0) -> float:
    """Energy variance of H0(beta_final); per site for the FPUT chain."""
    return energy_variance(ensemble, build_hamiltonian(spec).at(beta_final), per_site=spec.is_fput)


def sigma_E_after_quench(spec: SystemSpec, ensemble: Ensemble, beta_final: float = 1.0) -> float:
    """Std of H0(beta_final) on the unchanged initial ensemble."""
    values = compile_evaluator(build_hamiltonian(spec).at(beta_final))(ensemble.points)
    return math.sqrt(ensemble.variance(values))


def characteristic_time(E0: float, sigma_E: float, omega: float = 1.0) -> float:
    """T_char = E0 / (omega sigma_E)."""
    if sigma_E <= 0:
        raise UndefinedFoMError("sigma_E = 0: the temporal-variance window is infinite for a "
                                "zero-width ensemble on this system")
    return E0 / (omega * sigma_E)


def harmonic_energy_signal(ensemble_final: Ensemble, spec: SystemSpec, T_char: float, samples: int = 256,
                           beta_final: float = 1.0, step: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble mean of H_lin at ``samples`` uniform times in [0, T_char] after the ramp."""
    if T_char <= 0:
        raise ValueError("T_char must be positive")
    if samples < 2:
        raise ValueError("need at least two samples")
    field = static_field(spec, beta_final)
    h_lin = compile_evaluator(build_hamiltonian(spec).base)
    times = np.linspace(0.0, T_char, samples)
    step = step or min(0.01, T_char / samples)
    z = np.array(ensemble_final.points)
    signal = np.empty(samples)
    signal[0] = ensemble_final.mean(h_lin(z))
    for i in range(1, samples):
        z = rk4_integrate(field, z, times[i - 1], times[i], step)
        signal[i] = ensemble_final.mean(h_lin(z))
    return times, signal


def temporal_variance(ensemble_final: Ensemble, spec: SystemSpec, tau: float, T_char: float,
                      samples: int = 256, beta_final: float = 1.0, omega: float | None = None,
                      step: float | None = None) -> float:
    """Variance over time of <H_lin> on [tau, tau + T_char] under static H0(beta_final).

    Restricted to the oscillator unless ``omega`` is given explicitly.  The
    dynamics after the ramp is autonomous, so the window is sampled from the
    final ensemble at relative times [0, T_char].
    """
    if spec.is_fput and omega is None:
        raise UndefinedFoMError("temporal variance is defined for the oscillator; pass omega to override")
    _, signal = harmonic_energy_signal(ensemble_final, spec, T_char, samples, beta_final, step)
    return float(np.var(signal))


def suppression_factor(var_unassisted: float, var_acd: float) -> float:
    """var_unassisted / var_acd; a zero denominator yields ``inf``."""
    if var_acd == 0:
        return math.inf
    return var_unassisted / var_acd
