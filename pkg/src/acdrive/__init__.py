"""Approximate counter-diabatic driving of classical nonlinear oscillators.

Modules
-------
poly
    Sparse phase-space polynomials and Poisson brackets.
systems
    Quartic oscillator, beta-FPUT chain, normal modes and initial ensembles.
dynamics
    Ramp protocol and ensemble integration of the driven equations.
agp
    Variational optimization of the gauge-potential coefficients and their fits.
fom
    Energy variance and temporal-variance figures of merit.
quantum
    Truncated Fock-space reference for the single oscillator.
analysis
    Duration sweeps, instability study, perturbation and overlap analyses.
"""

__version__ = "0.1.0"
