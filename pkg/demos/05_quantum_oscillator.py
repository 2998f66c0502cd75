"""Quantum counterpart of the oscillator drive on a truncated Fock basis.

The classical x^3 p and x p^3 terms become symmetrized operators.  Their
coefficients are optimized in the instantaneous ground state, and the
ground state is ramped from beta = 0 to 1.  The script reports infidelity,
energy variance and the dephased variance of the harmonic energy.
"""
import numpy as np

from acdrive.analysis import quantum_coefficients, run_quantum_sweep
from acdrive.quantum import HilbertConfig, build_operators, eigenstate_action
from acdrive.agp import minimize

cfg = HilbertConfig(dimension=128, n0=0)
ops = build_operators(cfg)
for beta in (0.0, 0.5, 1.0):
    g = minimize(eigenstate_action(ops, beta, 2))
    print(f"beta={beta}: optimal Weyl coefficients {g}")

fits = quantum_coefficients((1, 2), cfg)
taus = np.geomspace(3e-4, 10, 5)
table = run_quantum_sweep(taus, (0, 1, 2), fits, cfg)
print("\n    tau     infidelity: unassisted     order 1     order 2")
for t in taus:
    print(f"{t:8.3g}              " + "  ".join(f"{table.value(o, t, 'infidelity'):10.3e}" for o in (0, 1, 2)))
q = taus[0]
print(f"quench infidelity suppression: order 1 x{table.value(0, q, 'infidelity') / table.value(1, q, 'infidelity'):.3g},"
      f" order 2 x{table.value(0, q, 'infidelity') / table.value(2, q, 'infidelity'):.3g}")
