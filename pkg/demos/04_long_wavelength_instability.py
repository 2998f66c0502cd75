"""Long-wavelength initial states and the cure by energy broadening.

A k = 1 state at fixed total energy on five sites makes the second-order
drive worse than the first-order one in the quench limit.  Averaging the
action over a spread of initial energies restores it.  The script also looks
at why: the coefficient functions change little with the spread, but the
quench outcome is very sensitive to them when the spread is zero.
"""
import numpy as np

from acdrive.analysis import (QUENCH_TAU, SweepSpec, delta_sensitivity, functional_overlap, optimize_orders,
                              run_tau_sweep)
from acdrive.systems import SystemSpec

system = SystemSpec.fput(5)
taus = np.array([QUENCH_TAU, 0.1, 1.0, 3.0])
coeffs = {}
for d_E in (0.0, 0.4):
    M = 128 if d_E == 0 else 32    # 40 energy realizations when broadened
    oc = optimize_orders(system, (1, 2), d_E=d_E, M=M)
    coeffs[d_E] = oc
    table = run_tau_sweep(SweepSpec(system, taus, d_E=d_E, M=128), oc.fits)
    print(f"\nd_E = {d_E}")
    print("    tau     unassisted     order 1     order 2")
    for t in taus:
        print(f"{t:8.3g}  " + "  ".join(f"{table.value(o, t):10.3e}" for o in (0, 1, 2)))

# how far the broadened coefficients are from the sharp ones
print("\noverlap F^2 with the d_E = 0 coefficients:")
for order in (1, 2):
    for i in range(order):
        F = functional_overlap(coeffs[0.4].fits[order][i], coeffs[0.0].fits[order][i])
        print(f"  order {order}, gamma{i + 1}: {F:.4f}")

# sensitivity of the quench FoM to b1 -> b1 (1 + Delta)
deltas = np.linspace(-0.02, 0.02, 5)
for d_E, oc in coeffs.items():
    spec = SweepSpec(system, [QUENCH_TAU], orders=(1, 2), d_E=d_E, M=256)
    res = delta_sensitivity(spec, oc.fits, deltas)
    print(f"\nd_E = {d_E}: dFoM/dDelta at 0 = order 1 {res.slopes[1]:.3e}, order 2 {res.slopes[2]:.3e}")
    for d, v1, v2 in zip(deltas, res.values[1], res.values[2]):
        print(f"  Delta={d:+.3f}  order 1 {v1:.4e}  order 2 {v2:.4e}")
