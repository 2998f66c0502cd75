"""Approximate counter-diabatic driving of a single quartic oscillator.

Optimizes first- and second-order gauge-potential coefficients along a slow
reference ramp, fits them with rational functions and compares the final
energy variance of unassisted and assisted ramps over a range of durations.
"""
import numpy as np

from acdrive.analysis import SweepSpec, optimize_orders, quench_factors, run_tau_sweep
from acdrive.dynamics import DriveSpec, RampProtocol, run_ramp
from acdrive.fom import characteristic_time, sigma_E_after_quench, temporal_variance
from acdrive.systems import SystemSpec, oscillator_shell_ensemble

system = SystemSpec.oscillator()
oc = optimize_orders(system, orders=(1, 2), E0=1.0, M=128)

print(" beta   gamma1(o1)   gamma1(o2)   gamma2(o2)")
for beta in np.linspace(0, 1, 6):
    g1 = oc.fits[1][0](beta)
    g21, g22 = (f(beta) for f in oc.fits[2])
    print(f"{beta:5.2f}  {g1:11.6f}  {g21:11.6f}  {g22:11.6f}")
print("fit residuals:", [f"{f.residual:.1e}" for o in (1, 2) for f in oc.fits[o]])

taus = np.geomspace(3e-4, 30, 9)
table = run_tau_sweep(SweepSpec(system, taus, M=256), oc.fits)
print("\n    tau     unassisted     order 1     order 2")
for t in taus:
    print(f"{t:8.3g}  " + "  ".join(f"{table.value(o, t):10.3e}" for o in (0, 1, 2)))
f = quench_factors(table)
print(f"quench suppression: order 1 x{f[1]:.3g}, order 2 x{f[2]:.4g}")

# temporal variance of the harmonic energy after an unassisted ramp
ens = oscillator_shell_ensemble(1.0, 256, seed=1)
T_char = characteristic_time(1.0, sigma_E_after_quench(system, ens))
for tau in (3e-4, 1.0, 10.0):
    out = run_ramp(ens, DriveSpec.unassisted(system), RampProtocol(tau))
    print(f"tau={tau:g}: temporal variance of <H_lin> = {temporal_variance(out, system, tau, T_char):.3e}")
