"""The same drive on a two-site chain and on a fifty-site chain.

Keeping the wavelength (lambda = 6) and site amplitude fixed while growing
the chain gives an N-independent energy density.  The optimized coefficient
tables and the quench suppression factors then barely depend on N.
"""
import math

import numpy as np

from acdrive.analysis import QUENCH_TAU, SweepSpec, optimize_orders, quench_factors, run_tau_sweep
from acdrive.systems import SystemSpec, mode_frequencies, thermodynamic_sequence

A = 2 / math.sqrt(3)
results = {}
for N, M in ((2, 128), (50, 32)):
    k, E0 = thermodynamic_sequence(6.0, A, N)
    system = SystemSpec.fput(N)
    print(f"N={N}: mode k={k}, E0={E0:g}, omega_k={mode_frequencies(N)[k - 1]:.4f}")
    oc = optimize_orders(system, (1, 2), E0=E0, k=k, M=M)
    table = run_tau_sweep(SweepSpec(system, [QUENCH_TAU, 1.0], k=k, E0=E0, M=256), oc.fits)
    results[N] = oc
    f = quench_factors(table)
    print(f"  quench suppression: order 1 x{f[1]:.3g}, order 2 x{f[2]:.4g}")
    print(f"  per-site variance at tau=1: " +
          ", ".join(f"order {o}: {table.value(o, 1.0):.3e}" for o in (0, 1, 2)))

for order in (1, 2):
    g2, g50 = results[2].tables[order].gammas, results[50].tables[order].gammas
    print(f"order {order}: max relative table difference N=2 vs N=50 = {np.max(np.abs(g50 - g2) / np.abs(g2)):.2e}")
