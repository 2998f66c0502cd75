"""Phase-space polynomials, Poisson brackets and the nested-bracket ansatz.

Builds the quartic oscillator H0(beta) = p^2/2 + x^2/2 + beta x^4/4, expands
the first two nested-bracket ansatz terms and solves the variational problem
on a harmonic energy shell, where the answer is known in closed form.
"""
import numpy as np

from acdrive.agp import assemble_quadratic_form, minimize
from acdrive.poly import PhasePolynomial as P, nested_bracket_ansatz, poisson_bracket
from acdrive.systems import SystemSpec, build_hamiltonian, oscillator_shell_ensemble

H0 = build_hamiltonian(SystemSpec.oscillator())
print("H0(beta=0.5):")
print(H0.at(0.5).to_text())

# canonical pair and a bracket with the quartic Hamiltonian
x, p = P.q(1, 0), P.p(1, 0)
print("\n{x, p} =", poisson_bracket(x, p).to_text())
print("{x^3 p, H0(1)} =")
print(poisson_bracket(x ** 3 * p, H0.at(1.0)).to_text())

# nested brackets X_1, X_2 at a few couplings
for beta in (0.0, 0.5, 1.0):
    X1, X2 = nested_bracket_ansatz(H0, beta, 2)
    print(f"\nbeta={beta}: X1 has {X1.n_terms} terms, X2 has {X2.n_terms} terms, deg X2 = {X2.degree}")

# At beta = 0 the shell E0 = 1 is an orbit of the harmonic oscillator and the
# best x^3 p, x p^3 gauge potential is exact.
ens = oscillator_shell_ensemble(1.0, 64, seed=0)
form = assemble_quadratic_form(ens, H0.at(0.0), [P.monomial(1, [3], [1]), P.monomial(1, [1], [3])])
gamma = minimize(form)
print("\noptimal (gamma1, gamma2) on the harmonic shell:", gamma, " expected", np.array([-5, -3]) / 32)
print("residual action:", form(gamma))
