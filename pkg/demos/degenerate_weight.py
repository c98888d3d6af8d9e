"""
A weight that vanishes at the boundary
======================================

-u'' = lambda x^(-1/2) u on (0, 1) with Dirichlet ends.  Capping the
singular weight at 1/eps gives a regular problem; the pair is linked by
multiplication with the square root of the weight ratio.
"""

import numpy as np
import scipy.optimize as so
from scipy.special import jv

from quasiunitary import scenarios as sc

coef = sc.DegenerateCoefficient(0.5)

# %%
# The ground state is known through the first zero of J_{2/3}.
j = so.brentq(lambda x: jv(2.0 / 3.0, x), 2.0, 4.5)
print(f"exact ground state {(0.75 * j) ** 2:.6f}")

# %%
# The identification maps are unitary here, so only the form defects move.
for eps in (0.2, 0.1, 0.05, 0.01):
    b = sc.build_degenerate(coef, 400, eps)
    r = b.report
    lam = np.sort(b.fe.eigenvalues().real)[0]
    print(f"eps = {eps:4.2f}  delta = {r.delta:.2e}  A2 = {r.d_A2:.1e}  A3 = {max(r.d_A3a, r.d_A3b):.1e}"
          f"  ground state = {lam:.6f}")
