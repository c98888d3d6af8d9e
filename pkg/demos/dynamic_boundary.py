"""
A diffusion with dynamic boundary conditions
============================================

On the unit square the state is a pair (interior values, boundary values)
and the boundary has its own diffusion.  Perturbing every coefficient by
eps moves the operator by order eps.
"""

import numpy as np

from quasiunitary import invariance as inv
from quasiunitary import scenarios as sc
from quasiunitary.cli import fit_order

W = sc.WentzellCoefficients
base = W.family_member(0.0)

# %%
# Same coefficients: nothing to measure.
print("identical coefficients, delta =", sc.build_wentzell(16, base, base).report.delta)

# %%
# Perturbed coefficients: delta is linear in eps and stays under the
# bound computed from the coefficient differences alone.
eps_list = (0.1, 0.05, 0.025)
family = [sc.build_wentzell(16, base, W.family_member(e), e) for e in eps_list]
for b in family:
    print(f"eps = {b.eps:5.3f}  delta = {b.report.delta:.5f}  bound = {b.extras['bound']:.5f}")
print(f"order {fit_order([(b.eps, b.report.delta) for b in family]).slope:.3f}")

# %%
# With lumped masses the discrete heat semigroup is positive and does
# not increase the maximum, just like the continuous one.
lumped = [sc.build_wentzell(16, base, W.family_member(e), e, lumped=True) for e in eps_list]
for r in inv.check_positivity(lumped[0].f0, [0.1, 1.0]):
    print(f"t = {r.t}: min entry {r.min_entry:.2e}, max row sum {r.max_row_sum:.4f} -> {r.status}")

# %%
# L^4 distance between the two semigroups, interpolated from L^2 and L^inf.
rows = inv.lp_convergence_study(lumped[0].f0, [(b.eps, b.fe, b.J) for b in lumped],
                                inv.heat_phi(0.5), [4.0])
print("L4 bound", [round(r.lp_bound, 4) for r in rows])
