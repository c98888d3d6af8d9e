"""
Truncating a diagonal operator
==============================

The simplest pair: the operator diag(k^2 pi^2) on C^64 and its restriction
to the first n modes.  The defect is known in closed form, so this is a
good first look at what the defect report contains.
"""

import math

import numpy as np

from quasiunitary import calculus as calc
from quasiunitary import scenarios as sc
from quasiunitary.cli import fit_order
from quasiunitary.forms import SectorialityConstants, sectoriality_constants

lam = (np.arange(1, 65) * math.pi) ** 2

# %%
# One family member per n; eps is 1/n.
family = [sc.build_fourier(lam, n) for n in (2, 4, 8, 16)]
for b in family:
    r = b.report
    print(f"n = {b.extras['n']:2d}  delta = {r.delta:.6f}  1/((n+1) pi) = {1 / ((b.extras['n'] + 1) * math.pi):.6f}")

# %%
# delta behaves like eps; the n + 1 offset pulls the fitted order below one at small n.
fit = fit_order([(b.eps, b.report.delta) for b in family])
print(f"fitted order {fit.slope:.3f}")

# %%
# Functions of the operators follow along.  Both the shifted resolvent and
# the heat semigroup differ by at most a constant times delta.
consts = SectorialityConstants.common(*[sectoriality_constants(f) for b in family for f in (b.f0, b.fe)])
psis = [calc.resolvent_shift(consts.omega, 0.5 * (consts.theta_min + math.pi)),
        calc.exponential(1.0, consts.omega, 0.5 * (consts.theta_min + 0.5 * math.pi))]
rows, fits = calc.verify_calculus_convergence(
    [(b.eps, b.f0, b.fe, b.J, b.report) for b in family], psis, "eig", consts)
for name, f in fits.items():
    print(f"{name:32s} C = {f.C:.3e}  worst ratio to C*delta = {f.max_ratio:.2f}")
