"""
Thin tubes around a star graph
==============================

Three unit edges meet at a vertex carrying a coupling of strength one.
Thickening the edges to width eps and the vertex to an eps-square gives a
planar domain whose Neumann Laplacian (with a matched Robin term on the
vertex square) approaches the graph operator as eps shrinks.

Takes about half a minute.
"""

import numpy as np

from quasiunitary import scenarios as sc
from quasiunitary import spectra as spc
from quasiunitary.cli import fit_order

graph = sc.MetricGraph.star(3, 1.0, 1.0)
robin = sc.RobinData.from_graph(graph)

# %%
# Exact eigenvalues of the star: roots of k tan k = 1 and the odd
# multiples of pi/2, the latter twice.
exact = sc.star_graph_eigenvalues(3, 1.0, 1.0, 3)
print("graph eigenvalues", [(round(l, 4), m) for l, m in exact])

# %%
# The tube family.  The mesh keeps a fixed number of cells across each tube.
family = [sc.build_graphtube(graph, robin, eps) for eps in (0.2, 0.1, 0.05)]
for b in family:
    lam = np.sort(b.fe.eigenvalues().real)[:4]
    print(f"eps = {b.eps:4.2f}  dofs = {b.fe.dim:5d}  delta = {b.report.delta:.3f}  lowest = {np.round(lam, 3)}")

# %%
# Multiplicities carry over once delta is small enough.  At eps = 0.2 the
# defect is still too large for the count to be decisive.
f0 = family[0].f0
clusters = sorted(spc.spectrum(f0), key=lambda c: c[0].real)[:4]
for b in family:
    out = []
    for k, (lam, m) in enumerate(clusters[:3]):
        gap = min(abs(lam - c[0]) for j, c in enumerate(clusters) if j != k)
        mt = spc.count_multiplicity_transfer(b.f0, b.fe, b.J, b.report, lam, 0.5 * gap)
        out.append(f"{mt.m0}->{mt.m_eps} ({mt.status})")
    print(f"eps = {b.eps:4.2f}  " + "  ".join(out))

# %%
# Eigenvalue errors against the exact values decay like a power of eps.
errs = []
for b in family:
    lam = np.sort(b.fe.eigenvalues().real)
    errs.append(abs(lam[0] - exact[0][0]))
print(f"ground state error order {fit_order(zip((0.2, 0.1, 0.05), errs)).slope:.2f}")
