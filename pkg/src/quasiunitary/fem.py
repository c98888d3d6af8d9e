"""Low-order finite elements on intervals, metric graphs and glued rectangles.

Everything is assembled on structured grids.  A 2D patch is a tensor grid,
so its Q1 mass and stiffness are Kronecker products of 1D P1 matrices
(this coincides with 2x2 Gauss integration, which is exact for Q1).

Multi-patch meshes are handled in two layers: the *broken* space numbers
every patch node separately, and the *conforming* space identifies the
nodes of glued sides.  ``RectMesh2D.incl`` maps conforming to broken
coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

GAUSS3_X, GAUSS3_W = np.polynomial.legendre.leggauss(3)

SIDES = ("bottom", "right", "top", "left")


# ---------------------------------------------------------------------------
# 1D


@dataclass(frozen=True)
class PowerWeight:
    """w(x) = x**p, optionally capped from above by ``cap``.

    With p < 0 the cap cuts off the singularity at 0; the crossover
    x_c = cap**(1/p) splits the cells so every piece is integrated in
    closed form.
    """

    p: float
    cap: Optional[float] = None

    @property
    def crossover(self) -> Optional[float]:
        if self.cap is None or self.p == 0:
            return None
        return self.cap ** (1.0 / self.p)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            w = np.power(x, self.p)
        return w if self.cap is None else np.minimum(w, self.cap)

    def moment(self, k: int, a: float, b: float) -> float:
        """Closed-form integral of x^k w(x) over [a, b], 0 <= a < b."""
        xc = self.crossover
        if xc is not None and a < xc < b:
            return self.moment(k, a, xc) + self.moment(k, xc, b)
        if self.p == 0:
            w = 1.0 if self.cap is None else min(1.0, self.cap)
            return w * (b ** (k + 1) - a ** (k + 1)) / (k + 1)
        mid = 0.5 * (a + b)
        if xc is not None and (mid < xc if self.p < 0 else mid > xc):
            return self.cap * (b ** (k + 1) - a ** (k + 1)) / (k + 1)
        e = k + self.p + 1
        if e <= 0 and a == 0:
            raise ValueError(f"x^{k + self.p} is not integrable at 0")
        return (b ** e - a ** e) / e


@dataclass
class IntervalMesh1D:
    length: float
    n_cells: int
    origin: float = 0.0

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("interval length must be positive")
        if self.n_cells < 2:
            raise ValueError("need at least two cells")

    @property
    def nodes(self) -> np.ndarray:
        return self.origin + np.linspace(0.0, self.length, self.n_cells + 1)

    @property
    def h(self) -> float:
        return self.length / self.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1


def _p1_cell(x0: float, x1: float, weight):
    """Local weighted mass, weighted lumped vector and stiffness on one cell."""
    h = x1 - x0
    kloc = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    if weight is None:
        mloc = h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
        return mloc, kloc
    if isinstance(weight, PowerWeight):
        m0, m1, m2 = (weight.moment(k, x0, x1) for k in range(3))
        # phi0 = (x1 - x)/h, phi1 = (x - x0)/h
        a00 = (x1 * x1 * m0 - 2 * x1 * m1 + m2) / h ** 2
        a11 = (x0 * x0 * m0 - 2 * x0 * m1 + m2) / h ** 2
        a01 = (-x0 * x1 * m0 + (x0 + x1) * m1 - m2) / h ** 2
        return np.array([[a00, a01], [a01, a11]]), kloc
    xq = 0.5 * (x0 + x1) + 0.5 * h * GAUSS3_X
    wq = 0.5 * h * GAUSS3_W * np.asarray(weight(xq), dtype=float)
    if not np.all(np.isfinite(wq)):
        raise ValueError(f"weight is not finite on cell [{x0}, {x1}]")
    phi = np.vstack([(x1 - xq) / h, (xq - x0) / h])
    return (phi * wq) @ phi.T, kloc


def assemble_1d(mesh: IntervalMesh1D, weight=None, lumped: bool = False):
    """P1 (mass, stiffness) as sparse CSR matrices.

    ``weight`` is None (unit weight), a :class:`PowerWeight` (closed form) or
    a callable (3-point Gauss per cell).  With ``lumped`` the mass is the
    diagonal of row sums, i.e. w_i = int phi_i w.
    """
    x = mesh.nodes
    n = mesh.n_nodes
    rows, cols, mv, kv = [], [], [], []
    for c in range(mesh.n_cells):
        mloc, kloc = _p1_cell(x[c], x[c + 1], weight)
        idx = (c, c + 1)
        for a in range(2):
            for b in range(2):
                rows.append(idx[a])
                cols.append(idx[b])
                mv.append(mloc[a, b])
                kv.append(kloc[a, b])
    M = sp.csr_matrix((mv, (rows, cols)), shape=(n, n))
    K = sp.csr_matrix((kv, (rows, cols)), shape=(n, n))
    if lumped:
        M = sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr()
    return M, K


# ---------------------------------------------------------------------------
# metric graphs


class GraphFESpace:
    """P1 functions on the edges of a metric graph.

    ``graph`` needs ``vertices``, ``edges`` (pairs of vertex indices) and
    ``lengths``.  The continuous variant shares one DOF per vertex; the
    broken one keeps every edge separate.  Vertex DOFs come first.
    """

    def __init__(self, graph, cells_per_edge):
        self.graph = graph
        n_e = len(graph.edges)
        if np.isscalar(cells_per_edge):
            cells_per_edge = [int(cells_per_edge)] * n_e
        self.meshes = [IntervalMesh1D(graph.lengths[e], cells_per_edge[e]) for e in range(n_e)]
        nv = len(graph.vertices)
        self.edge_dofs = []
        nxt = nv
        for e, (a, b) in enumerate(graph.edges):
            k = self.meshes[e].n_cells - 1
            self.edge_dofs.append(np.concatenate([[a], np.arange(nxt, nxt + k), [b]]))
            nxt += k
        self.dim = nxt
        offs = np.cumsum([0] + [m.n_nodes for m in self.meshes])
        self.broken_offsets = offs
        self.broken_dim = int(offs[-1])

    @classmethod
    def with_spacing(cls, graph, h: float) -> "GraphFESpace":
        return cls(graph, [max(2, int(math.ceil(l / h - 1e-9))) for l in graph.lengths])

    def incl(self) -> sp.csr_matrix:
        """Continuous -> broken coefficient map (full column rank)."""
        rows = np.arange(self.broken_dim)
        cols = np.concatenate(self.edge_dofs)
        return sp.csr_matrix((np.ones(self.broken_dim), (rows, cols)),
                             shape=(self.broken_dim, self.dim))

    def assemble(self, broken: bool = False, lumped: bool = False):
        blocks_m, blocks_k = [], []
        for m in self.meshes:
            M, K = assemble_1d(m, lumped=lumped)
            blocks_m.append(M)
            blocks_k.append(K)
        Mb = sp.block_diag(blocks_m, format="csr")
        Kb = sp.block_diag(blocks_k, format="csr")
        if broken:
            return Mb, Kb
        P = self.incl()
        return (P.T @ Mb @ P).tocsr(), (P.T @ Kb @ P).tocsr()

    def edge_nodes(self, e: int) -> np.ndarray:
        return self.meshes[e].nodes


# ---------------------------------------------------------------------------
# 2D rectangles


@dataclass
class Patch:
    name: str
    kind: str              # "edge" or "vertex"
    owner: int             # edge or vertex index
    lx: float
    ly: float
    nx: int
    ny: int
    offset: int = 0        # first broken DOF

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    def local(self, i, j):
        return np.asarray(i) + (self.nx + 1) * np.asarray(j)

    def side_nodes(self, side: str) -> np.ndarray:
        """Local node indices along a side, ordered by increasing coordinate."""
        nx, ny = self.nx, self.ny
        if side == "bottom":
            return self.local(np.arange(nx + 1), 0)
        if side == "top":
            return self.local(np.arange(nx + 1), ny)
        if side == "left":
            return self.local(0, np.arange(ny + 1))
        if side == "right":
            return self.local(nx, np.arange(ny + 1))
        raise ValueError(f"unknown side {side!r}")

    def side_length(self, side: str) -> float:
        return self.lx if side in ("bottom", "top") else self.ly

    def side_spacing(self, side: str) -> float:
        return self.lx / self.nx if side in ("bottom", "top") else self.ly / self.ny

    def coords(self) -> np.ndarray:
        x = np.linspace(0.0, self.lx, self.nx + 1)
        y = np.linspace(0.0, self.ly, self.ny + 1)
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    def matrices(self, lumped: bool = False):
        mx, kx = assemble_1d(IntervalMesh1D(self.lx, self.nx), lumped=lumped)
        my, ky = assemble_1d(IntervalMesh1D(self.ly, self.ny), lumped=lumped)
        # node index i + (nx+1) j  ->  kron(y-part, x-part)
        M = sp.kron(my, mx, format="csr")
        K = (sp.kron(my, kx) + sp.kron(ky, mx)).tocsr()
        return M, K


@dataclass
class Glue:
    a: int
    side_a: str
    b: int
    side_b: str
    reverse: bool = False


class RectMesh2D:
    """Axis-aligned Q1 patches glued along whole sides."""

    def __init__(self, patches, glues=(), tags=None, loops=None):
        self.patches = list(patches)
        off = 0
        for p in self.patches:
            p.offset = off
            off += p.n_nodes
        self.broken_dim = off
        self.glues = list(glues)
        glued = set()
        parent = np.arange(off)

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for g in self.glues:
            pa, pb = self.patches[g.a], self.patches[g.b]
            na, nb = pa.side_nodes(g.side_a), pb.side_nodes(g.side_b)
            la, lb = pa.side_length(g.side_a), pb.side_length(g.side_b)
            if len(na) != len(nb) or not math.isclose(la, lb, rel_tol=1e-12):
                ca = pa.coords()[na[[0, -1]]].tolist()
                cb = pb.coords()[nb[[0, -1]]].tolist()
                raise ValueError(
                    f"nonconforming interface {pa.name}.{g.side_a} {ca} ({len(na)} nodes) "
                    f"vs {pb.name}.{g.side_b} {cb} ({len(nb)} nodes)")
            if g.reverse:
                nb = nb[::-1]
            for i, j in zip(na + pa.offset, nb + pb.offset):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
            glued.add((g.a, g.side_a))
            glued.add((g.b, g.side_b))
        roots = np.array([find(i) for i in range(off)])
        uniq, self.conforming_index = np.unique(roots, return_inverse=True)
        self.dim = len(uniq)
        # boundary tags: every side is either glued ("interface") or tagged
        self.side_tags = {}
        tags = tags or {}
        for k, p in enumerate(self.patches):
            for s in SIDES:
                if (k, s) in glued:
                    self.side_tags[(k, s)] = "interface"
                else:
                    self.side_tags[(k, s)] = tags.get((k, s), f"{p.kind}:{p.owner}")
        self.loops = loops or {}

    # -- maps -------------------------------------------------------------

    def incl(self) -> sp.csr_matrix:
        """Conforming -> broken coefficients."""
        n = self.broken_dim
        return sp.csr_matrix((np.ones(n), (np.arange(n), self.conforming_index)),
                             shape=(n, self.dim))

    def representative(self) -> np.ndarray:
        """One broken DOF per conforming DOF (broken -> conforming by picking)."""
        rep = np.empty(self.dim, dtype=int)
        rep[self.conforming_index[::-1]] = np.arange(self.broken_dim)[::-1]
        return rep

    def patch_slice(self, k: int) -> slice:
        p = self.patches[k]
        return slice(p.offset, p.offset + p.n_nodes)

    def tags(self) -> list:
        return sorted({t for t in self.side_tags.values() if t != "interface"})

    def tagged_sides(self, tag: str) -> list:
        return [ks for ks, t in self.side_tags.items() if t == tag]

    def tag_length(self, tag: str) -> float:
        return sum(self.patches[k].side_length(s) for k, s in self.tagged_sides(tag))

    # -- serialisation ----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "patches": [{"name": p.name, "kind": p.kind, "owner": p.owner, "lx": p.lx,
                         "ly": p.ly, "nx": p.nx, "ny": p.ny} for p in self.patches],
            "glues": [{"a": g.a, "side_a": g.side_a, "b": g.b, "side_b": g.side_b,
                       "reverse": g.reverse} for g in self.glues],
            "tags": [{"patch": k, "side": s, "tag": t} for (k, s), t in self.side_tags.items()
                     if t != "interface"],
            "loops": {name: [[k, s, bool(r)] for k, s, r in loop] for name, loop in self.loops.items()},
            "broken_dim": self.broken_dim,
            "dim": self.dim,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RectMesh2D":
        patches = [Patch(d["name"], d["kind"], d["owner"], d["lx"], d["ly"], d["nx"], d["ny"])
                   for d in obj["patches"]]
        glues = [Glue(**g) for g in obj.get("glues", [])]
        tags = {(t["patch"], t["side"]): t["tag"] for t in obj.get("tags", [])}
        loops = {k: [tuple(x) for x in v] for k, v in obj.get("loops", {}).items()}
        return cls(patches, glues, tags, loops)


def unit_square_mesh(n: int, side: float = 1.0) -> RectMesh2D:
    """Single n x n patch whose boundary forms one closed loop ``"boundary"``."""
    p = Patch("square", "domain", 0, side, side, n, n)
    tags = {(0, s): "boundary" for s in SIDES}
    loop = [(0, "bottom", False), (0, "right", False), (0, "top", True), (0, "left", True)]
    return RectMesh2D([p], tags=tags, loops={"boundary": loop})


def _side_matrices(patch: Patch, side: str, lumped: bool):
    n = len(patch.side_nodes(side)) - 1
    return assemble_1d(IntervalMesh1D(patch.side_length(side), n), lumped=lumped)


def _scatter(block, idx, n):
    block = sp.coo_matrix(block)
    return sp.csr_matrix((block.data, (idx[block.row], idx[block.col])), shape=(n, n))


@dataclass
class Assembly2D:
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    boundary_mass: dict = field(default_factory=dict)
    tangential: dict = field(default_factory=dict)


def assemble_2d(mesh: RectMesh2D, lumped: bool = False) -> Assembly2D:
    """Broken-space matrices; pull back with ``incl`` for the conforming space.

    ``boundary_mass[tag]`` integrates u v over the sides carrying ``tag``;
    ``tangential[loop]`` integrates the tangential derivatives along a
    closed side loop, wrapping through the corners.
    """
    n = mesh.broken_dim
    ms, ks = [], []
    for p in mesh.patches:
        M, K = p.matrices(lumped=lumped)
        ms.append(M)
        ks.append(K)
    out = Assembly2D(sp.block_diag(ms, format="csr"), sp.block_diag(ks, format="csr"))
    for tag in mesh.tags():
        B = sp.csr_matrix((n, n))
        for k, s in mesh.tagged_sides(tag):
            p = mesh.patches[k]
            Ms, _ = _side_matrices(p, s, lumped)
            B = B + _scatter(Ms, p.side_nodes(s) + p.offset, n)
        out.boundary_mass[tag] = B.tocsr()
    for name, loop in mesh.loops.items():
        T = sp.csr_matrix((n, n))
        for k, s, _rev in loop:
            p = mesh.patches[k]
            _, Ks = _side_matrices(p, s, lumped)
            T = T + _scatter(Ks, p.side_nodes(s) + p.offset, n)
        out.tangential[name] = T.tocsr()
    return out


def loop_nodes(mesh: RectMesh2D, loop: str) -> np.ndarray:
    """Broken node indices traversing a closed loop once (corners not repeated)."""
    seq = []
    for k, s, rev in mesh.loops[loop]:
        p = mesh.patches[k]
        nodes = p.side_nodes(s) + p.offset
        if rev:
            nodes = nodes[::-1]
        seq.extend(nodes[:-1].tolist())
    return np.array(seq)


@dataclass
class RankOneTerm:
    """c * b_v b_w^T, kept factored."""

    c: complex
    b_v: np.ndarray
    b_w: np.ndarray

    def apply(self, u):
        return self.c * self.b_v * (self.b_w @ u)

    def dense(self) -> np.ndarray:
        return self.c * np.outer(self.b_v, self.b_w)


def boundary_rank_one_terms(mesh: RectMesh2D, asm: Assembly2D, tag_v: str, tag_w: str,
                            c: complex) -> RankOneTerm:
    """b_tag = (int_{Gamma_tag} phi_i) over broken DOFs."""
    ones = np.ones(mesh.broken_dim)
    b_v = asm.boundary_mass[tag_v] @ ones
    b_w = asm.boundary_mass[tag_w] @ ones
    return RankOneTerm(c, b_v, b_w)


def transversal_average_matrix(mesh: RectMesh2D, patch_index: int) -> sp.csr_matrix:
    """Cross-sectional mean along each longitudinal node line of an edge patch.

    Rows are longitudinal nodes, columns broken DOFs.  Trapezoid weights
    across the width make it exact for Q1 functions.
    """
    p = mesh.patches[patch_index]
    wt = np.full(p.ny + 1, 1.0 / p.ny)
    wt[[0, -1]] *= 0.5
    rows, cols, vals = [], [], []
    for i in range(p.nx + 1):
        for j in range(p.ny + 1):
            rows.append(i)
            cols.append(p.offset + p.local(i, j))
            vals.append(wt[j])
    return sp.csr_matrix((vals, (rows, cols)), shape=(p.nx + 1, mesh.broken_dim))


def patch_average_vector(mesh: RectMesh2D, patch_index: int, asm: Assembly2D) -> np.ndarray:
    """Row vector u -> mean of u over one patch."""
    p = mesh.patches[patch_index]
    ones = np.zeros(mesh.broken_dim)
    ones[mesh.patch_slice(patch_index)] = 1.0
    return (asm.mass @ ones) / (p.lx * p.ly)
