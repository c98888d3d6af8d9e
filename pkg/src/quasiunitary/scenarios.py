"""Ready-made families of form pairs with their identification operators.

* ``build_fourier``: truncation of a diagonal operator to its first n modes.
* ``build_wentzell``: elliptic operator on the unit square with a dynamic
  boundary condition whose coefficients depend on eps.
* ``build_degenerate``: m(x) u'' on (0, 1) with m0(x) = x^a regularised as
  max(m0, eps).
* ``build_graphtube``: Robin Laplacian on thin tubes glued to small vertex
  squares, compared with a Laplacian with vertex couplings on the metric
  graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.optimize as so
import scipy.sparse as sp

from . import fem
from .forms import SesquilinearForm, sectoriality_constants
from .linalg import LinearMap, WeightedSpace, gram_adjoint, to_dense
from .quasiuni import IdentificationQuadruple, QuasiUnitaryReport, defect_report


@dataclass
class ScenarioBundle:
    """(f0, fe, J) plus whatever the builder wants to expose."""

    name: str
    eps: float
    f0: SesquilinearForm
    fe: SesquilinearForm
    J: IdentificationQuadruple
    extras: dict = field(default_factory=dict)
    _report: Optional[QuasiUnitaryReport] = None

    def __iter__(self):
        return iter((self.f0, self.fe, self.J))

    @property
    def report(self) -> QuasiUnitaryReport:
        if self._report is None:
            self._report = defect_report(self.f0, self.fe, self.J, eps=self.eps)
        return self._report


def _space(gram, name, lumped=None):
    return WeightedSpace(gram, lumped_weights=lumped, name=name)


# ---------------------------------------------------------------------------
# spectral truncation


def build_fourier(lam: Sequence[float], n: int) -> ScenarioBundle:
    lam = np.asarray(lam, dtype=float)
    N = len(lam)
    if not 1 <= n < N:
        raise ValueError(f"need 1 <= n < {N}, got n = {n}")
    if lam[0] <= 0 or np.any(np.diff(lam) < 0):
        raise ValueError("eigenvalues must be positive and ascending")
    H0 = WeightedSpace.euclidean(N)
    V0 = _space(np.diag(lam), "V0")
    Hn = WeightedSpace.euclidean(n)
    Vn = _space(np.diag(lam[:n]), "Vn")
    f0 = SesquilinearForm(H0, V0, np.diag(lam), np.eye(N), name="full")
    fn = SesquilinearForm(Hn, Vn, np.diag(lam[:n]), np.eye(n), name=f"truncated{n}")
    proj = np.eye(n, N)
    J = IdentificationQuadruple(LinearMap(H0, Hn, proj), LinearMap(Hn, H0, proj.T.copy()),
                                LinearMap(V0, Vn, proj), LinearMap(Vn, V0, proj.T.copy()))
    return ScenarioBundle("fourier", 1.0 / n, f0, fn, J, {"n": n, "lam": lam})


# ---------------------------------------------------------------------------
# dynamic boundary conditions


@dataclass(frozen=True)
class WentzellCoefficients:
    A: tuple = ((1.0, 0.0), (0.0, 1.0))   # constant diffusion matrix
    beta: float = 1.0
    gamma: float = 1.0
    q: float = 1.0

    def validate(self, b: float = 0.0, alpha: float = 0.0):
        A = np.asarray(self.A, dtype=float)
        if A.shape != (2, 2):
            raise ValueError("diffusion matrix must be 2x2")
        if self.beta <= max(b, 0.0):
            raise ValueError(f"beta = {self.beta} must exceed the lower bound b = {b}")
        if self.q <= 0 or np.linalg.eigvalsh(0.5 * (A + A.T)).min() <= 0:
            raise ValueError("q and the diffusion matrix must be uniformly positive")

    @classmethod
    def family_member(cls, eps: float) -> "WentzellCoefficients":
        """A = (1+eps) I, beta = 1+eps, gamma = 1-eps, q = 1+eps."""
        return cls(((1 + eps, 0.0), (0.0, 1 + eps)), 1 + eps, 1 - eps, 1 + eps)


def _directional_stiffness(patch: fem.Patch):
    mx, kx = fem.assemble_1d(fem.IntervalMesh1D(patch.lx, patch.nx))
    my, ky = fem.assemble_1d(fem.IntervalMesh1D(patch.ly, patch.ny))

    def grad_mass(n):
        # G[i, j] = int phi_i phi_j'
        d = np.full(n, 0.0)
        d[0], d[-1] = -0.5, 0.5
        return sp.diags([np.full(n - 1, -0.5), d, np.full(n - 1, 0.5)], [-1, 0, 1]).tocsr()

    gx = grad_mass(patch.nx + 1)
    gy = grad_mass(patch.ny + 1)
    # entry [test, trial] of int d_a(test) d_b(trial)
    return {
        (0, 0): sp.kron(my, kx), (1, 1): sp.kron(ky, mx),
        (1, 0): sp.kron(gy.T, gx), (0, 1): sp.kron(gy, gx.T),
    }


def wentzell_delta_bound(c0: WentzellCoefficients, ce: WentzellCoefficients) -> float:
    """Upper bound for delta from the coefficient differences (identity maps)."""
    b = min(c0.beta, ce.beta)
    dA = np.linalg.norm(np.asarray(ce.A) - np.asarray(c0.A), 2)
    db, dg, dq = abs(ce.beta - c0.beta), abs(ce.gamma - c0.gamma), abs(ce.q - c0.q)
    a2 = db / b
    a5 = dA + (abs(c0.gamma) * db + abs(c0.beta) * dg) / b ** 2 + dq
    return max(a2, a5)


def build_wentzell(n_mesh: int, coeffs0: WentzellCoefficients, coeffs_e: WentzellCoefficients,
                   eps: float = 0.0, b: float = 0.0, lumped: bool = False) -> ScenarioBundle:
    """With ``lumped`` both masses are row-sum lumped and H carries nodal weights."""
    coeffs0.validate(b)
    coeffs_e.validate(b)
    mesh = fem.unit_square_mesh(n_mesh)
    asm = fem.assemble_2d(mesh)
    loop = fem.loop_nodes(mesh, "boundary")
    N, nb = mesh.dim, len(loop)
    tr = sp.csr_matrix((np.ones(nb), (np.arange(nb), loop)), shape=(nb, N))
    MG = (tr @ asm.boundary_mass["boundary"] @ tr.T).toarray()
    KG = (tr @ asm.tangential["boundary"] @ tr.T).toarray()
    M, K = asm.mass.toarray(), asm.stiffness.toarray()
    if lumped:
        M, MG = np.diag(M.sum(axis=1)), np.diag(MG.sum(axis=1))
    incl = np.vstack([np.eye(N), tr.toarray()])
    gram_V = K + M + tr.T @ (KG + MG) @ tr
    dirs = {k: v.toarray() for k, v in _directional_stiffness(mesh.patches[0]).items()}

    def make(c: WentzellCoefficients, tag: str):
        A = np.asarray(c.A, dtype=float)
        w = np.concatenate([np.diag(M), np.diag(MG) / c.beta]) if lumped else None
        H = _space(sla.block_diag(M, MG / c.beta), f"H{tag}", w)
        V = _space(gram_V, f"V{tag}")
        stiff = sum(A[a, bb] * dirs[(a, bb)] for a in range(2) for bb in range(2))
        form = stiff + tr.T @ ((c.gamma / c.beta) * MG + c.q * KG) @ tr
        return SesquilinearForm(H, V, form, incl, name=f"wentzell{tag}")

    f0, fe = make(coeffs0, "0"), make(coeffs_e, "eps")
    J = IdentificationQuadruple.identities(f0, fe)
    return ScenarioBundle("wentzell", eps, f0, fe, J,
                          {"mesh": mesh, "bound": wentzell_delta_bound(coeffs0, coeffs_e),
                           "lumped": lumped})


# ---------------------------------------------------------------------------
# degenerate coefficient


@dataclass(frozen=True)
class DegenerateCoefficient:
    a: float
    eps_list: tuple = (0.2, 0.1, 0.05)

    def __post_init__(self):
        if not 0 <= self.a < 1:
            raise ValueError("exponent a must lie in [0, 1) so that 1/m0 is integrable")

    def m0(self, x):
        return np.power(np.asarray(x, dtype=float), self.a)

    def m_eps(self, x, eps: float):
        return np.maximum(self.m0(x), eps)

    def inverse_weight(self, eps: Optional[float]) -> fem.PowerWeight:
        return fem.PowerWeight(-self.a, None if eps is None else 1.0 / eps)


def build_degenerate(coef: DegenerateCoefficient, n_mesh: int, eps: float) -> ScenarioBundle:
    """Lumped weighted masses make the multiplication maps exactly unitary."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    mesh = fem.IntervalMesh1D(1.0, n_mesh)
    inner = slice(1, n_mesh)
    _, K = fem.assemble_1d(mesh)
    K = K.toarray()[inner, inner]
    w0 = np.asarray(fem.assemble_1d(mesh, coef.inverse_weight(None), lumped=True)[0].diagonal())[inner]
    we = np.asarray(fem.assemble_1d(mesh, coef.inverse_weight(eps), lumped=True)[0].diagonal())[inner]

    def make(w, tag):
        H = WeightedSpace(np.diag(w), lumped_weights=w, name=f"H{tag}")
        V = _space(K + np.diag(w), f"V{tag}")
        return SesquilinearForm(H, V, K.copy(), name=f"degenerate{tag}")

    f0, fe = make(w0, "0"), make(we, "eps")
    up = np.diag(np.sqrt(w0 / we))
    dn = np.diag(np.sqrt(we / w0))
    eye = np.eye(n_mesh - 1)
    J = IdentificationQuadruple(LinearMap(f0.H, fe.H, up), LinearMap(fe.H, f0.H, dn),
                                LinearMap(f0.V, fe.V, eye), LinearMap(fe.V, f0.V, eye.copy()))
    return ScenarioBundle("degenerate", eps, f0, fe, J,
                          {"nodes": mesh.nodes[inner], "a": coef.a})


# ---------------------------------------------------------------------------
# thin tubes over a metric graph


@dataclass
class MetricGraph:
    vertices: list
    edges: list                 # (initial, terminal) vertex indices
    lengths: list
    gamma: np.ndarray = None    # vertex coupling matrix

    def __post_init__(self):
        nv = len(self.vertices)
        self.lengths = [float(l) for l in self.lengths]
        if len(self.lengths) != len(self.edges):
            raise ValueError("one length per edge is required")
        if any(l <= 0 for l in self.lengths):
            raise ValueError("edge lengths must be positive")
        for a, b in self.edges:
            if not (0 <= a < nv and 0 <= b < nv):
                raise ValueError(f"edge ({a}, {b}) references an unknown vertex")
        if self.gamma is None:
            self.gamma = np.zeros((nv, nv))
        self.gamma = np.asarray(self.gamma)
        if self.gamma.shape != (nv, nv):
            raise ValueError("gamma must be |V| x |V|")
        if np.any(self.degree == 0):
            raise ValueError("every vertex needs at least one edge")

    @property
    def degree(self) -> np.ndarray:
        deg = np.zeros(len(self.vertices), dtype=int)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def incidences(self, v: int) -> list:
        """(edge, end) pairs at v, end 0 for the initial and 1 for the terminal vertex."""
        out = []
        for e, (a, b) in enumerate(self.edges):
            if a == v:
                out.append((e, 0))
            if b == v:
                out.append((e, 1))
        return out

    @classmethod
    def star(cls, n_edges: int = 3, length: float = 1.0, coupling: float = 1.0) -> "MetricGraph":
        """Center 0 joined to leaves 1..n; coupling on the center only."""
        gamma = np.zeros((n_edges + 1, n_edges + 1))
        gamma[0, 0] = coupling
        return cls(list(range(n_edges + 1)), [(0, k) for k in range(1, n_edges + 1)],
                   [length] * n_edges, gamma)

    @classmethod
    def interval(cls, length: float = 1.0, gamma=None) -> "MetricGraph":
        return cls([0, 1], [(0, 1)], [length], gamma)

    def to_json(self) -> dict:
        g = np.asarray(self.gamma)
        return {"vertices": list(self.vertices),
                "edges": [{"from": int(a), "to": int(b), "length": l}
                          for (a, b), l in zip(self.edges, self.lengths)],
                "gamma": g.real.tolist() if np.isrealobj(g) else
                {"re": g.real.tolist(), "im": g.imag.tolist()}}

    @classmethod
    def from_json(cls, obj: dict) -> "MetricGraph":
        edges = [(int(e["from"]), int(e["to"])) for e in obj["edges"]]
        lengths = [float(e["length"]) for e in obj["edges"]]
        g = obj.get("gamma")
        if isinstance(g, dict):
            g = np.asarray(g["re"]) + 1j * np.asarray(g["im"])
        verts = obj.get("vertices")
        if isinstance(verts, int):
            verts = list(range(verts))
        return cls(list(verts), edges, lengths, None if g is None else np.asarray(g))


def vertex_boundary_length(graph: MetricGraph) -> np.ndarray:
    """Free boundary length of each unit vertex square (one side per edge end)."""
    return 4.0 - graph.degree


@dataclass
class RobinData:
    """Boundary coefficients on the thin domain reproducing the vertex couplings.

    The vertex value of beta absorbs the diagonal of gamma; off-diagonal
    couplings become constant kernels between vertex boundaries.
    """

    beta_vertex: np.ndarray
    beta_edge_coeff: np.ndarray

    @classmethod
    def from_graph(cls, graph: MetricGraph, beta_edge_coeff=None) -> "RobinData":
        gl = vertex_boundary_length(graph)
        if np.any(gl <= 0):
            raise ValueError("vertex degree must be at most 3 so each vertex keeps a free boundary")
        beta_v = np.diag(graph.gamma) * graph.degree / gl
        be = np.zeros(len(graph.edges)) if beta_edge_coeff is None else np.asarray(beta_edge_coeff, float)
        return cls(beta_v, be)

    def kernel_constants(self, graph: MetricGraph, eps: float) -> np.ndarray:
        gl = vertex_boundary_length(graph)
        c = graph.gamma * graph.degree[:, None] / (eps * np.outer(gl, gl))
        np.fill_diagonal(c, 0.0)
        return c


def _check_embeddable(graph: MetricGraph):
    deg = graph.degree
    if np.any(deg > 4):
        raise ValueError("vertex squares attach one edge per side, so degree must be <= 4")
    if np.any(deg == 4):
        raise ValueError("a degree-4 vertex has no free boundary; couplings cannot be realised")


def graphtube_mesh(graph: MetricGraph, eps: float, n_t: int = 8, h_max: float = 0.025,
                   max_aspect: float = 4.0):
    """Glued thin-domain mesh and the matching cells per edge."""
    _check_embeddable(graph)
    h_t = eps / n_t
    h_s = min(max_aspect * h_t, h_max)
    cells = [max(2, int(math.ceil(l / h_s - 1e-9))) for l in graph.lengths]
    patches, glues = [], []
    for v in range(len(graph.vertices)):
        patches.append(fem.Patch(f"X_v{v}", "vertex", v, eps, eps, n_t, n_t))
    nv = len(patches)
    used = {v: 0 for v in range(nv)}
    for e, (a, b) in enumerate(graph.edges):
        k = len(patches)
        patches.append(fem.Patch(f"X_e{e}", "edge", e, graph.lengths[e], eps, cells[e], n_t))
        for end, v in ((0, a), (1, b)):
            side = fem.SIDES[used[v]]
            used[v] += 1
            glues.append(fem.Glue(k, "left" if end == 0 else "right", v, side))
    return fem.RectMesh2D(patches, glues), cells


def graph_form(graph: MetricGraph, cells_per_edge, lumped: bool = False) -> SesquilinearForm:
    """P1 form of the graph Laplacian with vertex couplings.

    a(f, g) = sum_e int f_e' conj(g_e') + sum_{v,w} deg(v) gamma_vw f(w) conj(g(v)).
    """
    space = fem.GraphFESpace(graph, cells_per_edge)
    nv = len(graph.vertices)
    M0, K0 = (m.toarray() for m in space.assemble(lumped=lumped))
    A0 = K0.astype(complex if np.iscomplexobj(graph.gamma) else float)
    A0[:nv, :nv] += graph.gamma * graph.degree[:, None]
    H0 = WeightedSpace(M0, lumped_weights=np.diag(M0).copy() if lumped else None, name="H0")
    return SesquilinearForm(H0, _space(K0 + M0, "V0"), A0, name="graph")


def build_graphtube(graph: MetricGraph, robin: RobinData, eps: float, n_t: int = 8,
                    h_max: float = 0.025, max_aspect: float = 4.0,
                    lumped: bool = False) -> ScenarioBundle:
    mesh, cells = graphtube_mesh(graph, eps, n_t, h_max, max_aspect)
    asm = fem.assemble_2d(mesh, lumped=lumped)
    space = fem.GraphFESpace(graph, cells)
    nv = len(graph.vertices)
    cplx = np.iscomplexobj(graph.gamma)

    f0 = graph_form(graph, cells, lumped)
    H0, V0 = f0.H, f0.V

    # -- thin domain side
    P = mesh.incl()
    Pd = P.toarray()
    Mb = asm.mass.toarray()
    Ab = asm.stiffness.toarray().astype(complex if cplx else float)
    for v in range(nv):
        tag = f"vertex:{v}"
        if tag in asm.boundary_mass and robin.beta_vertex[v] != 0:
            Ab += robin.beta_vertex[v] * asm.boundary_mass[tag].toarray()
    for e in range(len(graph.edges)):
        if robin.beta_edge_coeff[e] != 0:
            Ab += eps ** 1.5 * robin.beta_edge_coeff[e] * asm.boundary_mass[f"edge:{e}"].toarray()
    Ae = Pd.T @ Ab @ Pd
    cvw = robin.kernel_constants(graph, eps)
    terms = []
    for v in range(nv):
        for w in range(nv):
            if v != w and cvw[v, w] != 0:
                t = fem.boundary_rank_one_terms(mesh, asm, f"vertex:{v}", f"vertex:{w}", cvw[v, w])
                terms.append(t)
                Ae = Ae + np.outer(Pd.T @ t.b_v, Pd.T @ t.b_w) * t.c
    He = WeightedSpace(Mb, lumped_weights=np.diag(Mb).copy() if lumped else None, name="Heps")
    Ve = _space(Pd.T @ (asm.stiffness.toarray() + Mb) @ Pd, "Veps")
    fe = SesquilinearForm(He, Ve, Ae, Pd, name=f"tube{eps:g}")

    # -- identification maps
    s = eps ** -0.5
    up = np.zeros((mesh.broken_dim, space.dim))
    up1b = np.zeros((mesh.broken_dim, space.dim))
    edge_patch = {}
    for k, p in enumerate(mesh.patches):
        if p.kind == "edge":
            edge_patch[p.owner] = k
            dofs = space.edge_dofs[p.owner]
            for j in range(p.ny + 1):
                rows = p.offset + p.local(np.arange(p.nx + 1), j)
                up[rows, dofs] = s
        else:
            up1b[mesh.patch_slice(k), p.owner] = s
    up1b += up
    Jup = LinearMap(H0, He, up)
    Jdown = gram_adjoint(Jup)
    Jup1 = LinearMap(V0, Ve, up1b[mesh.representative()])

    l0 = min(min(l, 1.0) for l in graph.lengths)
    dn1 = np.zeros((space.dim, mesh.broken_dim))
    vavg = {v: fem.patch_average_vector(mesh, v, asm) for v in range(nv)}
    for v in range(nv):
        dn1[v] = eps ** 0.5 * vavg[v]
    for e, (a, b) in enumerate(graph.edges):
        k = edge_patch[e]
        avg = fem.transversal_average_matrix(mesh, k).toarray()
        x = space.edge_nodes(e)
        ell = graph.lengths[e]
        rows = np.zeros((len(x), mesh.broken_dim))
        rows += avg
        for end, v in ((0, a), (1, b)):
            dist = x if end == 0 else ell - x
            chi = np.maximum(0.0, 1.0 - dist / l0)
            at_v = avg[0] if end == 0 else avg[-1]
            rows += np.outer(chi, vavg[v] - at_v)
        dofs = space.edge_dofs[e]
        dn1[dofs[1:-1]] = eps ** 0.5 * rows[1:-1]
    Jdown1 = LinearMap(Ve, V0, dn1 @ Pd)
    J = IdentificationQuadruple(Jup, Jdown, Jup1, Jdown1)
    extras = {"mesh": mesh, "asm": asm, "space": space, "robin": robin, "graph": graph,
              "rank_one": terms, "n_t": n_t, "lumped": lumped}
    return ScenarioBundle("graphtube", eps, f0, fe, J, extras)


def gamma_tilde(bundle: ScenarioBundle) -> np.ndarray:
    """Effective vertex coupling recovered by integrating the boundary data."""
    graph, robin, asm = bundle.extras["graph"], bundle.extras["robin"], bundle.extras["asm"]
    mesh, eps = bundle.extras["mesh"], bundle.eps
    nv = len(graph.vertices)
    ones = np.ones(mesh.broken_dim)
    meas = np.array([asm.boundary_mass[f"vertex:{v}"] @ ones @ ones if f"vertex:{v}" in asm.boundary_mass
                     else 0.0 for v in range(nv)])  # scaled boundary lengths
    cvw = robin.kernel_constants(graph, eps)
    gt = np.zeros((nv, nv), dtype=complex)
    for v in range(nv):
        for w in range(nv):
            if v == w:
                gt[v, v] = robin.beta_vertex[v] * meas[v] / eps
            else:
                # kernel integrated over the unscaled boundaries, times eps
                gt[v, w] = eps * cvw[v, w] * (meas[v] / eps) * (meas[w] / eps)
    return gt / graph.degree[:, None]


# ---------------------------------------------------------------------------
# reference spectra


def star_graph_eigenvalues(n_edges: int, length: float, coupling: float, count: int) -> list:
    """Lowest eigenvalues of the equilateral star with Neumann leaves.

    Symmetric modes solve k tan(k l) = coupling; the others vanish at the
    center, cos(k l) = 0, with multiplicity n_edges - 1.  Returns
    [(lambda, multiplicity)] sorted, ``count`` distinct values.
    """
    out = []
    kmax = (count + 2) * math.pi / length
    g = lambda k: k * math.sin(k * length) - coupling * math.cos(k * length)
    grid = np.linspace(1e-9, kmax, 20000)
    vals = [g(k) for k in grid]
    for i in range(len(grid) - 1):
        if vals[i] == 0 or vals[i] * vals[i + 1] < 0:
            k = so.brentq(g, grid[i], grid[i + 1], xtol=1e-15)
            out.append((k * k, 1))
    if coupling == 0:
        out.append((0.0, 1))
    j = 0
    while (2 * j + 1) * math.pi / (2 * length) < kmax:
        k = (2 * j + 1) * math.pi / (2 * length)
        if n_edges > 1:
            out.append((k * k, n_edges - 1))
        j += 1
    out.sort()
    return out[:count]


# ---------------------------------------------------------------------------
# geometric constants


def trace_constant(boundary_mass, stiffness, mass) -> float:
    """Best c with ||u||_B^2 <= c (||du||^2 + ||u||^2): top eigenvalue of the pencil."""
    B, S = to_dense(boundary_mass), to_dense(stiffness) + to_dense(mass)
    return float(sla.eigh(B, S, eigvals_only=True, subset_by_index=(B.shape[0] - 1,) * 2)[0])


def _reference_square(n_t: int):
    p = fem.Patch("ref", "vertex", 0, 1.0, 1.0, n_t, n_t)
    M, K = p.matrices()
    sides = {}
    for s in fem.SIDES:
        Ms, _ = fem._side_matrices(p, s, False)
        sides[s] = fem._scatter(Ms, p.side_nodes(s), p.n_nodes)
    return p, M, K, sides


@dataclass
class AnalysisConstants:
    c_gamma_v: dict     # vertex -> trace constant of the free boundary in the unit square
    c_y_v: dict         # vertex -> trace constant of the attached sides
    c_dY_Y: float       # trace constant of the two endpoints of the unit interval
    lambda2: float      # first nonzero Neumann eigenvalue of the unit square
    C_v: dict
    c_vol: dict


def analysis_constants(graph: MetricGraph, n_t: int) -> AnalysisConstants:
    """Best discrete constants on the unscaled reference pieces."""
    p, M, K, sides = _reference_square(n_t)
    lam = sla.eigh(K.toarray(), M.toarray(), eigvals_only=True, subset_by_index=(0, 1))
    lam2 = float(lam[1])
    mi, ki = fem.assemble_1d(fem.IntervalMesh1D(1.0, n_t))
    ends = np.zeros((n_t + 1, n_t + 1))
    ends[0, 0] = ends[-1, -1] = 1.0
    c_dy = trace_constant(ends, ki, mi)
    cg, cy, cv, cvol = {}, {}, {}, {}
    for v in range(len(graph.vertices)):
        d = int(graph.degree[v])
        att = sum((sides[s] for s in fem.SIDES[:d]), sp.csr_matrix(M.shape))
        free = sum((sides[s] for s in fem.SIDES[d:]), sp.csr_matrix(M.shape))
        cg[v] = trace_constant(free, K, M) if d < 4 else 0.0
        cy[v] = trace_constant(att, K, M)
        cvol[v] = 1.0 / d
        cv[v] = 4.0 * (1.0 / lam2 + cvol[v] * cy[v] * (1.0 / lam2 + 1.0))
    return AnalysisConstants(cg, cy, c_dy, lam2, cv, cvol)


@dataclass
class LemmaCheck:
    name: str
    eps: float
    worst_ratio: float   # max lhs / rhs over the samples
    violations: int


def _random_functions(bundle: ScenarioBundle, n: int, seed: int) -> np.ndarray:
    """Low eigenvectors of the tube operator plus noise, as conforming coefficients."""
    fe = bundle.fe
    a = to_dense(fe.form)
    a = 0.5 * (a + a.conj().T).real
    g = to_dense(fe.gram_HV)
    k = min(12, fe.dim - 1)
    _, vec = sla.eigh(a, g, subset_by_index=(0, k - 1))
    rng = np.random.default_rng(seed)
    coeff = rng.standard_normal((k, n))
    noise = rng.standard_normal((fe.dim, n)) * rng.uniform(0.0, 0.3, n) / math.sqrt(fe.dim)
    u = vec @ coeff
    u /= np.linalg.norm(u, axis=0)
    u = u + noise * np.sqrt(np.abs(u).max(axis=0))
    u[:, :1] = 1.0  # constants are the extremal case of several inequalities
    return u


def check_analysis_lemmas(bundle: ScenarioBundle, consts: AnalysisConstants, n_random: int = 200,
                          seed: int = 0, rtol: float = 1e-8) -> list:
    """Evaluate the trace, averaging and vertex inequalities on random FEM functions."""
    mesh, asm, graph = bundle.extras["mesh"], bundle.extras["asm"], bundle.extras["graph"]
    if bundle.extras.get("lumped"):
        raise ValueError("lemma checks use the consistent mass")
    eps = bundle.eps
    ub = mesh.incl() @ _random_functions(bundle, n_random, seed)
    M, K = asm.mass, asm.stiffness
    checks = []

    def quad(mat, sl=None):
        if sl is None:
            return np.einsum("ij,ij->j", ub, mat @ ub)
        return np.einsum("ij,ij->j", ub[sl], mat[sl, sl] @ ub[sl])

    def record(name, lhs, rhs):
        ratio = lhs / np.maximum(rhs, 1e-300)
        bad = lhs > rhs * (1 + rtol) + rtol * np.abs(rhs).max()
        checks.append(LemmaCheck(name, eps, float(ratio.max()), int(bad.sum())))

    b = min(graph.lengths)
    for k, p in enumerate(mesh.patches):
        sl = mesh.patch_slice(k)
        Mp, Kp = M[sl, sl], K[sl, sl]
        du = quad(K, sl)
        if p.kind == "vertex":
            v = p.owner
            tag = f"vertex:{v}"
            if tag in asm.boundary_mass:
                Bv = asm.boundary_mass[tag]
                lhs = quad(Bv, sl)
                rhs = consts.c_gamma_v[v] * (eps * quad(K, sl) + quad(M, sl) / eps)
                record(f"trace_vertex_boundary[v{v}]", lhs, rhs)
            area = p.lx * p.ly
            avg = (Mp @ ub[sl]).sum(axis=0) / area
            if tag in asm.boundary_mass:
                Bv = asm.boundary_mass[tag][sl, sl]
                dev = ub[sl] - avg
                lhs = np.einsum("ij,ij->j", dev, Bv @ dev)
                rhs = eps * consts.c_gamma_v[v] * (1 / consts.lambda2 + 1) * du
                record(f"boundary_average[v{v}]", lhs, rhs)
            # attached sides: averages of adjoining tubes at v
            lhs = np.zeros(ub.shape[1])
            tube_du, tube_u = np.zeros(ub.shape[1]), np.zeros(ub.shape[1])
            for e, end in graph.incidences(v):
                ke = next(i for i, q in enumerate(mesh.patches) if q.kind == "edge" and q.owner == e)
                avg_e = fem.transversal_average_matrix(mesh, ke) @ ub
                lhs += eps * np.abs(avg - avg_e[0 if end == 0 else -1]) ** 2
                q = mesh.patches[ke]
                sle = mesh.patch_slice(ke)
                mx, kx = fem.assemble_1d(fem.IntervalMesh1D(q.lx, q.nx))
                my, _ = fem.assemble_1d(fem.IntervalMesh1D(q.ly, q.ny))
                Ks = sp.kron(my, kx)
                tube_du += np.einsum("ij,ij->j", ub[sle], Ks @ ub[sle])
                tube_u += np.einsum("ij,ij->j", ub[sle], M[sle, sle] @ ub[sle])
            rhs = eps * consts.c_y_v[v] * (1 / consts.lambda2 + 1) * du
            record(f"edge_average[v{v}]", lhs, rhs)
            lhs = np.einsum("ij,ij->j", ub[sl], Mp @ ub[sl])
            rhs = (eps ** 2 * consts.C_v[v] * du
                   + 8 * eps * consts.c_vol[v] * (b * tube_du + 2 / b * tube_u))
            record(f"vertex_mass[v{v}]", lhs, rhs)
        else:
            e = p.owner
            tag = f"edge:{e}"
            Be = asm.boundary_mass[tag][sl, sl]
            my, ky = fem.assemble_1d(fem.IntervalMesh1D(p.ly, p.ny))
            mx, _ = fem.assemble_1d(fem.IntervalMesh1D(p.lx, p.nx))
            Ky = sp.kron(ky, mx)
            lhs = np.einsum("ij,ij->j", ub[sl], Be @ ub[sl])
            rhs = consts.c_dY_Y * (eps * np.einsum("ij,ij->j", ub[sl], Ky @ ub[sl])
                                   + np.einsum("ij,ij->j", ub[sl], Mp @ ub[sl]) / eps)
            record(f"trace_tube[e{e}]", lhs, rhs)
    return checks


def tube_trace_scaling(eps: float, n_t: int = 8, length: float = 1.0, h_max: float = 0.025) -> float:
    """Best c with ||u||^2_{long sides} <= c (eps ||du||^2 + ||u||^2 / eps) on one tube."""
    nx = max(2, int(math.ceil(length / min(4 * eps / n_t, h_max))))
    p = fem.Patch("tube", "edge", 0, length, eps, nx, n_t)
    M, K = p.matrices()
    B = sp.csr_matrix(M.shape)
    for s in ("bottom", "top"):
        Ms, _ = fem._side_matrices(p, s, False)
        B = B + fem._scatter(Ms, p.side_nodes(s), p.n_nodes)
    return trace_constant(B, eps * K, M / eps)


# ---------------------------------------------------------------------------
# uniform sectoriality


@dataclass
class EllipticityRow:
    eps: float
    alpha: float
    omega: float
    M: float
    c_V: float


def equi_ellipticity_scan(family, alpha: float = 0.5) -> list:
    """``family`` is a sequence of (eps, form); eps = 0 denotes the limit form."""
    rows = []
    for eps, form in family:
        c = sectoriality_constants(form, alpha)
        rows.append(EllipticityRow(float(eps), alpha, c.omega, c.M, c.c_V))
    return rows
