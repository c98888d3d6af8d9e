"""Linear algebra on finite-dimensional weighted Hilbert spaces.

Every space is a coefficient space C^n carrying a Hermitian positive-definite
Gram matrix G, so that <u, v> = v^H G u.  Operator norms between two such
spaces become generalized singular values, which is what most of the
package ends up computing.

Dense storage is used up to ``DENSE_LIMIT`` unknowns; larger Grams are kept
in compressed-column form and factored with a sparse LU.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LIMIT = 2000
HERMITIAN_RTOL = 1e-12
PIVOT_RTOL = 1e-14


class NumericalError(RuntimeError):
    """Base class for numerical failures raised by the package."""


class SingularMatrix(NumericalError):
    def __init__(self, index: int, pivot: float, scale: float):
        self.index = index
        self.pivot = pivot
        super().__init__(
            f"matrix is numerically singular: pivot {index} has magnitude "
            f"{pivot:.3e} (matrix scale {scale:.3e})"
        )


class SpectrumHit(NumericalError):
    def __init__(self, z: complex):
        self.z = z
        super().__init__(f"z = {z} lies in the discrete spectrum")


class ContourHitsSpectrum(NumericalError):
    def __init__(self, nearest: complex, distance: float):
        self.nearest = nearest
        self.distance = distance
        super().__init__(
            f"contour passes within {distance:.3e} of eigenvalue {nearest}"
        )


def is_sparse(a) -> bool:
    return sp.issparse(a)


def to_dense(a) -> np.ndarray:
    if sp.issparse(a):
        return a.toarray()
    return np.asarray(a)


def _readonly(a):
    if isinstance(a, np.ndarray):
        a.setflags(write=False)
    return a


def _matrix_scale(a) -> float:
    if sp.issparse(a):
        return float(spla.norm(a, 1)) if a.nnz else 0.0
    return float(np.linalg.norm(a, 1)) if a.size else 0.0


class WeightedSpace:
    """C^n with the inner product <u, v> = v^H G u.

    The Cholesky factor (or a sparse LU for large Grams) is computed once at
    construction.  Optional ``lumped_weights`` describe a diagonal measure
    used by the L^p routines.
    """

    def __init__(self, gram, lumped_weights=None, name: str = ""):
        if sp.issparse(gram) and gram.shape[0] <= DENSE_LIMIT:
            gram = gram.toarray()
        if not sp.issparse(gram):
            gram = np.array(gram, dtype=complex if np.iscomplexobj(gram) else float)
            if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
                raise ValueError("Gram matrix must be square")
        n = gram.shape[0]
        if n < 1:
            raise ValueError("space dimension must be positive")
        scale = max(_matrix_scale(gram), np.finfo(float).tiny)
        asym = gram - gram.conj().T
        asym = spla.norm(asym, 1) if sp.issparse(asym) else np.linalg.norm(asym, 1)
        if asym > HERMITIAN_RTOL * scale:
            raise ValueError(f"Gram matrix is not Hermitian (defect {asym:.3e})")

        self.name = name
        self.dim = n
        if sp.issparse(gram):
            self.gram = gram.tocsc()
            diag = self.gram.diagonal().real
            if np.any(diag <= 0):
                raise ValueError("Gram matrix is not positive definite")
            self._lu = spla.splu(self.gram)
            self.chol = None
        else:
            self.gram = _readonly(0.5 * (gram + gram.conj().T))
            try:
                self.chol = _readonly(sla.cholesky(self.gram, lower=True))
            except np.linalg.LinAlgError as exc:
                raise ValueError("Gram matrix is not positive definite") from exc
            self._lu = None

        if lumped_weights is not None:
            w = np.asarray(lumped_weights, dtype=float).copy()
            if w.shape != (n,):
                raise ValueError("lumped_weights must have one entry per coefficient")
            if np.any(w <= 0):
                raise ValueError("lumped_weights must be strictly positive")
            lumped_weights = _readonly(w)
        self.lumped_weights = lumped_weights

    @classmethod
    def euclidean(cls, n: int, name: str = "") -> "WeightedSpace":
        return cls(np.eye(n), lumped_weights=np.ones(n), name=name)

    @classmethod
    def diagonal(cls, weights, name: str = "") -> "WeightedSpace":
        w = np.asarray(weights, dtype=float)
        g = sp.diags(w).tocsc() if w.size > DENSE_LIMIT else np.diag(w)
        return cls(g, lumped_weights=w, name=name)

    @property
    def sparse(self) -> bool:
        return self._lu is not None

    def inner(self, u, v) -> complex:
        return complex(np.vdot(v, self.gram @ u))

    def norm(self, u) -> float:
        u = np.asarray(u)
        if u.ndim == 1:
            return math.sqrt(max(self.inner(u, u).real, 0.0))
        gu = self.gram @ u
        return np.sqrt(np.maximum(np.einsum("ij,ij->j", u.conj(), gu).real, 0.0))

    def solve(self, rhs):
        """Apply G^{-1}."""
        rhs = to_dense(rhs)
        if self._lu is not None:
            if np.iscomplexobj(rhs) and not np.iscomplexobj(self.gram.data):
                return self._lu.solve(rhs.real) + 1j * self._lu.solve(rhs.imag)
            return self._lu.solve(rhs)
        return sla.cho_solve((self.chol, True), rhs)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"WeightedSpace{tag}(dim={self.dim}, sparse={self.sparse})"


@dataclass(frozen=True)
class LinearMap:
    """A matrix read as a map between two weighted spaces."""

    domain: WeightedSpace
    codomain: WeightedSpace
    matrix: object

    def __post_init__(self):
        shape = self.matrix.shape
        if shape != (self.codomain.dim, self.domain.dim):
            raise ValueError(
                f"matrix shape {shape} does not match "
                f"codomain x domain = ({self.codomain.dim}, {self.domain.dim})"
            )

    @property
    def dense(self) -> np.ndarray:
        return to_dense(self.matrix)

    def __call__(self, u):
        return self.matrix @ u

    def compose(self, other: "LinearMap") -> "LinearMap":
        """self o other."""
        if other.codomain is not self.domain and other.codomain.dim != self.domain.dim:
            raise ValueError("composition dimension mismatch")
        return LinearMap(other.domain, self.codomain, self.matrix @ other.matrix)

    def __sub__(self, other: "LinearMap") -> "LinearMap":
        return LinearMap(self.domain, self.codomain, self.matrix - other.matrix)

    def __add__(self, other: "LinearMap") -> "LinearMap":
        return LinearMap(self.domain, self.codomain, self.matrix + other.matrix)

    def scaled(self, c) -> "LinearMap":
        return LinearMap(self.domain, self.codomain, c * self.matrix)


def identity_map(space: WeightedSpace) -> LinearMap:
    n = space.dim
    m = sp.identity(n, format="csc") if n > DENSE_LIMIT else np.eye(n)
    return LinearMap(space, space, m)


# ---------------------------------------------------------------------------
# norms


def _lower_factor_solve(space: WeightedSpace, x: np.ndarray, conj_t: bool) -> np.ndarray:
    """L^{-1} x (conj_t False) or L^{-H} x (conj_t True) for the Cholesky L."""
    return sla.solve_triangular(
        space.chol, x, lower=True, trans="C" if conj_t else "N"
    )


def _power_norm_sq(apply, apply_adj, domain: WeightedSpace, iters: int, tol: float,
                   seed: int = 0, block: int = 6) -> float:
    """Largest value of ||T x||^2 / ||x||^2 by block power iteration.

    ``apply`` maps domain coefficients to codomain-Gram-weighted values
    G_cod T x, ``apply_adj`` applies T^H.  Rayleigh-Ritz on the block keeps
    the estimate monotone.
    """
    rng = np.random.default_rng(seed)
    n = domain.dim
    k = min(block, n)
    x = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    prev = 0.0
    est = 0.0
    for _ in range(max(iters, 1)):
        # orthonormalise in the domain inner product
        g = x.conj().T @ (domain.gram @ x)
        g = 0.5 * (g + g.conj().T)
        w, v = np.linalg.eigh(g)
        keep = w > 1e-14 * w.max()
        x = x @ (v[:, keep] / np.sqrt(w[keep]))
        y = apply_adj(apply(x))
        h = x.conj().T @ y
        h = 0.5 * (h + h.conj().T)
        w, v = np.linalg.eigh(h)
        est = float(max(w[-1], 0.0))
        if abs(est - prev) <= tol * max(est, 1e-300):
            break
        prev = est
        x = domain.solve(y) @ v[:, ::-1]
    return est


POWER_ITERATIONS = 20
POWER_TOL = 1e-8


def weighted_norm(T: LinearMap) -> float:
    """Operator norm sup ||T u||_cod / ||u||_dom."""
    dom, cod = T.domain, T.codomain
    if min(dom.dim, cod.dim) == 0:
        return 0.0
    if dom.sparse or cod.sparse:
        mat = T.matrix

        def apply(x):
            return cod.gram @ (mat @ x)

        def apply_adj(y):
            return mat.conj().T @ y

        return math.sqrt(_power_norm_sq(apply, apply_adj, dom, POWER_ITERATIONS, POWER_TOL))
    mat = T.dense
    if not np.any(mat):
        return 0.0
    left = cod.chol.conj().T @ mat  # L2^H T
    x = _lower_factor_solve(dom, left.conj().T, conj_t=False)  # L1^{-1} T^H L2
    return float(sla.svdvals(x)[0])


def weighted_bilinear_norm(D, left: WeightedSpace, right: WeightedSpace) -> float:
    """sup |u^H D f| / (||f||_left ||u||_right)."""
    if D.shape != (right.dim, left.dim):
        raise ValueError(
            f"bilinear matrix has shape {D.shape}, expected ({right.dim}, {left.dim})"
        )
    if left.sparse or right.sparse:
        # operator norm of G_r^{-1} D from left to right
        mat = D
        return math.sqrt(_power_norm_sq(
            lambda x: mat @ x, lambda y: mat.conj().T @ right.solve(y), left,
            POWER_ITERATIONS, POWER_TOL))
    mat = to_dense(D)
    if not np.any(mat):
        return 0.0
    x = _lower_factor_solve(right, mat, conj_t=False)  # L_r^{-1} D
    x = _lower_factor_solve(left, x.conj().T, conj_t=False)  # L_l^{-1} D^H L_r^{-H}
    return float(sla.svdvals(x)[0])


def gram_adjoint(T: LinearMap) -> LinearMap:
    """The Hilbert-space adjoint G_dom^{-1} T^H G_cod, as a map cod -> dom."""
    mat = T.matrix
    y = mat.conj().T @ T.codomain.gram
    out = T.domain.solve(to_dense(y))
    return LinearMap(T.codomain, T.domain, out)


# ---------------------------------------------------------------------------
# eigenproblems and solves


def generalized_hermitian_eigs(A, B, subset: Optional[tuple] = None):
    """Solve A v = lam B v for Hermitian A and HPD B.

    Returns ascending eigenvalues and B-orthonormal eigenvectors (columns).
    ``subset`` is an optional inclusive index range (lo, hi).
    """
    A = to_dense(A)
    B = to_dense(B)
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise ValueError("A and B must be square and of equal size")
    try:
        sla.cholesky(B, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError("B is not Hermitian positive definite") from exc
    A = 0.5 * (A + A.conj().T)
    B = 0.5 * (B + B.conj().T)
    kw = {"subset_by_index": list(subset)} if subset is not None else {}
    w, v = sla.eigh(A, B, **kw)
    return w, v


def _check_pivots(diag_u: np.ndarray, scale: float):
    mags = np.abs(diag_u)
    if mags.size == 0:
        return
    i = int(np.argmin(mags))
    if not np.isfinite(mags[i]) or mags[i] <= PIVOT_RTOL * scale:
        raise SingularMatrix(i, float(mags[i]), scale)


class Factorization:
    """LU factorization with a pivot check, reusable for many right-hand sides."""

    def __init__(self, A):
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        scale = max(_matrix_scale(A), np.finfo(float).tiny)
        self.shape = A.shape
        if sp.issparse(A):
            try:
                self._lu = spla.splu(A.tocsc())
            except RuntimeError as exc:
                raise SingularMatrix(-1, 0.0, scale) from exc
            _check_pivots(self._lu.U.diagonal(), scale)
            self._dense = None
        else:
            a = np.asarray(A)
            with warnings.catch_warnings():
                # zero pivots are reported below with more context
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu, piv = sla.lu_factor(a, check_finite=True)
            _check_pivots(np.diag(lu), scale)
            self._dense = (lu, piv)
            self._lu = None

    def solve(self, rhs, trans: bool = False):
        rhs = to_dense(rhs)
        if self._dense is not None:
            return sla.lu_solve(self._dense, rhs, trans=2 if trans else 0)
        return self._lu.solve(rhs, trans="H" if trans else "N")


def solve(A, rhs):
    """Solve A X = rhs; raises SingularMatrix for numerically singular A."""
    if sp.issparse(A) and np.iscomplexobj(to_dense(rhs)) and not np.iscomplexobj(A.data):
        A = A.astype(complex)
    return Factorization(A).solve(rhs)


# ---------------------------------------------------------------------------
# contour quadrature


@dataclass(frozen=True)
class ContourSpec:
    """Either the boundary of the shifted sector {|arg(z + omega)| < angle}
    (truncated at radius ``truncation``) or a circle."""

    kind: str
    vertex: float = 0.0
    angle: float = 0.5 * math.pi
    center: complex = 0.0
    radius: float = 1.0
    truncation: float = 1e6
    nodes_per_decade: int = 40
    circle_nodes: int = 64
    r_min: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("sector_boundary", "circle"):
            raise ValueError(f"unknown contour kind {self.kind!r}")
        if self.kind == "sector_boundary" and not 0.0 < self.angle < math.pi:
            raise ValueError("sector angle must lie in (0, pi)")
        if self.kind == "circle" and self.radius <= 0:
            raise ValueError("circle radius must be positive")
        if self.nodes_per_decade < 1 or self.circle_nodes < 1:
            raise ValueError("node counts must be positive")

    @property
    def rmin(self) -> float:
        if self.r_min is not None:
            return self.r_min
        return 1e-8 * max(1.0, abs(self.vertex))

    @classmethod
    def sector(cls, omega: float, angle: float, truncation: float,
               nodes_per_decade: int = 40, r_min: Optional[float] = None) -> "ContourSpec":
        return cls("sector_boundary", vertex=omega, angle=angle, truncation=truncation,
                   nodes_per_decade=nodes_per_decade, r_min=r_min)

    @classmethod
    def circle(cls, center: complex, radius: float, nodes: int = 64) -> "ContourSpec":
        return cls("circle", center=center, radius=radius, circle_nodes=nodes)


def contour_nodes(spec: ContourSpec):
    """Quadrature nodes z_k and weights w_k with sum w_k f(z_k) ~ integral f dz.

    The sector boundary is traversed with the sector on the left: inward
    along the upper ray, outward along the lower one.
    """
    if spec.kind == "circle":
        n = spec.circle_nodes
        theta = 2.0 * math.pi * np.arange(n) / n
        z = spec.center + spec.radius * np.exp(1j * theta)
        w = (2j * math.pi / n) * (z - spec.center)
        return z, w

    r0, r1 = spec.rmin, spec.truncation
    if r1 <= r0:
        raise ValueError(f"truncation {r1} must exceed r_min {r0}")
    decades = math.log10(r1 / r0)
    n = max(2, int(math.ceil(decades * spec.nodes_per_decade)) + 1)
    t = np.linspace(math.log(r0), math.log(r1), n)
    r = np.exp(t)
    h = t[1] - t[0]
    dr = h * r
    dr[0] *= 0.5
    dr[-1] *= 0.5
    # the short piece [0, r_min] next to the vertex, integrand ~ constant there
    dr[0] += r0
    up = np.exp(1j * spec.angle)
    lo = np.exp(-1j * spec.angle)
    z = np.concatenate([-spec.vertex + r * up, -spec.vertex + r * lo])
    w = np.concatenate([-up * dr, lo * dr])
    return z, w


# ---------------------------------------------------------------------------
# JSON interchange


def matrix_to_json(m) -> dict:
    if sp.issparse(m):
        c = m.tocsc()
        data = np.asarray(c.data, dtype=complex)
        return {
            "rows": int(c.shape[0]), "cols": int(c.shape[1]), "format": "csc",
            "re": data.real.tolist(), "im": data.imag.tolist(),
            "indices": c.indices.tolist(), "indptr": c.indptr.tolist(),
        }
    a = np.asarray(m, dtype=complex)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    return {
        "rows": int(a.shape[0]), "cols": int(a.shape[1]), "format": "dense",
        "re": a.real.ravel().tolist(), "im": a.imag.ravel().tolist(),
    }


def matrix_from_json(obj: dict):
    try:
        rows, cols, fmt = int(obj["rows"]), int(obj["cols"]), obj.get("format", "dense")
        re = np.asarray(obj["re"], dtype=float)
        im = np.asarray(obj.get("im", np.zeros_like(re)), dtype=float)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed matrix object: {exc}") from exc
    vals = re + 1j * im if np.any(im) else re
    if fmt == "dense":
        if vals.size != rows * cols:
            raise ValueError("dense matrix payload has wrong length")
        return vals.reshape(rows, cols)
    if fmt == "csc":
        return sp.csc_matrix((vals, obj["indices"], obj["indptr"]), shape=(rows, cols))
    raise ValueError(f"unknown matrix format {fmt!r}")
