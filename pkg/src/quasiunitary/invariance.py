"""Positivity, L-infinity contractivity and L^p bounds on lumped discretisations.

With a diagonal (lumped) mass the coefficient vector of a function holds its
nodal values, so the L-infinity norm of a P1/Q1 function is the max of its
coefficients and operator norms reduce to row and column sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .forms import SesquilinearForm
from .linalg import LinearMap, WeightedSpace, to_dense, weighted_norm

POSITIVITY_TOL = 1e-10
ARTIFACT_TOL = 1e-6
CSV_HEADER = "eps,p,l2_norm,lp_bound,linf_norm,pass"


@dataclass
class LumpedOperator:
    matrix: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.matrix = to_dense(self.matrix)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights <= 0):
            raise ValueError("measure weights must be strictly positive")
        n, m = self.matrix.shape
        if n != m or n != len(self.weights):
            raise ValueError("lumped operators are square with one weight per node")

    @classmethod
    def from_map(cls, T: LinearMap) -> "LumpedOperator":
        w = T.domain.lumped_weights
        if w is None or T.codomain.lumped_weights is None:
            raise ValueError("both spaces need lumped weights")
        return cls(T.matrix, w)


def linf_op_norm(T: LumpedOperator) -> float:
    return float(np.abs(T.matrix).sum(axis=1).max())


def l1_op_norm(T: LumpedOperator) -> float:
    w = T.weights
    return float(((w[:, None] * np.abs(T.matrix)).sum(axis=0) / w).max())


def l2_op_norm(T: LumpedOperator) -> float:
    sw = np.sqrt(T.weights)
    return float(sla.svdvals(sw[:, None] * T.matrix / sw[None, :])[0])


def lp_bound(T: LumpedOperator, p: float, l2: Optional[float] = None) -> float:
    """Riesz-Thorin interpolation between L^2 and L-infinity."""
    if p < 2:
        raise ValueError("p must be at least 2")
    l2 = l2_op_norm(T) if l2 is None else l2
    if math.isinf(p):
        return linf_op_norm(T)
    th = 2.0 / p
    linf = linf_op_norm(T)
    if l2 == 0 or linf == 0:
        return 0.0
    return l2 ** th * linf ** (1.0 - th)


# ---------------------------------------------------------------------------
# positivity


def heat_matrix(form: SesquilinearForm, t: float) -> np.ndarray:
    """e^{-t A} in V coefficients (nodal values for lumped conforming spaces)."""
    A = form.operator_matrix()
    return sla.expm(-t * A)


@dataclass
class PositivityRow:
    t: float
    min_entry: float
    max_row_sum: float
    status: str   # pass / artifact / fail

    @property
    def positive(self) -> bool:
        return self.min_entry >= -POSITIVITY_TOL

    @property
    def contractive(self) -> bool:
        return self.max_row_sum <= 1.0 + POSITIVITY_TOL


def check_positivity(form: SesquilinearForm, t_list: Sequence[float]) -> list:
    rows = []
    for t in t_list:
        if t <= 0:
            raise ValueError("semigroup times must be positive")
        E = heat_matrix(form, t)
        if np.iscomplexobj(E):
            if np.abs(E.imag).max() > 1e-12 * max(1.0, np.abs(E).max()):
                rows.append(PositivityRow(t, -math.inf, math.inf, "fail"))
                continue
            E = E.real
        mn = float(E.min())
        rs = float(np.abs(E).sum(axis=1).max())
        if mn >= -POSITIVITY_TOL and rs <= 1.0 + POSITIVITY_TOL:
            st = "pass"
        elif mn >= -ARTIFACT_TOL and rs <= 1.0 + ARTIFACT_TOL:
            st = "artifact"
        else:
            st = "fail"
        rows.append(PositivityRow(t, mn, rs, st))
    return rows


# ---------------------------------------------------------------------------
# invariant sets


def _set_samples(kind: str, n: int, count: int, rng) -> np.ndarray:
    if kind == "nonneg_cone":
        x = rng.exponential(size=(n, count))
        x[:, :1] = 1.0
        return x
    if kind == "linf_ball":
        x = rng.uniform(-1.0, 1.0, size=(n, count))
        x[:, :1] = 1.0
        x[:, 1:2] = np.sign(rng.standard_normal((n, 1)))
        return x
    raise ValueError(f"unknown set {kind!r}")


def _in_set(kind: str, x: np.ndarray, tol: float = POSITIVITY_TOL) -> np.ndarray:
    if kind == "nonneg_cone":
        return x.min(axis=0) >= -tol
    return np.abs(x).max(axis=0) <= 1.0 + tol


@dataclass
class InvarianceReport:
    set_kind: str
    maps_ok: list = field(default_factory=list)       # per eps: (Jup, Jdown) map the set into itself
    eps_ok: list = field(default_factory=list)        # per eps: phi(A_eps) preserves the set
    limit_ok: bool = False

    @property
    def ok(self) -> bool:
        return all(self.maps_ok) and all(self.eps_ok) and self.limit_ok


def check_invariance_transfer(f0: SesquilinearForm, family, set_kind: str,
                              phi: Callable[[SesquilinearForm], np.ndarray],
                              c_eps: Optional[Sequence[float]] = None,
                              n_samples: int = 100, seed: int = 0) -> InvarianceReport:
    """``family`` holds (eps, fe, J); ``phi(form)`` returns phi(A) in V coefficients.

    The identification maps are rescaled by c_eps (J_up * c, J_down / c)
    before the set checks.
    """
    rng = np.random.default_rng(seed)
    rep = InvarianceReport(set_kind)
    if c_eps is None:
        c_eps = [1.0] * len(family)
    for (eps, fe, J), c in zip(family, c_eps):
        up = c * to_dense(J.Jup.matrix)
        dn = to_dense(J.Jdown.matrix) / c
        x0 = _set_samples(set_kind, up.shape[1], n_samples, rng)
        xe = _set_samples(set_kind, up.shape[0], n_samples, rng)
        rep.maps_ok.append(bool(np.all(_in_set(set_kind, up @ x0)) and np.all(_in_set(set_kind, dn @ xe))))
        E = phi(fe)
        xv = _set_samples(set_kind, E.shape[1], n_samples, rng)
        rep.eps_ok.append(bool(np.all(_in_set(set_kind, np.real_if_close(E @ xv)))))
    E0 = phi(f0)
    x = _set_samples(set_kind, E0.shape[1], n_samples, rng)
    rep.limit_ok = bool(np.all(_in_set(set_kind, np.real_if_close(E0 @ x))))
    return rep


# ---------------------------------------------------------------------------
# L^p convergence


@dataclass
class LpRow:
    eps: float
    p: float
    l2_norm: float
    lp_bound: float
    linf_norm: float
    contractive: bool

    @property
    def ok(self) -> bool:
        return self.contractive

    def csv_row(self) -> str:
        return ",".join([repr(float(self.eps)), repr(float(self.p)), repr(self.l2_norm),
                         repr(self.lp_bound), repr(self.linf_norm), str(self.ok).lower()])


def difference_operator(f0: SesquilinearForm, fe: SesquilinearForm, J, phi_e: np.ndarray,
                        phi_0: np.ndarray) -> np.ndarray:
    """Jdown phi(A_eps) Jup - phi(A_0) on H0 coefficients (H-level maps)."""
    def h_level(form, E):
        if form.incl_is_identity:
            return E
        return to_dense(form.incl.matrix) @ E @ form.projection_to_V()
    return to_dense(J.Jdown.matrix) @ h_level(fe, phi_e) @ to_dense(J.Jup.matrix) - h_level(f0, phi_0)


def lp_convergence_study(f0: SesquilinearForm, family, phi: Callable[[SesquilinearForm], np.ndarray],
                         p_list: Sequence[float]) -> list:
    """``family`` holds (eps, fe, J); ``phi`` returns V-coefficient matrices.

    Contractivity of phi(A_eps) is checked on the H level and recorded per
    row; the study carries on when it fails.
    """
    w0 = f0.H.lumped_weights
    if w0 is None:
        raise ValueError("the limit space needs lumped weights")
    if any(p < 2 or math.isinf(p) for p in p_list):
        raise ValueError("p must lie in [2, inf)")
    P0 = phi(f0)
    rows = []
    for eps, fe, J in family:
        Pe = phi(fe)
        contr = float(np.abs(Pe).sum(axis=1).max()) <= 1.0 + POSITIVITY_TOL
        T = LumpedOperator(difference_operator(f0, fe, J, Pe, P0), w0)
        l2 = weighted_norm(LinearMap(f0.H, f0.H, T.matrix))
        linf = linf_op_norm(T)
        for p in p_list:
            rows.append(LpRow(eps, p, l2, lp_bound(T, p, l2), linf, contr))
    return rows


def heat_phi(t: float) -> Callable[[SesquilinearForm], np.ndarray]:
    """phi(A) = e^{-tA} in V coefficients via the matrix exponential."""
    return lambda form: heat_matrix(form, t)
