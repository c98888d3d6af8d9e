"""Sesquilinear forms, their sectoriality constants and resolvents.

A form lives on a space V that sits inside a larger space H through an
inclusion matrix.  With the convention a(u, v) = v^H A u the associated
operator acts on V coefficients as G_HV^{-1} A, where G_HV = incl^H G_H incl
is the H inner product pulled back to V.  Its resolvent, read as a map on
H, is

    R(z) = incl (z G_HV - A)^{-1} incl^H G_H

which reduces to (z G_H - A)^{-1} G_H when incl is the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .linalg import (
    DENSE_LIMIT,
    Factorization,
    LinearMap,
    SingularMatrix,
    SpectrumHit,
    WeightedSpace,
    generalized_hermitian_eigs,
    matrix_from_json,
    matrix_to_json,
    to_dense,
    weighted_bilinear_norm,
    weighted_norm,
)

SECTOR_SLACK = 1e-7


class SesquilinearForm:
    """Form matrix A on V with a(u, v) = v^H A u, plus the embedding V -> H."""

    def __init__(self, H: WeightedSpace, V: WeightedSpace, form, incl=None, name: str = ""):
        if incl is None:
            if H.dim != V.dim:
                raise ValueError("an inclusion matrix is needed when dim V != dim H")
            self.incl_is_identity = True
            incl = sp.identity(H.dim, format="csc") if H.dim > DENSE_LIMIT else np.eye(H.dim)
        else:
            self.incl_is_identity = False
        if isinstance(incl, LinearMap):
            incl = incl.matrix
        if incl.shape != (H.dim, V.dim):
            raise ValueError(f"inclusion has shape {incl.shape}, expected ({H.dim}, {V.dim})")
        if form.shape != (V.dim, V.dim):
            raise ValueError(f"form matrix has shape {form.shape}, expected ({V.dim}, {V.dim})")
        self.H = H
        self.V = V
        self.incl = LinearMap(V, H, incl)
        self.form = form
        self.name = name
        g = incl.conj().T @ (H.gram @ incl)
        if sp.issparse(g) and g.shape[0] <= DENSE_LIMIT:
            g = g.toarray()
        self.gram_HV = g
        self._hermitian: Optional[bool] = None

    @property
    def dim(self) -> int:
        return self.V.dim

    @property
    def sparse(self) -> bool:
        return sp.issparse(self.form) or sp.issparse(self.gram_HV)

    @property
    def is_hermitian(self) -> bool:
        if self._hermitian is None:
            a = self.form
            d = a - a.conj().T
            if sp.issparse(a):
                dn = abs(d).max() if d.nnz else 0.0
                scale = abs(a).max() if a.nnz else 0.0
            else:
                dn, scale = np.abs(d).max(), np.abs(a).max()
            self._hermitian = bool(dn <= 1e-13 * max(scale, 1e-300))
        return self._hermitian

    def __call__(self, u, v) -> complex:
        return complex(np.vdot(v, self.form @ u))

    def adjoint(self) -> "SesquilinearForm":
        """The form a*(u, v) = conj(a(v, u))."""
        return SesquilinearForm(self.H, self.V, self.form.conj().T,
                                None if self.incl_is_identity else self.incl.matrix,
                                name=f"{self.name}*" if self.name else "")

    def operator_matrix(self) -> np.ndarray:
        """Associated operator in V coefficients, G_HV^{-1} A (dense)."""
        return sla.solve(to_dense(self.gram_HV), to_dense(self.form), assume_a="pos")

    def projection_to_V(self) -> np.ndarray:
        """Coefficient map P = G_HV^{-1} incl^H G_H (H-orthogonal projection onto V)."""
        rhs = to_dense(self.incl.matrix.conj().T @ self.H.gram)
        return sla.solve(to_dense(self.gram_HV), rhs, assume_a="pos")

    def eigenvalues(self) -> np.ndarray:
        a, g = to_dense(self.form), to_dense(self.gram_HV)
        if self.is_hermitian:
            return generalized_hermitian_eigs(a, g)[0].astype(complex)
        return sla.eig(a, g, right=False)

    def to_json(self, constants: Optional["SectorialityConstants"] = None) -> dict:
        out = {
            "gram_H": matrix_to_json(self.H.gram),
            "gram_V": matrix_to_json(self.V.gram),
            "incl": matrix_to_json(self.incl.matrix),
            "form": matrix_to_json(self.form),
        }
        if constants is not None:
            out["constants"] = constants.as_dict()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SesquilinearForm":
        try:
            H = WeightedSpace(matrix_from_json(obj["gram_H"]), name="H")
            V = WeightedSpace(matrix_from_json(obj["gram_V"]), name="V")
            form = matrix_from_json(obj["form"])
        except KeyError as exc:
            raise ValueError(f"form bundle is missing field {exc}") from exc
        incl = matrix_from_json(obj["incl"]) if "incl" in obj else None
        if incl is not None and incl.shape[0] == incl.shape[1] and np.allclose(
                to_dense(incl), np.eye(incl.shape[0])):
            incl = None
        return cls(H, V, form, incl)


@dataclass(frozen=True)
class SectorialityConstants:
    M: float
    omega: float
    alpha: float
    c_V: float

    @property
    def theta_min(self) -> float:
        return math.atan(self.M / self.alpha)

    def as_dict(self) -> dict:
        return {"M": self.M, "omega": self.omega, "alpha": self.alpha,
                "c_V": self.c_V, "theta_min": self.theta_min}

    @classmethod
    def common(cls, *consts: "SectorialityConstants") -> "SectorialityConstants":
        """Constants valid simultaneously for several forms sharing alpha."""
        alphas = {c.alpha for c in consts}
        if len(alphas) != 1:
            raise ValueError("forms must share the ellipticity constant alpha")
        return cls(M=max(c.M for c in consts), omega=max(c.omega for c in consts),
                   alpha=consts[0].alpha, c_V=max(c.c_V for c in consts))


@dataclass(frozen=True)
class SectorEstimates:
    theta: float
    D_theta: float
    C_theta: float


def sector_estimates(consts: SectorialityConstants, theta: float) -> SectorEstimates:
    """Resolvent constants on the complement of the sector of half-angle theta."""
    gap = theta - consts.theta_min
    if not (gap > 0 and theta <= math.pi + 1e-15):
        raise ValueError(
            f"theta = {theta} must lie in ({consts.theta_min}, pi]")
    D = 1.0 / math.sin(gap)
    C = math.sqrt((1.0 + D) * D / consts.alpha)
    return SectorEstimates(theta, D, C)


def sectoriality_constants(form: SesquilinearForm, alpha: float = 0.5) -> SectorialityConstants:
    """Form bound M, embedding constant c_V and the least shift omega for alpha."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    M = weighted_bilinear_norm(form.form, form.V, form.V)
    c_V = weighted_norm(form.incl)
    a = to_dense(form.form)
    herm = 0.5 * (a + a.conj().T) - alpha * to_dense(form.V.gram)
    lam_min = generalized_hermitian_eigs(herm, to_dense(form.gram_HV), subset=(0, 0))[0][0]
    omega = max(0.0, -float(lam_min))
    return SectorialityConstants(M=M, omega=omega, alpha=alpha, c_V=c_V)


# ---------------------------------------------------------------------------
# resolvents


def _shifted_factor(form: SesquilinearForm, z: complex) -> Factorization:
    g, a = form.gram_HV, form.form
    if sp.issparse(g) or sp.issparse(a):
        m = (z * sp.csc_matrix(g) - sp.csc_matrix(a)).tocsc()
    else:
        m = z * g - a
    try:
        return Factorization(m)
    except SingularMatrix as exc:
        raise SpectrumHit(z) from exc


def resolvent_HV(form: SesquilinearForm, z: complex) -> LinearMap:
    """R(z) as a map H -> V."""
    fac = _shifted_factor(form, z)
    rhs = to_dense(form.incl.matrix.conj().T @ form.H.gram)
    return LinearMap(form.H, form.V, fac.solve(rhs.astype(complex)))


def resolvent(form: SesquilinearForm, z: complex) -> LinearMap:
    """R(z) = (z - A)^{-1} as a map H -> H."""
    r = resolvent_HV(form, z)
    if form.incl_is_identity:
        return LinearMap(form.H, form.H, r.matrix)
    return LinearMap(form.H, form.H, to_dense(form.incl.matrix @ r.matrix))


def in_shifted_sector(z: complex, omega: float, angle: float, slack: float = 0.0) -> bool:
    """True when z + omega lies in the open sector |arg| < angle (+ slack)."""
    w = complex(z) + omega
    if w == 0:
        return True
    return abs(math.atan2(w.imag, w.real)) < angle + slack


@dataclass
class SectorInclusionReport:
    ok: bool
    eigenvalues: np.ndarray
    margins: np.ndarray  # arctan(M/alpha) - |arg(lam + omega)|


def check_sector_inclusion(form: SesquilinearForm, consts: SectorialityConstants) -> SectorInclusionReport:
    lam = form.eigenvalues()
    shifted = lam + consts.omega
    args = np.abs(np.angle(shifted))
    margins = consts.theta_min - args
    ok = bool(np.all(margins >= -SECTOR_SLACK)) and bool(np.all(shifted.real > 0))
    return SectorInclusionReport(ok, lam, margins)


@dataclass
class ResolventBoundRow:
    z: complex
    hh_scaled: float   # ||R(z)||_{H->H} |z + omega|
    hv_scaled: float   # ||R(z)||_{H->V} sqrt|z + omega|
    hv_adj_scaled: float
    ok: bool


@dataclass
class ResolventBoundReport:
    estimates: SectorEstimates
    rows: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)


def check_resolvent_bounds(form: SesquilinearForm, consts: SectorialityConstants,
                           theta: float, z_grid: Iterable[complex]) -> ResolventBoundReport:
    est = sector_estimates(consts, theta)
    tol = 1e-7 * est.D_theta
    adj = form.adjoint()
    report = ResolventBoundReport(est)
    for z in z_grid:
        z = complex(z)
        if in_shifted_sector(z, consts.omega, theta):
            raise ValueError(f"z = {z} lies inside the sector of half-angle {theta}")
        dist = abs(z + consts.omega)
        hh = weighted_norm(resolvent(form, z)) * dist
        hv = weighted_norm(resolvent_HV(form, z)) * math.sqrt(dist)
        hv_adj = weighted_norm(resolvent_HV(adj, z.conjugate())) * math.sqrt(dist)
        ok = hh <= est.D_theta + tol and hv <= est.C_theta + tol and hv_adj <= est.C_theta + tol
        report.rows.append(ResolventBoundRow(z, hh, hv, hv_adj, ok))
    return report


def exterior_ray(omega: float, angle: float, radii) -> np.ndarray:
    """Points -omega + r e^{i angle}."""
    return -omega + np.asarray(radii, dtype=float) * np.exp(1j * angle)
