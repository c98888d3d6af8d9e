"""Spectra, Riesz projections and spectral convergence along a family."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .calculus import fit_through_origin
from .forms import SesquilinearForm, resolvent, resolvent_HV
from .linalg import (
    ContourHitsSpectrum,
    ContourSpec,
    LinearMap,
    NumericalError,
    contour_nodes,
    generalized_hermitian_eigs,
    to_dense,
    weighted_norm,
)

CLUSTER_RTOL = 1e-7
CSV_HEADER = "eps,lambda_re,lambda_im,mult,window_id,pass"


def cluster_eigenvalues(lam, rtol: float = CLUSTER_RTOL) -> list:
    """Group eigenvalues closer than rtol (1 + |lambda|); returns [(mean, mult)]."""
    lam = sorted(np.asarray(lam, dtype=complex), key=lambda x: (x.real, x.imag))
    groups: list = []
    for x in lam:
        for g in groups:
            c = np.mean(g)
            if abs(x - c) <= rtol * (1.0 + abs(c)):
                g.append(x)
                break
        else:
            groups.append([x])
    return [(complex(np.mean(g)), len(g)) for g in groups]


def spectrum(form: SesquilinearForm) -> list:
    """Eigenvalues of the associated operator with algebraic multiplicities."""
    try:
        lam = form.eigenvalues()
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    return cluster_eigenvalues(lam)


@dataclass(frozen=True)
class SpectralWindow:
    """A disk (center, radius) or rectangle (re_lo, re_hi, im_lo, im_hi)."""

    kind: str
    center: complex = 0.0
    radius: float = 1.0
    re_lo: float = 0.0
    re_hi: float = 0.0
    im_lo: float = 0.0
    im_hi: float = 0.0
    margin: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("disk", "rectangle"):
            raise ValueError(f"unknown window kind {self.kind!r}")
        if self.margin <= 0:
            raise ValueError("window margin must be positive")
        if self.kind == "disk" and self.radius <= 0:
            raise ValueError("disk radius must be positive")
        if self.kind == "rectangle" and not (self.re_lo < self.re_hi and self.im_lo < self.im_hi):
            raise ValueError("rectangle bounds must be increasing")

    @classmethod
    def disk(cls, center: complex, radius: float, margin: float = 1e-3) -> "SpectralWindow":
        return cls("disk", center=center, radius=radius, margin=margin)

    @classmethod
    def rectangle(cls, re_lo, re_hi, im_lo, im_hi, margin: float = 1e-3) -> "SpectralWindow":
        return cls("rectangle", re_lo=re_lo, re_hi=re_hi, im_lo=im_lo, im_hi=im_hi, margin=margin)

    def contains(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=complex)
        if self.kind == "disk":
            return np.abs(lam - self.center) < self.radius
        return ((lam.real > self.re_lo) & (lam.real < self.re_hi)
                & (lam.imag > self.im_lo) & (lam.imag < self.im_hi))

    def boundary_distance(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=complex)
        if self.kind == "disk":
            return np.abs(np.abs(lam - self.center) - self.radius)
        x, y = lam.real, lam.imag
        dx = np.maximum(np.maximum(self.re_lo - x, x - self.re_hi), 0.0)
        dy = np.maximum(np.maximum(self.im_lo - y, y - self.im_hi), 0.0)
        outside = np.hypot(dx, dy)
        inside = np.minimum.reduce([x - self.re_lo, self.re_hi - x, y - self.im_lo, self.im_hi - y])
        return np.where(self.contains(lam), inside, outside)

    def boundary_points(self, n: int = 16) -> np.ndarray:
        if self.kind == "disk":
            return self.center + self.radius * np.exp(2j * math.pi * np.arange(n) / n)
        k = max(n // 4, 1)
        t = np.linspace(0.0, 1.0, k, endpoint=False)
        a, b, c, d = self.re_lo, self.re_hi, self.im_lo, self.im_hi
        return np.concatenate([
            a + (b - a) * t + 1j * c, b + 1j * (c + (d - c) * t),
            b - (b - a) * t + 1j * d, a + 1j * (d - (d - c) * t)])

    def enclosing_circle(self) -> tuple:
        if self.kind == "disk":
            return self.center, self.radius
        c = 0.5 * (self.re_lo + self.re_hi) + 0.5j * (self.im_lo + self.im_hi)
        return c, 0.5 * math.hypot(self.re_hi - self.re_lo, self.im_hi - self.im_lo)


@dataclass
class SpectralProjection:
    P: LinearMap          # H -> H
    P_HV: LinearMap       # H -> V
    rank: int
    trace: complex
    eigenvalues: np.ndarray

    @property
    def idempotency_defect(self) -> float:
        m = self.P.matrix
        return weighted_norm(LinearMap(self.P.domain, self.P.codomain, m @ m - m))

    @property
    def trace_consistent(self) -> bool:
        return abs(self.trace - self.rank) <= 1e-6


def _circle_nodes_for(lam, center, radius, tol=1e-13) -> int:
    if len(lam) == 0:
        return 64
    rho = np.abs(np.asarray(lam) - center) / radius
    # geometric decay of the trapezoid error with ratio max(rho_in, 1/rho_out)
    inner = rho[rho < 1]
    outer = rho[rho >= 1]
    q = max(inner.max() if inner.size else 0.0, 1.0 / outer.min() if outer.size else 0.0)
    if q >= 1:
        return 4096
    n = int(math.ceil(math.log(tol) / math.log(max(q, 1e-3))))
    return int(min(max(64, n), 4096))


def spectral_projection(form: SesquilinearForm, window: SpectralWindow,
                        contour: Optional[ContourSpec] = None) -> SpectralProjection:
    """Riesz projection (1/2 pi i) oint R(z) dz around the window."""
    A = form.operator_matrix().astype(complex)
    T, Q = sla.schur(A, output="complex")
    lam = np.diag(T)
    if contour is None:
        c, rad = window.enclosing_circle()
        contour = ContourSpec.circle(c, rad, _circle_nodes_for(lam, c, rad))
    if contour.kind != "circle":
        raise ValueError("spectral projections use circular contours")
    dist = np.abs(np.abs(lam - contour.center) - contour.radius)
    if dist.size and dist.min() < window.margin:
        i = int(np.argmin(dist))
        raise ContourHitsSpectrum(complex(lam[i]), float(dist[i]))
    inside = np.abs(lam - contour.center) < contour.radius
    rank = int(inside.sum())
    z, w = contour_nodes(contour)
    n = T.shape[0]
    eye = np.eye(n)
    acc = np.zeros((n, n), dtype=complex)
    for zk, wk in zip(z, w):
        acc += wk * sla.solve_triangular(zk * eye - T, eye)
    pv = Q @ (acc / (2j * math.pi)) @ Q.conj().T  # V coefficients
    tr = complex(np.trace(pv))
    proj = form.projection_to_V() if not form.incl_is_identity else None
    p_hv = pv if proj is None else pv @ proj
    p_h = p_hv if proj is None else to_dense(form.incl.matrix @ p_hv)
    return SpectralProjection(LinearMap(form.H, form.H, p_h), LinearMap(form.H, form.V, p_hv),
                              rank, tr, lam[inside])


# ---------------------------------------------------------------------------
# convergence checks


def _eig_all(form: SesquilinearForm) -> np.ndarray:
    return np.asarray(form.eigenvalues(), dtype=complex)


@dataclass
class WindowRow:
    eps: float
    delta: float
    hits: int
    resolvent_gap: float
    status: str  # pass / fail / inconclusive


@dataclass
class SpectralConvergenceReport:
    threshold: float
    rows: list = field(default_factory=list)
    fit_C: float = 0.0
    fit_max_ratio: float = 0.0

    @property
    def ok(self) -> bool:
        return all(r.status != "fail" for r in self.rows) and self.fit_max_ratio <= 2.0


def window_threshold(f0: SesquilinearForm, window: SpectralWindow, kappa: float,
                     n: int = 16) -> float:
    """delta_0 = 1/2 (max_z ||R0(z)||_{H->V} + kappa)^{-1} over the window boundary."""
    worst = max(weighted_norm(resolvent_HV(f0, z)) for z in window.boundary_points(n))
    return 0.5 / (worst + kappa)


def check_spectral_convergence(f0: SesquilinearForm, family, window: SpectralWindow,
                               n_grid: int = 8) -> SpectralConvergenceReport:
    """``family`` is a sequence of (eps, fe, J, report)."""
    lam0 = _eig_all(f0)
    if np.any(window.contains(lam0)) or np.any(window.boundary_distance(lam0) < window.margin):
        raise ValueError("window must lie in the resolvent set of A0 with margin")
    kappa = max(rep.kappa for *_, rep in family) if family else 1.0
    thr = window_threshold(f0, window, kappa)
    out = SpectralConvergenceReport(thr)
    grid = window.boundary_points(n_grid)
    r0 = {z: resolvent(f0, z).matrix for z in grid}
    ds, gaps = [], []
    for eps, fe, J, rep in family:
        lam = _eig_all(fe)
        hits = int(np.sum(window.contains(lam)))
        gap = 0.0
        for z in grid:
            re = resolvent(fe, z).matrix
            gap = max(gap, weighted_norm(LinearMap(fe.H, f0.H, J.Jdown.matrix @ re - r0[z] @ J.Jdown.matrix)))
        if hits == 0:
            status = "pass"
        else:
            status = "fail" if rep.delta <= thr else "inconclusive"
        out.rows.append(WindowRow(eps, rep.delta, hits, gap, status))
        ds.append(rep.delta)
        gaps.append(gap)
    fit = fit_through_origin(ds, gaps)
    out.fit_C, out.fit_max_ratio = fit.C, fit.max_ratio
    return out


@dataclass
class MultiplicityTransfer:
    m0: int
    m_eps: int
    eigenvalues: np.ndarray
    threshold: float
    delta: float

    @property
    def status(self) -> str:
        if self.m0 == self.m_eps:
            return "pass"
        return "fail" if self.delta <= self.threshold else "inconclusive"


def count_multiplicity_transfer(f0: SesquilinearForm, fe: SesquilinearForm, J, report,
                                lambda0: complex, disk_radius: float,
                                lam0_all=None, lame_all=None) -> MultiplicityTransfer:
    """Compare algebraic multiplicities inside the disk B(lambda0, disk_radius).

    Precomputed eigenvalue arrays may be passed to avoid repeated solves.
    """
    lam0 = _eig_all(f0) if lam0_all is None else np.asarray(lam0_all)
    d0 = np.abs(lam0 - lambda0)
    inside0 = d0 < disk_radius
    # the eigenvalues of A0 inside the disk form the isolated cluster around
    # lambda0; the disk boundary must stay clear of the spectrum
    if np.any(np.abs(d0 - disk_radius) < 1e-6 * (1 + abs(lambda0))):
        raise ValueError("disk boundary touches the spectrum of A0")
    m0 = int(inside0.sum())
    lame = _eig_all(fe) if lame_all is None else np.asarray(lame_all)
    inside = np.abs(lame - lambda0) < disk_radius
    # Riesz projection of A0 for the threshold
    p0 = spectral_projection(f0, SpectralWindow.disk(lambda0, disk_radius, margin=1e-9))
    thr = 0.5 / (weighted_norm(p0.P_HV) + report.kappa)
    return MultiplicityTransfer(m0, int(inside.sum()), lame[inside], thr, report.delta)


def check_jup_lower_bound(f0: SesquilinearForm, fe: SesquilinearForm, J, report,
                          P0: SpectralProjection, n_random: int = 100, seed: int = 0) -> tuple:
    """||Jup f|| >= ||f|| / 2 on range P0.  Returns (status, worst ratio)."""
    thr = 0.5 / (weighted_norm(P0.P_HV) + report.kappa)
    if report.delta > thr:
        return "skipped", math.nan
    m = P0.P.matrix
    u, s, _ = np.linalg.svd(m)
    basis = u[:, : max(P0.rank, 1)] if P0.rank else u[:, :0]
    if basis.shape[1] == 0:
        return "pass", math.inf
    rng = np.random.default_rng(seed)
    coeff = rng.standard_normal((basis.shape[1], n_random)) + 1j * rng.standard_normal((basis.shape[1], n_random))
    vecs = np.hstack([basis, basis @ coeff])
    vecs = m @ vecs  # stay inside the range
    num = fe.H.norm(J.Jup.matrix @ vecs)
    den = f0.H.norm(vecs)
    ratio = float(np.min(num / den))
    return ("pass" if ratio >= 0.5 - 1e-9 else "fail"), ratio
