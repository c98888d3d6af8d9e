"""Holomorphic functional calculus for sectorial forms.

psi(A) is computed as (1/2 pi i) * integral of psi(z) R(z) dz along the
boundary of a shifted sector that contains the spectrum.  The resolvent is
evaluated through a complex Schur form of the operator matrix, so each
quadrature node costs one triangular solve.

Eigen-decomposition and scaling-and-squaring paths are provided as
independent cross-checks and for large problems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .forms import SectorialityConstants, SesquilinearForm, sectoriality_constants
from .linalg import (
    ContourHitsSpectrum,
    ContourSpec,
    LinearMap,
    contour_nodes,
    generalized_hermitian_eigs,
    to_dense,
    weighted_norm,
)

EXTENSION_FACTOR = 2.0 + 2.0 / math.sqrt(3.0)
CONTOUR_MARGIN = 1e-6
TAIL_TOL = 1e-10


@dataclass
class CalculusFunction:
    """A bounded holomorphic function on the shifted sector |arg(z + omega)| < theta.

    For the decaying class ``Hinf00`` the bound
    |f(z)| <= decay_K * |z + omega|^(-decay_mu) is assumed with decay_mu > 1/2.
    """

    eval: Callable[[complex], complex]
    theta: float
    omega: float
    kind: str = "Hinf00"
    decay_mu: float = 1.0
    decay_K: float = 1.0
    sup_norm: float = 1.0
    name: str = "f"
    exp_time: Optional[float] = None  # set for e^{-tz}, enables the expm path
    # half-angle of the largest sector on which the function stays bounded;
    # only used to size the quadrature step
    analytic_angle: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("Hinf", "Hinf00"):
            raise ValueError(f"unknown function class {self.kind!r}")
        if self.kind == "Hinf00" and not self.decay_mu > 0.5:
            raise ValueError("decaying functions need decay_mu > 1/2")
        if not 0 < self.theta <= math.pi:
            raise ValueError("theta must lie in (0, pi]")

    def __call__(self, z):
        return self.eval(z)

    def boundary_samples(self, n: int = 200, r_lo: float = 1e-3, r_hi: float = 1e6) -> np.ndarray:
        r = np.geomspace(r_lo, r_hi, n)
        e = np.exp(1j * self.theta)
        return np.concatenate([-self.omega + r * e, -self.omega + r * e.conjugate()])

    def certify(self, n: int = 200) -> bool:
        """Check the decay bound on n sample points per boundary ray."""
        z = self.boundary_samples(n)
        vals = np.abs(np.asarray([self.eval(x) for x in z]))
        if self.kind == "Hinf":
            return bool(np.all(vals <= self.sup_norm * (1 + 1e-9)))
        dist = np.abs(z + self.omega)
        bound = self.decay_K * dist ** (-self.decay_mu)
        return bool(np.all(vals <= bound * (1 + 1e-9))
                    and np.all(vals <= self.decay_K * (1 + 1e-9)))

    def tail_bound(self, R: float) -> float:
        mu = self.decay_mu
        return self.decay_K * R ** (0.5 - mu) / (math.pi * (mu - 0.5))

    def truncation_for(self, tol: float) -> float:
        mu = self.decay_mu
        return (self.decay_K / (math.pi * (mu - 0.5) * tol)) ** (1.0 / (mu - 0.5))


def _sector_factor(theta: float) -> float:
    # |w + 1| >= c max(1, |w|) on |arg w| <= theta
    return 1.0 if theta <= 0.5 * math.pi else math.sin(theta)


def resolvent_shift(omega: float, theta: float) -> CalculusFunction:
    """psi(z) = 1 / (omega + 1 + z); theta < pi keeps the pole outside."""
    if not theta < math.pi:
        raise ValueError("1/(omega+1+z) is unbounded on the full plane sector")
    c = _sector_factor(theta)
    return CalculusFunction(lambda z: 1.0 / (omega + 1.0 + z), theta, omega, "Hinf00",
                            decay_mu=1.0, decay_K=1.0 / c, sup_norm=1.0 / c,
                            name="resolvent_shift", analytic_angle=math.pi)


def exponential(t: float, omega: float, theta: float, mu: Optional[float] = None) -> CalculusFunction:
    """psi(z) = exp(-t z); needs theta < pi/2 so that it decays on the sector.

    Any mu > 1/2 gives a valid decay bound; by default the one giving the
    shortest truncation radius is picked.
    """
    if t <= 0:
        raise ValueError("the contour calculus needs t > 0")
    if not theta < 0.5 * math.pi:
        raise ValueError("exp(-tz) decays on the sector only for theta < pi/2")
    c = math.cos(theta)

    def build(m):
        K = math.exp(t * omega) * max(1.0, (m / (math.e * t * c)) ** m)
        return CalculusFunction(lambda z: np.exp(-t * z), theta, omega, "Hinf00",
                                decay_mu=m, decay_K=K, sup_norm=math.exp(t * omega),
                                name=f"exp(-{t:g}z)", exp_time=t,
                                analytic_angle=0.5 * math.pi)

    if mu is not None:
        return build(mu)
    cands = [build(m) for m in (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)]
    return min(cands, key=lambda f: f.truncation_for(TAIL_TOL * f.sup_norm))


def rational(num: Sequence[complex], den: Sequence[complex], omega: float,
             theta: float) -> CalculusFunction:
    """p(z)/q(z) with coefficients listed from the highest power down.

    Poles must stay outside the closed sector and deg q > deg p.
    """
    p = np.poly1d(np.asarray(num, dtype=complex))
    q = np.poly1d(np.asarray(den, dtype=complex))
    if q.order <= p.order:
        raise ValueError("rational function must decay: deg den > deg num")
    for pole in q.roots:
        w = pole + omega
        if abs(w) == 0 or abs(np.angle(w)) <= theta:
            raise ValueError(f"pole {pole} lies inside the sector")
    mu = float(q.order - p.order)
    f = CalculusFunction(lambda z: p(z) / q(z), theta, omega, "Hinf00", decay_mu=mu,
                         decay_K=1.0, sup_norm=1.0, name="rational")
    z = f.boundary_samples(400, 1e-6, 1e8)
    vals = np.abs(p(z) / q(z))
    dist = np.abs(z + omega)
    K = float(max(np.max(vals * dist ** mu), np.max(vals))) * 1.05
    f.decay_K = K
    f.sup_norm = float(np.max(vals)) * 1.05
    return f


def from_callable(fn: Callable, omega: float, theta: float, mu: float,
                  name: str = "custom") -> CalculusFunction:
    """Wrap fn, estimating the decay constant on boundary samples."""
    f = CalculusFunction(fn, theta, omega, "Hinf00", decay_mu=mu, name=name)
    z = f.boundary_samples(400, 1e-6, 1e8)
    vals = np.abs(np.asarray([fn(x) for x in z]))
    dist = np.abs(z + omega)
    f.decay_K = float(max(np.max(vals * dist ** mu), np.max(vals))) * 1.05
    f.sup_norm = float(np.max(vals)) * 1.05
    return f


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class CalculusResult:
    op: LinearMap
    tail_bound: float
    nodes: int
    contour: Optional[ContourSpec] = None


def default_contour(psi: CalculusFunction, consts: SectorialityConstants,
                    spectrum=None, tol: float = TAIL_TOL) -> ContourSpec:
    """Sector-boundary contour with angle midway in (arctan(M/alpha), psi.theta).

    The log-radial step is sized from the width of the strip in which the
    integrand stays analytic, which is set by the angular gap to the
    spectrum on one side and to the edge of the function's sector on the
    other.
    """
    if psi.omega < consts.omega - 1e-12:
        raise ValueError("function shift is smaller than the form's omega")
    lo = consts.theta_min
    if psi.theta <= lo:
        raise ValueError(
            f"function sector angle {psi.theta:.4f} is not larger than arctan(M/alpha) = {lo:.4f}")
    sigma = 0.5 * (lo + psi.theta)
    R = max(psi.truncation_for(tol * max(psi.sup_norm, 1e-300)), 10.0 * max(1.0, psi.omega))
    spec_angle = lo
    if spectrum is not None and len(spectrum):
        spec_angle = float(np.max(np.abs(np.angle(np.asarray(spectrum) + psi.omega))))
    outer = psi.analytic_angle if psi.analytic_angle is not None else psi.theta
    width = max(min(sigma - spec_angle, outer - sigma), 1e-3)
    h = 2.0 * math.pi * width / math.log(1.0 / tol)
    npd = int(min(max(40, math.ceil(math.log(10.0) / h)), 4000))
    return ContourSpec.sector(psi.omega, sigma, R, npd)


def _distance_to_rays(lam: np.ndarray, vertex: float, angle: float) -> np.ndarray:
    w = lam + vertex
    out = np.empty(lam.shape)
    for s in (1.0, -1.0):
        d = np.exp(1j * s * angle)
        t = np.maximum((w * d.conjugate()).real, 0.0)
        dist = np.abs(w - t * d)
        out = dist if s > 0 else np.minimum(out, dist)
    return out


def _schur(form: SesquilinearForm):
    A = form.operator_matrix().astype(complex)
    T, Q = sla.schur(A, output="complex")
    return T, Q


def _h_level(form: SesquilinearForm, f_v: np.ndarray) -> LinearMap:
    """Lift a V-coefficient operator f(A~) to H: incl f(A~) P."""
    if form.incl_is_identity:
        return LinearMap(form.H, form.H, f_v)
    P = form.projection_to_V()
    return LinearMap(form.H, form.H, to_dense(form.incl.matrix @ (f_v @ P)))


def eval_calculus(form: SesquilinearForm, psi: CalculusFunction,
                  contour: Optional[ContourSpec] = None,
                  consts: Optional[SectorialityConstants] = None) -> CalculusResult:
    """psi(A) by sector-boundary quadrature."""
    if psi.kind != "Hinf00":
        raise ValueError("contour calculus needs a decaying (Hinf00) function")
    T, Q = _schur(form)
    lam = np.diag(T)
    if contour is None:
        consts = consts or sectoriality_constants(form)
        contour = default_contour(psi, consts, lam)
    if contour.kind == "sector_boundary":
        dist = _distance_to_rays(lam, contour.vertex, contour.angle)
        inside = np.abs(np.angle(lam + contour.vertex)) < contour.angle
        if not np.all(inside):
            i = int(np.argmin(np.where(inside, np.inf, 0.0)))
            raise ContourHitsSpectrum(complex(lam[i]), 0.0)
    else:
        dist = np.abs(np.abs(lam - contour.center) - contour.radius)
    if dist.size and dist.min() < CONTOUR_MARGIN:
        i = int(np.argmin(dist))
        raise ContourHitsSpectrum(complex(lam[i]), float(dist[i]))

    z, w = contour_nodes(contour)
    vals = np.asarray(psi.eval(z), dtype=complex) * w
    n = T.shape[0]
    eye = np.eye(n)
    acc = np.zeros((n, n), dtype=complex)
    used = 0
    for zk, ck in zip(z, vals):
        if ck == 0 or not np.isfinite(ck):
            continue
        acc += ck * sla.solve_triangular(zk * eye - T, eye)
        used += 1
    f_v = Q @ (acc / (2j * math.pi)) @ Q.conj().T
    tail = psi.tail_bound(contour.truncation) if contour.kind == "sector_boundary" else 0.0
    return CalculusResult(_h_level(form, f_v), tail, used, contour)


def eval_spectral(form: SesquilinearForm, fn: Callable) -> LinearMap:
    """fn(A) through an eigen-decomposition of the operator matrix.

    Hermitian problems use a G_HV-orthonormal eigenbasis; otherwise the
    operator must be diagonalizable.
    """
    if form.is_hermitian:
        lam, X = generalized_hermitian_eigs(to_dense(form.form), to_dense(form.gram_HV))
        f_v = (X * np.asarray(fn(lam.astype(complex)))) @ (X.conj().T @ to_dense(form.gram_HV))
    else:
        lam, X = sla.eig(form.operator_matrix())
        f_v = (X * np.asarray(fn(lam))) @ np.linalg.inv(X)
    return _h_level(form, f_v)


def semigroup(form: SesquilinearForm, t: float, method: str = "contour",
              consts: Optional[SectorialityConstants] = None, theta: Optional[float] = None) -> LinearMap:
    """exp(-t A) by contour quadrature, scaling-and-squaring or eigenvectors."""
    if method == "expm":
        f_v = sla.expm(-t * form.operator_matrix())
        return _h_level(form, f_v)
    if t <= 0:
        raise ValueError("semigroup evaluation needs t > 0")
    if method == "eig":
        return eval_spectral(form, lambda z: np.exp(-t * z))
    if method != "contour":
        raise ValueError(f"unknown method {method!r}")
    consts = consts or sectoriality_constants(form)
    if theta is None:
        theta = 0.5 * (consts.theta_min + 0.5 * math.pi)
    return eval_calculus(form, exponential(t, consts.omega, theta), consts=consts).op


def apply_function(form: SesquilinearForm, psi: CalculusFunction, method: str = "contour",
                   consts: Optional[SectorialityConstants] = None) -> LinearMap:
    if method == "contour":
        return eval_calculus(form, psi, consts=consts).op
    if method == "eig":
        return eval_spectral(form, psi.eval)
    if method == "expm":
        if psi.exp_time is None:
            raise ValueError("expm path only applies to exponential functions")
        return semigroup(form, psi.exp_time, "expm")
    raise ValueError(f"unknown method {method!r}")


def extended_calculus_apply(form: SesquilinearForm, phi: CalculusFunction, u,
                            consts: Optional[SectorialityConstants] = None,
                            method: str = "contour"):
    """phi(A) u for bounded phi, via psi = phi / (omega + 1 + z).

    ``u`` is given in V coefficients; the result is an H coefficient vector.
    """
    consts = consts or sectoriality_constants(form)
    om = phi.omega
    c = _sector_factor(phi.theta)
    psi = CalculusFunction(lambda z: phi.eval(z) / (om + 1.0 + z), phi.theta, om, "Hinf00",
                           decay_mu=1.0, decay_K=phi.sup_norm / c, sup_norm=phi.sup_norm / c,
                           name=f"{phi.name}/(w+1+z)")
    u = np.asarray(u, dtype=complex)
    au = sla.solve(to_dense(form.gram_HV), to_dense(form.form) @ u, assume_a="pos")
    v = form.incl.matrix @ ((om + 1.0) * u + au)
    return apply_function(form, psi, method, consts).matrix @ v


def extended_calculus_matrix(form: SesquilinearForm, phi: CalculusFunction,
                             consts: Optional[SectorialityConstants] = None,
                             method: str = "contour") -> LinearMap:
    """phi(A) as an operator on H (identity inclusion only)."""
    if not form.incl_is_identity:
        raise ValueError("extended calculus matrix needs V and H to share coefficients")
    n = form.dim
    cols = extended_calculus_apply(form, phi, np.eye(n), consts, method)
    return LinearMap(form.H, form.H, cols)


# ---------------------------------------------------------------------------
# convergence along a family


def calculus_difference(f0: SesquilinearForm, fe: SesquilinearForm, J, psi: CalculusFunction,
                        method: str = "contour", consts=None) -> tuple:
    """(||Jup psi(A0) Jdown - psi(Ae)||, ||psi(A0) - Jdown psi(Ae) Jup||)."""
    p0 = apply_function(f0, psi, method, consts).matrix
    pe = apply_function(fe, psi, method, consts).matrix
    up, dn = J.Jup.matrix, J.Jdown.matrix
    l_up = weighted_norm(LinearMap(fe.H, fe.H, up @ (p0 @ dn) - pe))
    l_dn = weighted_norm(LinearMap(f0.H, f0.H, p0 - dn @ (pe @ up)))
    return l_up, l_dn


@dataclass
class OriginFit:
    C: float
    max_ratio: float
    ratios: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.max_ratio <= 2.0


def fit_through_origin(deltas, values, exact_tol: float = 1e-12) -> OriginFit:
    """Least-squares C in values ~ C * deltas and the worst ratio value/(C delta).

    Members with delta = 0 must have value below ``exact_tol``; a violation
    yields an infinite ratio.
    """
    d = np.asarray(deltas, dtype=float)
    v = np.asarray(values, dtype=float)
    pos = d > 0
    if np.any(~pos & (v > exact_tol)):
        return OriginFit(math.inf, math.inf, [])
    if not np.any(pos):
        return OriginFit(0.0, 0.0, [])
    C = float(np.dot(d[pos], v[pos]) / np.dot(d[pos], d[pos]))
    if C == 0:
        return OriginFit(0.0, 0.0, [0.0] * int(pos.sum()))
    ratios = (v[pos] / (C * d[pos])).tolist()
    return OriginFit(C, float(max(ratios)), ratios)


@dataclass
class CalculusConvergenceRow:
    psi: str
    eps: float
    delta: float
    l_up: float
    l_down: float


def verify_calculus_convergence(family, psi_list, method: str = "contour", consts=None) -> tuple:
    """Evaluate the calculus differences along a family.

    ``family`` is a sequence of (eps, f0, fe, J, report).  Returns the rows
    and one :class:`OriginFit` per function (fitted to the larger of the two
    differences).
    """
    rows, fits = [], {}
    for psi in psi_list:
        ds, ls = [], []
        for eps, f0, fe, J, rep in family:
            lu, ld = calculus_difference(f0, fe, J, psi, method, consts)
            rows.append(CalculusConvergenceRow(psi.name, eps, rep.delta, lu, ld))
            ds.append(rep.delta)
            ls.append(max(lu, ld))
        fits[psi.name] = fit_through_origin(ds, ls)
    return rows, fits
