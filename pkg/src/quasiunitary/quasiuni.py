"""Identification operators between two form settings and their defects.

Given forms a0 on (H0, V0) and ae on (He, Ve) together with maps

    Jup: H0 -> He,  Jdown: He -> H0,  Jup1: V0 -> Ve,  Jdown1: Ve -> V0,

the defects measure how far Jup is from being a unitary that intertwines
the two forms.  Their maximum ``delta`` controls the distance between the
resolvents, see :func:`verify_key_estimate`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

import numpy as np

from .forms import (
    SectorialityConstants,
    SesquilinearForm,
    in_shifted_sector,
    resolvent,
    sector_estimates,
)
from .linalg import LinearMap, WeightedSpace, gram_adjoint, identity_map, to_dense, weighted_bilinear_norm, weighted_norm

CSV_HEADER = "eps,dA1a,dA1b,dA2,dA3a,dA3b,dA5,delta,kappa"


@dataclass(frozen=True)
class IdentificationQuadruple:
    Jup: LinearMap
    Jdown: LinearMap
    Jup1: LinearMap
    Jdown1: LinearMap

    def check(self, f0: SesquilinearForm, fe: SesquilinearForm):
        want = {
            "Jup": (fe.H.dim, f0.H.dim), "Jdown": (f0.H.dim, fe.H.dim),
            "Jup1": (fe.V.dim, f0.V.dim), "Jdown1": (f0.V.dim, fe.V.dim),
        }
        for name, shape in want.items():
            got = getattr(self, name).matrix.shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")

    def swapped(self) -> "IdentificationQuadruple":
        return IdentificationQuadruple(self.Jdown, self.Jup, self.Jdown1, self.Jup1)

    @classmethod
    def identities(cls, f0: SesquilinearForm, fe: SesquilinearForm) -> "IdentificationQuadruple":
        """Identity coefficient maps between two settings of equal dimensions."""
        if f0.H.dim != fe.H.dim or f0.V.dim != fe.V.dim:
            raise ValueError("identity identification needs equal dimensions")
        eh = identity_map(f0.H).matrix
        ev = identity_map(f0.V).matrix
        return cls(LinearMap(f0.H, fe.H, eh), LinearMap(fe.H, f0.H, eh),
                   LinearMap(f0.V, fe.V, ev), LinearMap(fe.V, f0.V, ev))


@dataclass
class QuasiUnitaryReport:
    d_A1a: float
    d_A1b: float
    d_A2: float
    d_A3a: float
    d_A3b: float
    d_A5: float
    kappa: float
    eps: Optional[float] = None

    @property
    def delta(self) -> float:
        return max(self.d_A1a, self.d_A1b, self.d_A2, self.d_A3a, self.d_A3b, self.d_A5)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["delta"] = self.delta
        return out

    def csv_row(self) -> str:
        eps = "" if self.eps is None else repr(float(self.eps))
        vals = [self.d_A1a, self.d_A1b, self.d_A2, self.d_A3a, self.d_A3b, self.d_A5,
                self.delta, self.kappa]
        return ",".join([eps] + [repr(float(v)) for v in vals])


def defect_report(f0: SesquilinearForm, fe: SesquilinearForm, J: IdentificationQuadruple,
                  eps: Optional[float] = None) -> QuasiUnitaryReport:
    J.check(f0, fe)
    Jup, Jdown, Jup1, Jdown1 = J.Jup.matrix, J.Jdown.matrix, J.Jup1.matrix, J.Jdown1.matrix
    i0, ie = f0.incl.matrix, fe.incl.matrix

    d1a = weighted_norm(LinearMap(f0.V, fe.H, Jup @ i0 - ie @ Jup1))
    d1b = weighted_norm(LinearMap(fe.V, f0.H, Jdown @ ie - i0 @ Jdown1))
    d2 = weighted_norm(J.Jdown - gram_adjoint(J.Jup))
    d3a = weighted_norm(LinearMap(f0.V, f0.H, to_dense(i0) - Jdown @ (Jup @ i0)))
    d3b = weighted_norm(LinearMap(fe.V, fe.H, to_dense(ie) - Jup @ (Jdown @ ie)))
    d5 = weighted_bilinear_norm(
        Jdown1.conj().T @ f0.form - fe.form @ Jup1, f0.V, fe.V)
    kappa = max(1.0, weighted_norm(J.Jup), weighted_norm(J.Jdown))
    return QuasiUnitaryReport(d1a, d1b, d2, d3a, d3b, d5, kappa, eps)


# ---------------------------------------------------------------------------
# key resolvent estimate


@dataclass(frozen=True)
class KeyConstants:
    C1: float
    C2: float
    D_theta: float
    C_theta: float


def key_estimate_constants(consts: SectorialityConstants, theta: float, r: float,
                           kappa: float) -> KeyConstants:
    est = sector_estimates(consts, theta)
    C, D, w = est.C_theta, est.D_theta, abs(consts.omega)
    c1 = ((C * D + 2 * C) + (D + C ** 2 + D ** 2) / math.sqrt(r)
          + w * C * D / r + w * D ** 2 / r ** 1.5)
    c2 = kappa * c1 + C
    return KeyConstants(c1, c2, D, C)


@dataclass
class KeyEstimateRow:
    z: complex
    lhs_up: float      # ||R_e Jup - Jup R_0||
    lhs_sandwich: float  # ||R_e - Jup R_0 Jdown||
    bound_up: float
    bound_sandwich: float

    @property
    def ok(self) -> bool:
        tol = 1e-9
        return (self.lhs_up <= self.bound_up * (1 + tol) + tol
                and self.lhs_sandwich <= self.bound_sandwich * (1 + tol) + tol)

    @property
    def ratio_up(self) -> float:
        """Measured constant LHS / (delta / sqrt|z + omega|)."""
        return self._ratio(self.lhs_up, self.bound_up)

    def _ratio(self, lhs, bound):
        return lhs / bound if bound > 0 else (0.0 if lhs == 0 else math.inf)


@dataclass
class KeyEstimateReport:
    constants: KeyConstants
    delta: float
    rows: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    @property
    def violations(self) -> int:
        return sum(not r.ok for r in self.rows)


def verify_key_estimate(f0: SesquilinearForm, fe: SesquilinearForm, J: IdentificationQuadruple,
                        report: QuasiUnitaryReport, consts: SectorialityConstants,
                        theta: float, r: float, z_grid: Iterable[complex]) -> KeyEstimateReport:
    """Check both resolvent-difference bounds at every z of the grid.

    ``consts`` must hold for both forms at once (see
    :meth:`SectorialityConstants.common`).
    """
    kc = key_estimate_constants(consts, theta, r, report.kappa)
    out = KeyEstimateReport(kc, report.delta)
    Jup, Jdown = J.Jup.matrix, J.Jdown.matrix
    for z in z_grid:
        z = complex(z)
        dist = abs(z + consts.omega)
        if in_shifted_sector(z, consts.omega, theta) or dist < r * (1 - 1e-12):
            raise ValueError(f"grid point z = {z} violates the exterior/radius precondition")
        r0 = resolvent(f0, z).matrix
        re = resolvent(fe, z).matrix
        up = weighted_norm(LinearMap(f0.H, fe.H, re @ Jup - Jup @ r0))
        sw = weighted_norm(LinearMap(fe.H, fe.H, re - Jup @ (r0 @ Jdown)))
        scale = report.delta / math.sqrt(dist)
        out.rows.append(KeyEstimateRow(z, up, sw, kc.C1 * scale, kc.C2 * scale))
    return out


def exterior_grid(omega: float, theta: float, r: float, n: int, seed: int = 0) -> np.ndarray:
    """n random points outside the shifted sector with |z + omega| >= r."""
    rng = np.random.default_rng(seed)
    radius = r * np.exp(rng.uniform(0.0, math.log(100.0), n))
    ang = rng.uniform(theta, math.pi, n) * rng.choice([-1.0, 1.0], n)
    return -omega + radius * np.exp(1j * ang)


# ---------------------------------------------------------------------------
# auxiliary lemmas


def check_lemma_sandwich(f0: SesquilinearForm, fe: SesquilinearForm, J: IdentificationQuadruple,
                         report: QuasiUnitaryReport, B0: LinearMap, Be: LinearMap) -> tuple:
    """||Be - Jup B0 Jdown|| <= kappa ||Jdown Be - B0 Jdown|| + delta ||Be||_{He->Ve}.

    B0 maps H0 -> V0 and Be maps He -> Ve; both sides are read in H through
    the inclusions.  Returns (ok, lhs, rhs).
    """
    i0, ie = f0.incl.matrix, fe.incl.matrix
    be_h = ie @ Be.matrix
    b0_h = i0 @ B0.matrix
    lhs = weighted_norm(LinearMap(fe.H, fe.H, be_h - J.Jup.matrix @ (b0_h @ J.Jdown.matrix)))
    mid = weighted_norm(LinearMap(fe.H, f0.H, J.Jdown.matrix @ be_h - b0_h @ J.Jdown.matrix))
    rhs = report.kappa * mid + report.delta * weighted_norm(Be)
    return lhs <= rhs + 1e-9, lhs, rhs


def check_lemma_pullback(f0: SesquilinearForm, fe: SesquilinearForm, J: IdentificationQuadruple,
                         report: QuasiUnitaryReport, samples) -> tuple:
    """||Jdown u - f|| <= kappa ||u - Jup f|| + delta ||f||_V0 for (f in V0, u in He).

    ``samples`` is an iterable of (f, u) coefficient pairs.  Returns
    (ok, worst slack) where slack = rhs - lhs.
    """
    worst = math.inf
    i0 = f0.incl.matrix
    for f, u in samples:
        fh = i0 @ f
        lhs = f0.H.norm(J.Jdown.matrix @ u - fh)
        rhs = report.kappa * fe.H.norm(u - J.Jup.matrix @ fh) + report.delta * f0.V.norm(f)
        worst = min(worst, rhs - lhs)
    return worst >= -1e-9, worst


# ---------------------------------------------------------------------------
# random instances


def _random_spd(rng, n: int, lo: float, hi: float) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return (q * rng.uniform(lo, hi, n)) @ q.conj().T


def random_pair(seed: int, max_dim: int = 30, noise: float = 0.05, skew: float = 0.5):
    """A non-Hermitian form pair with nearly isometric identification maps.

    The eps side contains a perturbed copy of the limit problem as its
    leading block plus a stiffer complement; every map carries ``noise`` so
    all defects are non-zero.  Returns (f0, fe, J).
    """
    rng = np.random.default_rng(seed)
    n0 = int(rng.integers(2, max_dim // 2 + 1))
    ne = int(rng.integers(n0, max_dim + 1))

    def cplx(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    def skew_part(n):
        N = cplx(n, n)
        return skew * (N - N.conj().T) / math.sqrt(n)

    def make(G, K, A):
        V = WeightedSpace(G + K + np.eye(len(G)), name="V")
        return SesquilinearForm(WeightedSpace(G, name="H"), V, A)

    K0 = _random_spd(rng, n0, 0.0, 40.0)
    A0 = K0 + skew_part(n0)
    f0 = make(np.eye(n0), K0, A0)
    G = _random_spd(rng, ne, 0.5, 2.0)
    K = _random_spd(rng, ne, 1.0 / noise ** 2, 2.0 / noise ** 2)
    for m in (G, K):
        m[:n0, :] = 0.0
        m[:, :n0] = 0.0
    G[:n0, :n0] = np.eye(n0) + noise * _random_spd(rng, n0, 0.0, 1.0)
    K[:n0, :n0] = K0 + noise * _random_spd(rng, n0, 0.0, 1.0)
    A = K + skew_part(ne) + noise * cplx(ne, ne)
    A[:n0, :n0] = A0 + noise * cplx(n0, n0)
    fe = make(G, K, A)

    up = np.zeros((ne, n0), dtype=complex)
    up[:n0] = np.eye(n0)
    up += noise / math.sqrt(ne) * cplx(ne, n0)
    Jup = LinearMap(f0.H, fe.H, up)
    Jdown = LinearMap(fe.H, f0.H, gram_adjoint(Jup).matrix + noise / math.sqrt(ne) * cplx(n0, ne))
    # the V-level maps ignore the stiff complement
    up1 = up.copy()
    up1[n0:] = 0.0
    dn1 = Jdown.matrix.copy()
    dn1[:, n0:] = 0.0
    J = IdentificationQuadruple(Jup, Jdown, LinearMap(f0.V, fe.V, up1), LinearMap(fe.V, f0.V, dn1))
    return f0, fe, J
