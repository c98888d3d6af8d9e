"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import math
import time

import numpy as np
import scipy.linalg as sla

from quasiunitary import calculus as calc
from quasiunitary import invariance as inv
from quasiunitary import quasiuni as qu
from quasiunitary import scenarios as sc
from quasiunitary import spectra as spc
from quasiunitary.cli import fit_order
from quasiunitary.forms import SectorialityConstants, resolvent, sectoriality_constants
from quasiunitary.linalg import ContourSpec, gram_adjoint

from conftest import ACCEPTANCE_LINES, STAR_EPS, random_form

LAM64 = (np.arange(1, 65) * math.pi) ** 2


def verdict(n, ok, detail, t0):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:.1f} s) {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_1_fourier_defects_exact():
    t0 = time.perf_counter()
    worst, a5 = 0.0, 0.0
    for n in (2, 4, 8, 16):
        rep = sc.build_fourier(LAM64, n).report
        worst = max(worst, abs(rep.delta - 1.0 / ((n + 1) * math.pi)))
        a5 = max(a5, rep.d_A5)
    verdict(1, worst <= 1e-12 and a5 == 0.0, f"max |delta - 1/((n+1)pi)| = {worst:.1e}, d_A5 = {a5}", t0)


def test_criterion_2_key_estimate_constants():
    t0 = time.perf_counter()
    violations, worst = 0, 0.0
    for seed in range(20):
        f0, fe, J = qu.random_pair(seed)
        rep = qu.defect_report(f0, fe, J)
        c = SectorialityConstants.common(sectoriality_constants(f0), sectoriality_constants(fe))
        th = 0.5 * (c.theta_min + math.pi)
        kr = qu.verify_key_estimate(f0, fe, J, rep, c, th, 1.0, qu.exterior_grid(c.omega, th, 1.0, 20, seed))
        violations += sum(not r.ok for r in kr.rows)
        worst = max(worst, max(max(r.lhs_up / r.bound_up, r.lhs_sandwich / r.bound_sandwich)
                               for r in kr.rows))
    verdict(2, violations == 0, f"400 points, {violations} violations, worst lhs/bound {worst:.3f}", t0)


def _family_fit(fam, method="eig"):
    forms = [x for _, f0, fe, _, _ in fam for x in (f0, fe)]
    c = SectorialityConstants.common(*[sectoriality_constants(f) for f in forms])
    psis = [calc.resolvent_shift(c.omega, 0.5 * (c.theta_min + math.pi)),
            calc.exponential(1.0, c.omega, 0.5 * (c.theta_min + 0.5 * math.pi))]
    _, fits = calc.verify_calculus_convergence(fam, psis, method, c)
    return fits


def _as_family(bundles):
    return [(b.eps, b.f0, b.fe, b.J, b.report) for b in bundles]


def _oracle_cases():
    """Small diagonalizable forms: seeded random, truncated Fourier, coarse Wentzell."""
    cases = [random_form(np.random.default_rng(s), int(np.random.default_rng(s).integers(1, 9)))
             for s in range(10)]
    b = sc.build_fourier(LAM64[:16], 4)
    cases += [b.f0, b.fe]
    W = sc.WentzellCoefficients
    cases.append(sc.build_wentzell(4, W.family_member(0.0), W.family_member(0.1)).fe)
    return cases


def test_criterion_3_calculus_convergence(star_family):
    t0 = time.perf_counter()
    W = sc.WentzellCoefficients
    coef = sc.DegenerateCoefficient(0.5)
    families = {
        "fourier": _as_family(sc.build_fourier(LAM64, n) for n in (2, 4, 8, 16)),
        "degenerate": _as_family(sc.build_degenerate(coef, 400, e) for e in (0.2, 0.1, 0.05)),
        "wentzell": _as_family(sc.build_wentzell(16, W.family_member(0.0), W.family_member(e), e)
                               for e in (0.1, 0.05, 0.025)),
        "graphtube": _as_family(star_family),
    }
    ratios = {}
    for name, fam in families.items():
        for fname, fit in _family_fit(fam).items():
            ratios[f"{name}/{fname.split('(')[0]}"] = fit.max_ratio
    fit_ok = all(r <= 2.0 for r in ratios.values())

    oracle_err = 0.0
    for f in _oracle_cases():
        c = sectoriality_constants(f)
        psis = [calc.resolvent_shift(c.omega, 0.5 * (c.theta_min + math.pi)),
                calc.exponential(1.0, c.omega, 0.5 * (c.theta_min + 0.5 * math.pi))]
        for psi in psis:
            a = calc.apply_function(f, psi, "contour", c).matrix
            b = calc.apply_function(f, psi, "eig", c).matrix
            oracle_err = max(oracle_err, np.abs(a - b).max() / max(1.0, np.abs(b).max()))
        a = calc.semigroup(f, 1.0, "contour", c).matrix
        # lift the V-coefficient exponential to H: incl e^{-A} P
        b = np.asarray(f.incl.matrix) @ sla.expm(-f.operator_matrix()) @ f.projection_to_V()
        oracle_err = max(oracle_err, np.abs(a - b).max() / max(1.0, np.abs(b).max()))
    worst = max(ratios, key=ratios.get)
    verdict(3, fit_ok and oracle_err <= 1e-6,
            f"worst max ratio {ratios[worst]:.3f} ({worst}), contour vs oracle {oracle_err:.1e}", t0)


def test_criterion_4_spectral_transfer(star_family):
    t0 = time.perf_counter()
    ref = sc.star_graph_eigenvalues(3, 1.0, 1.0, 3)
    f0 = star_family[0].f0
    clusters = sorted(spc.spectrum(f0), key=lambda c: c[0].real)[:4]
    lam0 = [c[0] for c in clusters]
    counts_ok = [m for _, m in clusters[:3]] == [m for _, m in ref]
    errors = {k: [] for k in range(3)}
    details = []
    for b in star_family:
        lame = np.sort_complex(np.asarray(b.fe.eigenvalues(), complex))
        start = 0
        for k, (lam, m) in enumerate(clusters[:3]):
            others = [abs(lam - x) for j, x in enumerate(lam0) if j != k]
            mt = spc.count_multiplicity_transfer(b.f0, b.fe, b.J, b.report, lam, 0.5 * min(others))
            if b.eps <= 0.1:
                counts_ok &= mt.m_eps == mt.m0 == ref[k][1]
            details.append(f"{b.eps:g}:{mt.m0}/{mt.m_eps}/{mt.status}")
            errors[k].append(float(np.abs(lame[start:start + m] - ref[k][0]).max()))
            start += m
    fits = [fit_order(zip(STAR_EPS, errors[k])) for k in range(3)]
    order_ok = all(f.slope >= 0.4 and f.r2 >= 0.9 for f in fits)
    dofs = max(b.fe.dim for b in star_family)
    orders = ", ".join(f"{f.slope:.2f} (R2 {f.r2:.3f})" for f in fits)
    verdict(4, counts_ok and order_ok and dofs <= 20000,
            f"counts [{' '.join(details)}], orders {orders}, max DOFs {dofs}", t0)


def test_criterion_5_wentzell_rate(wentzell_family):
    t0 = time.perf_counter()
    deltas = [b.report.delta for b in wentzell_family]
    f = fit_order(zip((0.1, 0.05, 0.025), deltas))
    W = sc.WentzellCoefficients
    ident = sc.build_wentzell(32, W.family_member(0.0), W.family_member(0.0)).report.delta
    verdict(5, abs(f.slope - 1.0) <= 0.1 and ident <= 1e-14,
            f"order {f.slope:.3f} (R2 {f.r2:.4f}), identity delta {ident:.1e}", t0)


def test_criterion_6_degenerate_convergence():
    t0 = time.perf_counter()
    coef = sc.DegenerateCoefficient(0.5)
    reps = [sc.build_degenerate(coef, 400, e).report for e in (0.2, 0.1, 0.05)]
    d = [r.delta for r in reps]
    unit = max(max(r.d_A2, r.d_A3a, r.d_A3b) for r in reps)
    ok = all(b < a for a, b in zip(d, d[1:])) and d[2] < 0.5 * d[0] and unit <= 1e-12
    verdict(6, ok, f"delta {[round(x, 5) for x in d]}, max A2/A3 {unit:.1e}", t0)


def test_criterion_7_analysis_lemmas(star_family):
    t0 = time.perf_counter()
    consts = sc.analysis_constants(star_family[0].extras["graph"], star_family[0].extras["n_t"])
    violations, n_checks, worst = 0, 0, 0.0
    for b in star_family:
        for c in sc.check_analysis_lemmas(b, consts, n_random=200, seed=7, rtol=1e-8):
            violations += c.violations
            n_checks += 1
            worst = max(worst, c.worst_ratio)
    verdict(7, violations == 0 and n_checks > 0,
            f"{n_checks} inequalities x 200 functions, {violations} violations, worst ratio {worst:.3f}", t0)


def test_criterion_8_invariance_and_lp():
    t0 = time.perf_counter()
    g = sc.MetricGraph.star(3, 1.0, 0.0)
    robin = sc.RobinData.from_graph(g, [1.0, 1.0, 1.0])
    fam = [sc.build_graphtube(g, robin, e, max(1, round(e / 0.025)), 0.025, lumped=True) for e in STAR_EPS]
    pos = [r for b in fam for r in inv.check_positivity(b.fe, [0.1, 1.0])]
    pos += inv.check_positivity(fam[0].f0, [0.1, 1.0])
    pos_ok = all(r.min_entry >= -1e-10 and r.max_row_sum <= 1 + 1e-10 for r in pos)
    rows = inv.lp_convergence_study(fam[0].f0, [(b.eps, b.fe, b.J) for b in fam], inv.heat_phi(0.5), [4.0])
    l4 = [r.lp_bound for r in rows]
    mono = all(b < a for a, b in zip(l4, l4[1:]))
    verdict(8, pos_ok and mono,
            f"min entry {min(r.min_entry for r in pos):.1e}, max row sum "
            f"{max(r.max_row_sum for r in pos):.4f}, L4 bound {[round(x, 4) for x in l4]}", t0)


def _battery(seed):
    """Failures of the core identities on one seeded random form."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    f = random_form(rng, n)
    c = sectoriality_constants(f)
    fails = []
    # resolvent identity
    z1, z2 = -c.omega - 1.0 + rng.uniform(-3, 0) + 2j * rng.standard_normal(2)
    R1, R2 = resolvent(f, z1).matrix, resolvent(f, z2).matrix
    lhs, rhs = R1 - R2, (z2 - z1) * R1 @ R2
    if np.abs(lhs - rhs).max() > 1e-8 * max(np.abs(lhs).max(), np.abs(rhs).max()):
        fails.append("resolvent identity")
    # adjoint identities
    a = resolvent(f.adjoint(), np.conj(z1)).matrix
    b = gram_adjoint(resolvent(f, z1)).matrix
    if np.abs(a - b).max() > 1e-9 * max(1.0, np.abs(b).max()):
        fails.append("adjoint resolvent")
    u, v = rng.standard_normal(n) + 1j * rng.standard_normal(n), rng.standard_normal(n) + 0j
    if abs(f.adjoint()(u, v) - np.conj(f(v, u))) > 1e-10 * max(1.0, abs(f(v, u))):
        fails.append("adjoint form")
    # contour independence
    psi = calc.resolvent_shift(c.omega, 0.5 * (c.theta_min + math.pi))
    outs = []
    for frac in (0.3, 0.7):
        sigma = c.theta_min + frac * (psi.theta - c.theta_min)
        spec = ContourSpec.sector(c.omega, sigma, psi.truncation_for(1e-11), nodes_per_decade=300)
        outs.append(calc.eval_calculus(f, psi, spec).op.matrix)
    if np.abs(outs[0] - outs[1]).max() > 1e-7 * max(1.0, np.abs(outs[0]).max()):
        fails.append("contour independence")
    # idempotent projection around an isolated eigenvalue
    lam = f.eigenvalues()
    k = int(np.argmin(lam.real))
    gaps = np.abs(np.delete(lam, k) - lam[k])
    rad = 0.5 * gaps.min() if gaps.size else 1.0
    if rad > 1e-3:
        p = spc.spectral_projection(f, spc.SpectralWindow.disk(lam[k], rad, margin=1e-6))
        if p.idempotency_defect > 1e-8 or not p.trace_consistent or p.rank != 1:
            fails.append("projection")
    # semigroup law
    t, s = rng.uniform(0.05, 1.0, 2)
    Et, Es = calc.semigroup(f, t, consts=c).matrix, calc.semigroup(f, s, consts=c).matrix
    Ets = calc.semigroup(f, t + s, consts=c).matrix
    if np.abs(Et @ Es - Ets).max() > 1e-6 * max(1.0, np.abs(Ets).max()):
        fails.append("semigroup law")
    return fails


def test_criterion_9_property_battery():
    t0 = time.perf_counter()
    fails = {}
    for seed in range(40):
        for name in _battery(1000 + seed):
            fails[name] = fails.get(name, 0) + 1
    verdict(9, not fails, f"40 seeded instances x 6 identities, failures {fails or 0}", t0)
