"""Command line: run convergence studies and inspect serialized form bundles.

    quasiunitary study --config study.json --out results/ [--format csv,json,svg]
                       [--jobs N] [--seed S]
    quasiunitary export   --config study.json --eps 0.1 --out pair.json
    quasiunitary defects  --bundle pair.json
    quasiunitary spectrum --bundle pair.json [--side fe] [--disk RE IM R]
    quasiunitary calculus --bundle pair.json --function exp --t 1.0

Exit codes: 0 all checks pass, 1 a check failed, 2 bad configuration,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import calculus as calc
from . import invariance as inv
from . import quasiuni as qu
from . import scenarios as sc
from . import spectra as spc
from .forms import SectorialityConstants, SesquilinearForm, sectoriality_constants
from .linalg import LinearMap, NumericalError, WeightedSpace, matrix_from_json, matrix_to_json

log = logging.getLogger("quasiunitary")

SCHEMA_VERSION = 1
EXACT_TOL = 1e-14
SCENARIOS = ("fourier", "wentzell", "degenerate", "graphtube")
CHECKS = ("defects", "key_estimate", "calculus", "spectra", "multiplicity", "invariance", "lp")
FORMATS = ("csv", "json", "svg")


class ConfigError(ValueError):
    pass


class CheckFailure(RuntimeError):
    """A numerical failure inside a named check."""

    def __init__(self, check: str, cause: Exception):
        super().__init__(f"{check}: {cause}")
        self.check = check


@contextmanager
def _check(name: str):
    try:
        yield
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise CheckFailure(name, exc) from exc


# ---------------------------------------------------------------------------
# order fits


@dataclass
class OrderFit:
    slope: float
    intercept: float
    r2: float
    n_points: int
    exact: list = field(default_factory=list)   # eps values whose value was <= EXACT_TOL

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2,
                "n_points": self.n_points, "exact": self.exact}


def fit_order(pairs: Sequence[tuple]) -> OrderFit:
    """Least squares of log(value) on log(eps)."""
    pairs = [(float(e), float(v)) for e, v in pairs]
    exact = [e for e, v in pairs if v <= EXACT_TOL]
    use = [(e, v) for e, v in pairs if v > EXACT_TOL and e > 0]
    if len(use) < 3:
        raise ValueError(f"order fit needs at least 3 usable points, got {len(use)}")
    x = np.log([e for e, _ in use])
    y = np.log([v for _, v in use])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return OrderFit(float(slope), float(icpt), r2, len(use), exact)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class StudyConfig:
    scenario: str
    params: dict
    eps_list: list
    checks: list
    formats: list = field(default_factory=lambda: ["csv", "json"])
    seed: int = 42
    tolerances: dict = field(default_factory=dict)
    out: str = "."

    @classmethod
    def from_dict(cls, obj: dict) -> "StudyConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config: top level must be an object")
        scen = obj.get("scenario")
        if scen not in SCENARIOS:
            raise ConfigError(f"config.scenario: expected one of {SCENARIOS}, got {scen!r}")
        params = obj.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("config.params: must be an object")
        eps = obj.get("eps_list")
        if scen == "fourier" and eps is None and "n_list" in params:
            eps = [1.0 / n for n in params["n_list"]]
        if not isinstance(eps, list) or not eps:
            raise ConfigError("config.eps_list: non-empty list required")
        try:
            eps = [float(e) for e in eps]
        except (TypeError, ValueError):
            raise ConfigError("config.eps_list: entries must be numbers") from None
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("config.eps_list: must be positive and strictly decreasing")
        checks = obj.get("checks", [])
        if not isinstance(checks, list) or not checks:
            raise ConfigError("config.checks: at least one check is required")
        bad = [c for c in checks if c not in CHECKS]
        if bad:
            raise ConfigError(f"config.checks: unknown entries {bad}; allowed {CHECKS}")
        fmts = obj.get("formats", ["csv", "json"])
        bad = [f for f in fmts if f not in FORMATS]
        if bad:
            raise ConfigError(f"config.formats: unknown entries {bad}")
        seed = obj.get("seed", 42)
        if not isinstance(seed, int):
            raise ConfigError("config.seed: must be an integer")
        tol = obj.get("tolerances", {})
        if not isinstance(tol, dict):
            raise ConfigError("config.tolerances: must be an object")
        return cls(scen, params, eps, list(checks), list(fmts), seed, tol, obj.get("out", "."))


def _graph_from_params(params: dict) -> sc.MetricGraph:
    g = params.get("graph", {"star": {"n_edges": 3, "length": 1.0, "coupling": 1.0}})
    if "star" in g:
        s = g["star"]
        return sc.MetricGraph.star(int(s.get("n_edges", 3)), float(s.get("length", 1.0)),
                                   float(s.get("coupling", 1.0)))
    return sc.MetricGraph.from_json(g)


def build_member(cfg: StudyConfig, eps: float) -> sc.ScenarioBundle:
    p = cfg.params
    try:
        if cfg.scenario == "fourier":
            N = int(p.get("N", 64))
            lam = p.get("lambda", "k2pi2")
            lam = (np.arange(1, N + 1) * math.pi) ** 2 if lam == "k2pi2" else np.asarray(lam, float)
            return sc.build_fourier(lam, int(round(1.0 / eps)))
        if cfg.scenario == "wentzell":
            base = sc.WentzellCoefficients.family_member(0.0)
            return sc.build_wentzell(int(p.get("n_mesh", 32)), base,
                                     sc.WentzellCoefficients.family_member(eps), eps,
                                     lumped=bool(p.get("lumped", False)))
        if cfg.scenario == "degenerate":
            coef = sc.DegenerateCoefficient(float(p.get("a", 0.5)))
            return sc.build_degenerate(coef, int(p.get("n_mesh", 400)), eps)
        g = _graph_from_params(p)
        robin = sc.RobinData.from_graph(g, p.get("robin", {}).get("beta_edge_coeff"))
        mesh = p.get("mesh", {})
        n_t = mesh.get("n_t", 8)
        h_max = float(mesh.get("h_max", 0.025))
        if n_t == "isotropic":
            n_t = max(1, int(round(eps / h_max)))
        return sc.build_graphtube(g, robin, eps, int(n_t), h_max,
                                  float(mesh.get("max_aspect", 4.0)), bool(p.get("lumped", False)))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"config.params: {exc}") from exc


# ---------------------------------------------------------------------------
# per-member work (runs in worker processes)


def _member_constants(b: sc.ScenarioBundle) -> SectorialityConstants:
    return SectorialityConstants.common(sectoriality_constants(b.f0), sectoriality_constants(b.fe))


def _limit_disks(f0: SesquilinearForm, count: int) -> list:
    """Disks isolating the lowest eigenvalue clusters of A0 (half the gap)."""
    clusters = sorted(spc.spectrum(f0), key=lambda c: (c[0].real, c[0].imag))
    out = []
    for i, (lam, m) in enumerate(clusters[:count]):
        others = [abs(lam - c[0]) for j, c in enumerate(clusters) if j != i]
        out.append((lam, m, 0.5 * min(others) if others else 1.0))
    return out


def _key_rows(cfg, b, rep, consts):
    th = 0.5 * (consts.theta_min + math.pi)
    grid = qu.exterior_grid(consts.omega, th, 1.0, int(cfg.tolerances.get("key_points", 20)), cfg.seed)
    kr = qu.verify_key_estimate(b.f0, b.fe, b.J, rep, consts, th, 1.0, grid)
    return [(r.z, r.lhs_up, r.bound_up, r.lhs_sandwich, r.bound_sandwich, r.ok) for r in kr.rows]


def _multiplicity_rows(b, rep, shared):
    lam0 = np.asarray(b.f0.eigenvalues(), complex)
    lame = np.asarray(b.fe.eigenvalues(), complex)
    # eigenvalue errors pair the sorted spectra index by index, so a
    # cluster of multiplicity m is compared with m consecutive eigenvalues
    order = np.sort_complex(lame)
    rows, start = [], 0
    for lam, m, rad in shared["disks"]:
        mt = spc.count_multiplicity_transfer(b.f0, b.fe, b.J, rep, lam, rad, lam0, lame)
        ref = shared["reference"].get(round(lam.real, 6), lam)
        near = order[start:start + m]
        err = float(np.max(np.abs(near - ref))) if len(near) == m else math.inf
        start += m
        rows.append((lam, mt.m0, mt.m_eps, err, mt.status))
    return rows


def run_member(cfg: StudyConfig, eps: float, shared: dict) -> dict:
    """All per-eps metrics of a study; safe to run in a worker process."""
    with _check("build"):
        b = build_member(cfg, eps)
    with _check("defects"):
        rep = b.report
    out = {"eps": eps, "report": rep.as_dict(), "csv_defects": rep.csv_row()}
    consts = shared["consts"]
    checks = cfg.checks
    if "key_estimate" in checks:
        with _check("key_estimate"):
            out["key"] = _key_rows(cfg, b, rep, consts)
    if "calculus" in checks:
        with _check("calculus"):
            out["calculus"] = {psi.name: calc.calculus_difference(b.f0, b.fe, b.J, psi, shared["method"], consts)
                               for psi in _psi_list(consts)}
    if "multiplicity" in checks or "spectra" in checks:
        with _check("multiplicity"):
            out["multiplicity"] = _multiplicity_rows(b, rep, shared)
    if "spectra" in checks and shared.get("window") is not None:
        with _check("spectra"):
            sr = spc.check_spectral_convergence(b.f0, [(eps, b.fe, b.J, rep)], shared["window"])
        out["spectra"] = [(r.hits, r.resolvent_gap, r.status, sr.threshold) for r in sr.rows]
    if ("invariance" in checks or "lp" in checks) and b.fe.H.lumped_weights is None:
        raise ConfigError("config.params.lumped: invariance and lp checks need lumped masses")
    if "invariance" in checks:
        ts = cfg.tolerances.get("times", [0.1, 1.0])
        with _check("invariance"):
            out["positivity"] = [(r.t, r.min_entry, r.max_row_sum, r.status)
                                 for r in inv.check_positivity(b.fe, ts)]
            ir = inv.check_invariance_transfer(b.f0, [(eps, b.fe, b.J)], "nonneg_cone",
                                               inv.heat_phi(min(ts)), [_c_eps(cfg, eps)],
                                               seed=cfg.seed)
        out["invariance_ok"] = ir.ok
    if "lp" in checks:
        t = float(cfg.tolerances.get("lp_time", 1.0))
        with _check("lp"):
            rows = inv.lp_convergence_study(b.f0, [(eps, b.fe, b.J)], inv.heat_phi(t),
                                            cfg.tolerances.get("p_list", [4.0]))
        out["lp"] = [r.csv_row() for r in rows]
        out["lp_rows"] = [(r.p, r.lp_bound) for r in rows]
    return out


def _c_eps(cfg: StudyConfig, eps: float) -> float:
    return math.sqrt(eps) if cfg.scenario == "graphtube" else 1.0


def _psi_list(consts: SectorialityConstants) -> list:
    th_exp = 0.5 * (consts.theta_min + 0.5 * math.pi)
    return [calc.resolvent_shift(consts.omega, 0.5 * (consts.theta_min + math.pi)),
            calc.exponential(1.0, consts.omega, th_exp)]


# ---------------------------------------------------------------------------
# study


@dataclass
class ConvergenceStudy:
    config: StudyConfig
    members: list
    fits: dict
    verdicts: dict

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def summary(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.config.scenario,
            "eps_list": self.config.eps_list,
            "seed": self.config.seed,
            "checks": self.config.checks,
            "defects": [m["report"] for m in self.members],
            "fits": {k: v.as_dict() if isinstance(v, OrderFit) else v for k, v in self.fits.items()},
            "verdicts": self.verdicts,
            "passed": self.passed,
        }


def _shared_context(cfg: StudyConfig, jobs: int) -> dict:
    """Quantities that must agree across the family (constants, windows)."""
    members = [build_member(cfg, e) for e in cfg.eps_list] if jobs <= 1 else None
    if members is None:
        with ProcessPoolExecutor(jobs) as ex:
            consts_list = list(ex.map(_consts_for, [cfg] * len(cfg.eps_list), cfg.eps_list))
        first = build_member(cfg, cfg.eps_list[0])
    else:
        consts_list = [_member_constants(b) for b in members]
        first = members[0]
    consts = SectorialityConstants.common(*consts_list)
    shared = {"consts": consts, "method": cfg.params.get("calculus_method",
                                                          "contour" if first.f0.dim <= 60 else "eig"),
              "disks": [], "reference": {}, "window": None}
    if "multiplicity" in cfg.checks or "spectra" in cfg.checks:
        count = int(cfg.params.get("eigen_count", 3))
        shared["disks"] = _limit_disks(first.f0, count)
        if cfg.scenario == "graphtube" and "graph" not in cfg.params:
            ref = sc.star_graph_eigenvalues(3, 1.0, 1.0, count + 2)
            for lam, _, _ in shared["disks"]:
                best = min(ref, key=lambda r: abs(r[0] - lam.real))
                shared["reference"][round(lam.real, 6)] = best[0]
        disks = shared["disks"]
        if len(disks) >= 2:
            a, b = disks[0][0].real, disks[1][0].real
            gap = b - a
            shared["window"] = spc.SpectralWindow.disk(0.5 * (a + b), 0.25 * gap, margin=1e-3 * gap)
    return shared


def _consts_for(cfg: StudyConfig, eps: float) -> SectorialityConstants:
    return _member_constants(build_member(cfg, eps))


def run_study(cfg: StudyConfig, out_dir: Optional[str] = None, jobs: int = 1) -> ConvergenceStudy:
    shared = _shared_context(cfg, jobs)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            members = list(ex.map(run_member, [cfg] * len(cfg.eps_list), cfg.eps_list,
                                  [shared] * len(cfg.eps_list)))
    else:
        members = [run_member(cfg, e, shared) for e in cfg.eps_list]
    fits, verdicts = {}, {}
    eps = cfg.eps_list
    deltas = [m["report"]["delta"] for m in members]
    if len(eps) >= 3:
        try:
            fits["delta"] = fit_order(list(zip(eps, deltas)))
        except ValueError:
            fits["delta"] = "exact" if all(d <= EXACT_TOL for d in deltas) else "insufficient"
    if "key_estimate" in cfg.checks:
        verdicts["key_estimate"] = all(r[-1] for m in members for r in m["key"])
    if "calculus" in cfg.checks:
        for name in members[0]["calculus"]:
            vals = [max(m["calculus"][name]) for m in members]
            f = calc.fit_through_origin(deltas, vals)
            fits[f"calculus:{name}"] = {"C": f.C, "max_ratio": f.max_ratio}
            verdicts[f"calculus:{name}"] = f.ok
    if "multiplicity" in cfg.checks:
        verdicts["multiplicity"] = all(r[4] != "fail" for m in members for r in m["multiplicity"])
        for k in range(len(shared["disks"])):
            pairs = [(m["eps"], m["multiplicity"][k][3]) for m in members]
            try:
                fits[f"eigen_error:{k}"] = fit_order(pairs)
            except ValueError:
                pass
    if "spectra" in cfg.checks and shared.get("window") is not None:
        verdicts["spectra"] = all(r[2] != "fail" for m in members for r in m["spectra"])
    if "invariance" in cfg.checks:
        verdicts["invariance"] = all(m["invariance_ok"] and all(r[3] != "fail" for r in m["positivity"])
                                     for m in members)
    if "lp" in cfg.checks:
        ps = sorted({p for m in members for p, _ in m["lp_rows"]})
        ok = True
        for p in ps:
            seq = [dict(m["lp_rows"])[p] for m in members]
            ok &= all(b < a for a, b in zip(seq, seq[1:]))
        verdicts["lp"] = ok
    if "defects" in cfg.checks:
        verdicts["defects"] = all(math.isfinite(d) for d in deltas)
    study = ConvergenceStudy(cfg, members, fits, verdicts)
    if out_dir is not None:
        write_outputs(study, out_dir, shared)
    return study


# ---------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    if isinstance(x, complex):
        return f"{x.real!r},{x.imag!r}"
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, bool):
        return str(x).lower()
    return str(x)


def write_outputs(study: ConvergenceStudy, out_dir: str, shared: dict):
    os.makedirs(out_dir, exist_ok=True)
    cfg, members = study.config, study.members
    files = {}
    if "csv" in cfg.formats:
        files["defects.csv"] = [qu.CSV_HEADER] + [m["csv_defects"] for m in members]
        if "key_estimate" in cfg.checks:
            lines = ["eps,z_re,z_im,lhs_up,bound_up,lhs_sandwich,bound_sandwich,pass"]
            for m in members:
                for z, a, b_, c, d, ok in m["key"]:
                    lines.append(",".join(_fmt(v) for v in (m["eps"], complex(z), a, b_, c, d, ok)))
            files["key_estimate.csv"] = lines
        if "calculus" in cfg.checks:
            lines = ["eps,function,delta,l_up,l_down"]
            for m in members:
                for name, (lu, ld) in m["calculus"].items():
                    lines.append(",".join(_fmt(v) for v in (m["eps"], name, m["report"]["delta"], lu, ld)))
            files["calculus.csv"] = lines
        if "multiplicity" in cfg.checks or "spectra" in cfg.checks:
            lines = [spc.CSV_HEADER]
            for m in members:
                for wid, (lam, m0, me, err, st) in enumerate(m["multiplicity"]):
                    lines.append(",".join(_fmt(v) for v in (m["eps"], complex(lam), me, wid, st != "fail")))
            files["spectra.csv"] = lines
            lines = ["eps,lambda0,m0,m_eps,max_error,status"]
            for m in members:
                for lam, m0, me, err, st in m["multiplicity"]:
                    lines.append(",".join(_fmt(v) for v in (m["eps"], float(lam.real), m0, me, err, st)))
            files["multiplicity.csv"] = lines
        if "invariance" in cfg.checks:
            lines = ["eps,t,min_entry,max_row_sum,status"]
            for m in members:
                for t, mn, rs, st in m["positivity"]:
                    lines.append(",".join(_fmt(v) for v in (m["eps"], float(t), mn, rs, st)))
            files["invariance.csv"] = lines
        if "lp" in cfg.checks:
            files["lp.csv"] = [inv.CSV_HEADER] + [r for m in members for r in m["lp"]]
    for name, lines in files.items():
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    if "json" in cfg.formats:
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(study.summary(), fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
    if "svg" in cfg.formats:
        eps = [m["eps"] for m in members]
        series = {"delta": [m["report"]["delta"] for m in members]}
        if "multiplicity" in cfg.checks:
            for k in range(len(shared["disks"])):
                series[f"eigen error {k}"] = [m["multiplicity"][k][3] for m in members]
        with open(os.path.join(out_dir, "convergence.svg"), "w") as fh:
            fh.write(loglog_svg(eps, series, study.fits))


def _json_default(o):
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o)}")


COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def loglog_svg(x, series: dict, fits: Optional[dict] = None, width: int = 480, height: int = 360) -> str:
    """Log-log plot of several series against x, with fitted lines when known."""
    fits = fits or {}
    pts = [(xi, yi) for ys in series.values() for xi, yi in zip(x, ys) if yi > 0 and xi > 0]
    if not pts:
        return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"></svg>\n'
    lx = [math.log10(p[0]) for p in pts]
    ly = [math.log10(p[1]) for p in pts]
    x0, x1 = min(lx) - 0.1, max(lx) + 0.1
    y0, y1 = min(ly) - 0.2, max(ly) + 0.2
    m = 50

    def px(v):
        return m + (v - x0) / (x1 - x0) * (width - 2 * m)

    def py(v):
        return height - m - (v - y0) / (y1 - y0) * (height - 2 * m)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" fill="none" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">log10 eps</text>',
           f'<text x="14" y="{height / 2}" font-size="12" transform="rotate(-90 14 {height / 2})">log10 value</text>']
    for k, (name, ys) in enumerate(series.items()):
        c = COLORS[k % len(COLORS)]
        good = [(math.log10(a), math.log10(b)) for a, b in zip(x, ys) if a > 0 and b > 0 and math.isfinite(b)]
        for a, b in good:
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{c}"/>')
        key = "delta" if name == "delta" else f"eigen_error:{name.split()[-1]}"
        f = fits.get(key)
        if isinstance(f, OrderFit) and good:
            xa, xb = min(g[0] for g in good), max(g[0] for g in good)
            ya = f.slope * xa * 1.0 + f.intercept / math.log(10)
            yb = f.slope * xb + f.intercept / math.log(10)
            out.append(f'<line x1="{px(xa):.2f}" y1="{py(ya):.2f}" x2="{px(xb):.2f}" y2="{py(yb):.2f}" '
                       f'stroke="{c}" stroke-dasharray="4 3"/>')
            name = f"{name} (slope {f.slope:.2f})"
        out.append(f'<text x="{m + 8}" y="{m + 16 + 14 * k}" font-size="11" fill="{c}">{name}</text>')
    out.append("</svg>\n")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# bundle subcommands


def _read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def load_form(path: str, side: str = "fe") -> SesquilinearForm:
    """A single form file, or one side of a pair bundle."""
    obj = _read_json(path)
    if "f0" in obj:
        if side not in ("f0", "fe"):
            raise ConfigError(f"--side: expected f0 or fe, got {side!r}")
        obj = obj[side]
    try:
        return SesquilinearForm.from_json(obj)
    except KeyError as exc:
        raise ConfigError(f"{path}: missing field {exc}") from exc


def load_pair(path: str):
    """{"eps", "f0": form, "fe": form, "J": {"Jup", "Jdown", "Jup1", "Jdown1"}}."""
    obj = _read_json(path)
    try:
        f0 = SesquilinearForm.from_json(obj["f0"])
        fe = SesquilinearForm.from_json(obj["fe"])
        j = obj["J"]
        J = qu.IdentificationQuadruple(
            LinearMap(f0.H, fe.H, matrix_from_json(j["Jup"])),
            LinearMap(fe.H, f0.H, matrix_from_json(j["Jdown"])),
            LinearMap(f0.V, fe.V, matrix_from_json(j["Jup1"])),
            LinearMap(fe.V, f0.V, matrix_from_json(j["Jdown1"])))
    except KeyError as exc:
        raise ConfigError(f"{path}: missing field {exc}") from exc
    return f0, fe, J, obj.get("eps")


def dump_pair(bundle: sc.ScenarioBundle) -> dict:
    J = bundle.J
    return {"eps": bundle.eps, "f0": bundle.f0.to_json(), "fe": bundle.fe.to_json(),
            "J": {k: matrix_to_json(getattr(J, k).matrix) for k in ("Jup", "Jdown", "Jup1", "Jdown1")}}


def cmd_export(args) -> int:
    cfg = StudyConfig.from_dict(_read_json(args.config))
    with _check("build"):
        b = build_member(cfg, args.eps)
    with open(args.out, "w") as fh:
        json.dump(dump_pair(b), fh)
    return 0


def cmd_defects(args) -> int:
    f0, fe, J, eps = load_pair(args.bundle)
    with _check("defects"):
        rep = qu.defect_report(f0, fe, J, eps)
    print(qu.CSV_HEADER)
    print(rep.csv_row())
    return 0


def cmd_spectrum(args) -> int:
    form = load_form(args.bundle, args.side)
    window = spc.SpectralWindow.disk(complex(args.disk[0], args.disk[1]), args.disk[2]) if args.disk else None
    with _check("spectrum"):
        clusters = sorted(spc.spectrum(form), key=lambda c: (c[0].real, c[0].imag))
    print(spc.CSV_HEADER)
    eps = "" if args.eps is None else repr(args.eps)
    for lam, m in clusters[: args.count]:
        inside = bool(window.contains(lam)) if window is not None else True
        wid = "0" if window is not None else ""
        print(",".join([eps, repr(lam.real), repr(lam.imag), str(m), wid, str(inside).lower()]))
    if window is not None:
        with _check("spectral_projection"):
            proj = spc.spectral_projection(form, window)
        log.info("window rank %d, trace %s", proj.rank, proj.trace)
    return 0


def _calculus_function(args, consts: SectorialityConstants) -> calc.CalculusFunction:
    th_res = 0.5 * (consts.theta_min + math.pi)
    if args.function == "exp":
        return calc.exponential(args.t, consts.omega, 0.5 * (consts.theta_min + 0.5 * math.pi))
    if args.function == "resolvent_shift":
        return calc.resolvent_shift(consts.omega, th_res)
    if not args.rational:
        raise ConfigError("--rational: required for custom-rational")
    obj = _read_json(args.rational) if os.path.exists(args.rational) else json.loads(args.rational)
    try:
        num = [complex(*c) if isinstance(c, list) else complex(c) for c in obj["num"]]
        den = [complex(*c) if isinstance(c, list) else complex(c) for c in obj["den"]]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"--rational: expected {{'num': [...], 'den': [...]}} ({exc})") from exc
    return calc.rational(num, den, consts.omega, float(obj.get("theta", th_res)))


def cmd_calculus(args) -> int:
    form = load_form(args.bundle, args.side)
    with _check("sectoriality"):
        consts = sectoriality_constants(form)
    psi = _calculus_function(args, consts)
    with _check("calculus"):
        op = calc.apply_function(form, psi, args.method, consts)
    out = {"function": psi.name, "method": args.method, "constants": consts.as_dict(),
           "matrix": matrix_to_json(op.matrix)}
    json.dump(out, sys.stdout, default=_json_default)
    sys.stdout.write("\n")
    return 0


def cmd_study(args) -> int:
    with open(args.config) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from exc
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.format:
        obj["formats"] = args.format.split(",")
    cfg = StudyConfig.from_dict(obj)
    study = run_study(cfg, args.out or cfg.out, jobs=args.jobs)
    for k, v in study.verdicts.items():
        print(f"{k}: {'pass' if v else 'FAIL'}")
    f = study.fits.get("delta")
    if isinstance(f, OrderFit):
        print(f"delta order {f.slope:.3f} (R^2 {f.r2:.3f})")
    return 0 if study.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quasiunitary", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("study", help="run an eps-family study from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--format")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_study)
    s = sub.add_parser("export", help="write the pair bundle of one family member")
    s.add_argument("--config", required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_export)
    s = sub.add_parser("defects", help="defect report of a pair bundle")
    s.add_argument("--bundle", required=True)
    s.set_defaults(fn=cmd_defects)
    for name, fn, hlp in (("spectrum", cmd_spectrum, "eigenvalue clusters of a form"),
                          ("calculus", cmd_calculus, "apply a holomorphic function to a form")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--bundle", required=True, help="form file or pair bundle")
        s.add_argument("--side", default="fe", help="which form of a pair bundle (f0 or fe)")
        s.set_defaults(fn=fn)
    sp_ = sub.choices["spectrum"]
    sp_.add_argument("--disk", type=float, nargs=3, metavar=("RE", "IM", "R"))
    sp_.add_argument("--count", type=int, default=20)
    sp_.add_argument("--eps", type=float)
    ca = sub.choices["calculus"]
    ca.add_argument("--function", choices=("resolvent_shift", "exp", "custom-rational"), default="exp")
    ca.add_argument("--t", type=float, default=1.0)
    ca.add_argument("--rational", help="JSON (inline or file) with num/den coefficient lists")
    ca.add_argument("--method", choices=("contour", "eig", "expm"), default="contour")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except CheckFailure as exc:
        print(f"numerical failure in check {exc.check}: {exc.__cause__}", file=sys.stderr)
        return 3
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
