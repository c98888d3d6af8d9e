import json
import math
import subprocess
import sys

import numpy as np
import pytest

from quasiunitary import cli
from quasiunitary.linalg import matrix_from_json

FOURIER = {"scenario": "fourier", "params": {"N": 64, "lambda": "k2pi2"},
           "eps_list": [0.5, 0.25, 0.125, 0.0625], "checks": ["defects", "calculus", "spectra"],
           "formats": ["csv", "json", "svg"]}


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _csv(path):
    lines = path.read_text().strip().splitlines()
    head = lines[0].split(",")
    return [dict(zip(head, l.split(","))) for l in lines[1:]]


def test_fit_order_exact_slopes():
    eps = [0.2, 0.1, 0.05, 0.025]
    f = cli.fit_order([(e, 3 * e) for e in eps])
    assert f.slope == pytest.approx(1.0) and f.r2 == pytest.approx(1.0)
    assert cli.fit_order([(e, math.sqrt(e)) for e in eps]).slope == pytest.approx(0.5)


def test_fit_order_noisy_and_degenerate(rng):
    eps = np.geomspace(0.2, 0.01, 8)
    vals = np.sqrt(eps) * np.exp(rng.normal(0, 0.05, 8))
    assert 0.45 <= cli.fit_order(zip(eps, vals)).slope <= 0.55
    with pytest.raises(ValueError):
        cli.fit_order([(0.1, 1.0), (0.05, 0.5)])
    f = cli.fit_order([(0.4, 0.0), (0.2, 0.2), (0.1, 0.1), (0.05, 0.05)])
    assert f.exact == [0.4] and f.n_points == 3


@pytest.mark.parametrize("patch,msg", [
    ({"checks": []}, "checks"),
    ({"eps_list": [0.1, 0.2]}, "eps_list"),
    ({"scenario": "torus"}, "scenario"),
    ({"checks": ["defects", "bogus"]}, "checks"),
    ({"seed": "x"}, "seed"),
    ({"formats": ["xml"]}, "formats"),
])
def test_config_errors_exit_2(tmp_path, capsys, patch, msg):
    cfg = dict(FOURIER, **patch)
    rc = cli.main(["study", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert msg in capsys.readouterr().err


def test_unknown_subcommand_and_missing_file(tmp_path):
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["study", "--config", str(tmp_path / "nope.json")]) == 2


def test_fourier_study_outputs(tmp_path):
    out = tmp_path / "run"
    rc = cli.main(["study", "--config", _write(tmp_path, FOURIER), "--out", str(out)])
    assert rc == 0
    rows = _csv(out / "defects.csv")
    for r in rows:
        n = round(1 / float(r["eps"]))
        assert float(r["delta"]) == pytest.approx(1 / ((n + 1) * math.pi), abs=1e-12)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == cli.SCHEMA_VERSION
    assert (out / "convergence.svg").read_text().startswith("<svg")
    assert _csv(out / "calculus.csv")


def test_fourier_config_from_n_list():
    cfg = cli.StudyConfig.from_dict({"scenario": "fourier", "params": {"n_list": [2, 4, 8]},
                                     "checks": ["defects"]})
    assert cfg.eps_list == [0.5, 0.25, 0.125]


def test_study_is_deterministic(tmp_path):
    cfg = dict(FOURIER, formats=["csv", "json"])
    path = _write(tmp_path, cfg)
    cli.main(["study", "--config", path, "--out", str(tmp_path / "a")])
    cli.main(["study", "--config", path, "--out", str(tmp_path / "b"), "--jobs", "2"])
    for name in ("defects.csv", "calculus.csv", "spectra.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.fixture
def bundle(tmp_path):
    cfg = _write(tmp_path, dict(FOURIER, params={"N": 12}))
    out = str(tmp_path / "pair.json")
    assert cli.main(["export", "--config", cfg, "--eps", "0.25", "--out", out]) == 0
    return out


def test_defects_subcommand(bundle, capsys):
    assert cli.main(["defects", "--bundle", bundle]) == 0
    head, row = capsys.readouterr().out.strip().splitlines()
    rec = dict(zip(head.split(","), row.split(",")))
    assert float(rec["delta"]) == pytest.approx(1 / (5 * math.pi), abs=1e-12)


def test_spectrum_subcommand(bundle, capsys):
    assert cli.main(["spectrum", "--bundle", bundle, "--side", "fe", "--count", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    lam = [float(l.split(",")[1]) for l in lines[1:]]
    np.testing.assert_allclose(lam, (np.arange(1, 4) * math.pi) ** 2, rtol=1e-10)


def test_spectrum_disk_through_eigenvalue_exits_3(bundle, capsys):
    rc = cli.main(["spectrum", "--bundle", bundle, "--disk", "0", "0", str(math.pi ** 2)])
    assert rc == 3
    assert "numerical failure" in capsys.readouterr().err


def test_calculus_subcommand(bundle, capsys):
    assert cli.main(["calculus", "--bundle", bundle, "--side", "f0", "--function", "exp",
                     "--t", "0.01", "--method", "eig"]) == 0
    out = json.loads(capsys.readouterr().out)
    m = matrix_from_json(out["matrix"])
    np.testing.assert_allclose(np.diag(m).real, np.exp(-0.01 * (np.arange(1, 13) * math.pi) ** 2),
                               atol=1e-10)


def test_calculus_rational_and_bad_pole(bundle, capsys):
    ok = json.dumps({"num": [1.0], "den": [1.0, 1.0]})
    assert cli.main(["calculus", "--bundle", bundle, "--function", "custom-rational",
                     "--rational", ok]) == 0
    m = matrix_from_json(json.loads(capsys.readouterr().out)["matrix"])
    np.testing.assert_allclose(np.diag(m).real, 1 / (1 + (np.arange(1, 5) * math.pi) ** 2), atol=1e-8)
    bad = json.dumps({"num": [1.0], "den": [1.0, -5.0]})
    assert cli.main(["calculus", "--bundle", bundle, "--function", "custom-rational",
                     "--rational", bad]) == 2
    assert cli.main(["calculus", "--bundle", bundle, "--function", "custom-rational"]) == 2


def test_bad_side_is_config_error(bundle):
    assert cli.main(["spectrum", "--bundle", bundle, "--side", "middle"]) == 2


def test_invariance_needs_lumped_weights(tmp_path):
    cfg = {"scenario": "wentzell", "params": {"n_mesh": 4}, "eps_list": [0.1, 0.05, 0.025],
           "checks": ["invariance"]}
    assert cli.main(["study", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "w")]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "quasiunitary.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "study" in r.stdout


def test_svg_marks_every_point():
    svg = cli.loglog_svg([0.1, 0.05, 0.025], {"a": [1.0, 0.5, 0.25], "b": [2.0, 1.0, 0.5]})
    assert svg.count("<circle") == 6
    assert ">a</text>" in svg and ">b</text>" in svg
