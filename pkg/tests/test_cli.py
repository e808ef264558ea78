import json
import time

import numpy as np
import pytest

from axisym import cli, config
from axisym.field import load_checkpoint

SMALL = """
[grid]
r_max = 8
z_max = 8
nr = 48
nz = 48

[evolve]
dt = 0.01
t_end = {t_end}
nonlinear = true
checkpoint_every = 25

[initial]
preset = mode_perturbation
impulse = 1.0
modes = 0,1:0.1; 1,0:-0.05
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL.format(t_end=1.0))
    return p


# ------------------------------------------------------------------ config

def test_parse_modes():
    assert config.parse_modes("0,1:0.1; 1,0:-0.05") == [((0, 1), 0.1), ((1, 0), -0.05)]
    assert config.parse_modes("") == []
    with pytest.raises(config.ConfigError):
        config.parse_modes("0:0.1")


def test_unknown_keys_are_errors():
    with pytest.raises(config.ConfigError, match="unknown key"):
        config.parse("[grid]\nnr = 64\nnrr = 64\n")
    with pytest.raises(config.ConfigError, match="unknown section"):
        config.parse("[solver]\ntol = 1\n")
    with pytest.raises(config.ConfigError, match="bad value"):
        config.parse("[evolve]\ndt = fast\n")
    with pytest.raises(config.ConfigError):
        config.parse("[evolve]\ndt = -1\n")


def test_reference_documents_every_key():
    text = config.preset_path("config_reference.txt").read_text()
    for sec, keys in config.KEYS.items():
        assert f"[{sec}]" in text
        for k in keys:
            assert k in text


@pytest.mark.parametrize("name", ["cor1.cfg", "cor2.cfg", "cor3.cfg", "linear_mode.cfg", "attractor.cfg"])
def test_bundled_presets_parse(name):
    cfg, text = config.load(name)
    assert cfg.grid.nr == 256 and cfg.dt == 2e-3
    assert len(config.digest(text)) == 64


def test_corollary_presets_encode_scenarios():
    c1, _ = config.load("cor1.cfg")
    c2, _ = config.load("cor2.cfg")
    c3, _ = config.load("cor3.cfg")
    assert c1.initial.impulse == 1.0 and c2.initial.impulse == 0.0 and c3.initial.impulse == 0.0
    assert [i.n % 2 for i, _ in c2.initial.modes] == [1]
    assert all(i.n % 2 == 0 for i, _ in c3.initial.modes)


# ------------------------------------------------------------------ basis

def test_cmd_basis(tmp_path, capsys):
    assert cli.main(["basis", "--max-level", "8", "--quad-nodes", "18", "--out", str(tmp_path / "b")]) == 0
    rep = json.loads((tmp_path / "b" / "report.json").read_text())
    assert rep["passed"] and rep["orthonormality"] <= 1e-10
    rows = (tmp_path / "b" / "modes.csv").read_text().splitlines()
    assert rows[0] == "l,n,lambda,c" and len(rows) == 1 + 25


def test_cmd_basis_underresolved(tmp_path):
    assert cli.main(["basis", "--max-level", "8", "--quad-nodes", "2", "--out", str(tmp_path / "b")]) == 2


def test_cmd_basis_bad_out(tmp_path):
    f = tmp_path / "file"
    f.write_text("x")
    assert cli.main(["basis", "--out", str(f / "sub")]) == 1


# ------------------------------------------------------------------ evolve

def test_cmd_evolve_and_manifest(tmp_path, small_cfg):
    out = tmp_path / "run"
    assert cli.main(["evolve", str(small_cfg), "--out", str(out)]) == 0
    m = json.loads((out / "manifest.json").read_text())
    on_disk = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())
    assert m["files"] == on_disk
    assert {"trace.csv", "final.bin", "config.cfg", "manifest.json"} <= set(on_disk)
    assert m["config_sha256"] == config.digest(small_cfg.read_text())
    assert m["status"] == "ok" and m["dt"] == 0.01
    h, t = load_checkpoint(out / "final.bin")
    assert t == pytest.approx(1.0)


def test_cmd_evolve_deterministic(tmp_path, small_cfg):
    for d in ("a", "b"):
        assert cli.main(["evolve", str(small_cfg), "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_cmd_evolve_resume(tmp_path, small_cfg):
    assert cli.main(["evolve", str(small_cfg), "--out", str(tmp_path / "full")]) == 0
    ck = tmp_path / "full" / "checkpoint_t0000.5000.bin"
    assert ck.exists()
    assert cli.main(["evolve", str(small_cfg), "--out", str(tmp_path / "part"), "--resume", str(ck)]) == 0
    a = np.loadtxt(tmp_path / "full" / "trace.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(tmp_path / "part" / "trace.csv", delimiter=",", skiprows=1)
    assert b[0, 0] == pytest.approx(0.5)
    assert np.abs(a[-len(b):] - b).max() <= 1e-12


def test_cmd_evolve_cfl_failure(tmp_path, capsys):
    p = tmp_path / "big.cfg"
    p.write_text(SMALL.format(t_end=40).replace("dt = 0.01", "dt = 20"))
    assert cli.main(["evolve", str(p), "--out", str(tmp_path / "r")]) == 3
    assert "CFL" in capsys.readouterr().err
    m = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert m["status"] == "solver_failure"


def test_cmd_evolve_parse_errors(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("[grid]\nnr = many\n")
    assert cli.main(["evolve", str(p), "--out", str(tmp_path / "r")]) == 1
    assert cli.main(["evolve", str(tmp_path / "missing.cfg")]) == 1


def test_output_root_env(tmp_path, small_cfg, monkeypatch):
    monkeypatch.setenv("AXISYM_OUT", str(tmp_path / "root"))
    assert cli.main(["evolve", str(small_cfg)]) == 0
    assert (tmp_path / "root" / "small" / "trace.csv").exists()


def test_bundled_preset_smoke(tmp_path):
    # the cor1 preset on a coarser grid and a shorter horizon
    text = config.read_text("cor1.cfg")
    text = text.replace("nr = 256", "nr = 48").replace("nz = 256", "nz = 48")
    text = text.replace("r_max = 12", "r_max = 8").replace("z_max = 12", "z_max = 8")
    text = text.replace("dt = 2e-3", "dt = 1e-2").replace("t_end = 10", "t_end = 0.5")
    p = tmp_path / "cor1.cfg"
    p.write_text(text)
    assert cli.main(["evolve", str(p), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "trace.csv").exists()


# ------------------------------------------------------------------ report

@pytest.mark.parametrize("fmt,files", [("csv", ["report.csv"]), ("json", ["report.json"]),
                                       ("gnuplot", ["report.gp", "report.dat"])])
def test_cmd_report(tmp_path, small_cfg, fmt, files):
    out = tmp_path / "run"
    assert cli.main(["evolve", str(small_cfg), "--out", str(out)]) == 0
    assert cli.main(["report", str(out), "--format", fmt]) == 0
    for f in files:
        assert (out / "report" / f).exists()
    m = json.loads((out / "manifest.json").read_text())
    assert all(f"report/{f}" in m["files"] for f in files)
    if fmt == "csv":
        lines = (out / "report" / "report.csv").read_text().splitlines()
        assert lines[0].startswith("# t:")
        assert any(line.startswith("# fit l2mu_residual") for line in lines)
        header = next(line for line in lines if not line.startswith("#"))
        assert header.split(",")[:2] == ["t", "log_l2mu_residual"]
    if fmt == "json":
        rep = json.loads((out / "report" / "report.json").read_text())
        assert rep["fits"]["l2mu_residual"]["rate"] > 0
    if fmt == "gnuplot":
        gp = (out / "report" / "report.gp").read_text()
        ncols = len((out / "report" / "report.dat").read_text().splitlines()[1].split())
        assert f"using 1:{ncols}" in gp and "plot " in gp


def test_cmd_report_missing_manifest(tmp_path):
    (tmp_path / "empty").mkdir()
    assert cli.main(["report", str(tmp_path / "empty")]) == 1


# ------------------------------------------------------------------ verify

def test_cmd_verify_basis(tmp_path):
    t0 = time.perf_counter()
    assert cli.main(["verify", "basis", "--out", str(tmp_path / "v.json")]) == 0
    assert time.perf_counter() - t0 < 10.0
    s = json.loads((tmp_path / "v.json").read_text())
    assert s["passed"] and s["criteria"][0]["number"] == 1


def test_cmd_verify_linear_quick(tmp_path):
    assert cli.main(["verify", "linear", "--scale", "quick", "--out", str(tmp_path / "v.json")]) == 0


def test_cmd_verify_unknown_suite():
    with pytest.raises(SystemExit):
        cli.main(["verify", "everything"])
