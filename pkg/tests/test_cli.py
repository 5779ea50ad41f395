import json
import subprocess
import sys

import pytest

from pfjump import cli
from test_report import TINY


def _write(tmp_path, doc, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_run_and_compare(tmp_path, capsys):
    cfg = _write(tmp_path, dict(TINY, budget={"max_cycles": 4}))
    assert cli.main(["run", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert "N_final=4" in capsys.readouterr().out
    assert (tmp_path / "a" / "cycles.csv").exists()
    # both runs stop on the budget, so compare at a crack-length checkpoint is impossible
    with pytest.raises(ValueError):
        cli.main(["compare", str(tmp_path / "a"), str(tmp_path / "a")])


def test_compare_prints_metrics(tmp_path, capsys):
    a = tmp_path / "a.json"
    hf = tmp_path / "hf.json"
    a.write_text(json.dumps({"model_hash": "m", "N_u": 28293, "N_r": 1045, "cpu_time": 2.0}))
    hf.write_text(json.dumps({"model_hash": "m", "N_u": 27998, "N_r": 27998, "cpu_time": 8.0}))
    assert cli.main(["compare", str(a), str(hf)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["eps_N"] == pytest.approx(0.0105, abs=5e-5)
    assert out["omega_N"] == pytest.approx(27.07, abs=5e-3)
    assert out["omega_cpu"] == pytest.approx(-0.75)


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, {"schema_version": 1})
    assert cli.main(["run", str(cfg)]) == 2
    assert "missing section" in capsys.readouterr().err


def test_sweep_command(tmp_path, capsys):
    d = tmp_path / "cfg"
    d.mkdir()
    _write(d, dict(TINY, budget={"max_cycles": 2}), "one.json")
    assert cli.main(["sweep", str(d), "--workers", "1", "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "one" / "summary.csv").exists()
    assert cli.main(["sweep", str(tmp_path / "out")]) == 2


def test_profiles_command(tmp_path, capsys):
    assert cli.main(["profiles", "AT1", "--n-rho", "40", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "envelope_AT1_summary.csv").read_text().splitlines()
    assert rows[0] == "key,value" and rows[1] == "d_hom,0.0"
    assert (tmp_path / "profiles_AT1.csv").read_text().startswith("rho,zeta,d\n")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pfjump", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("run", "sweep", "compare", "calibrate", "profiles"):
        assert cmd in res.stdout
