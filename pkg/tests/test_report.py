import copy
import json

import numpy as np
import pytest

from pfjump import acj as A
from pfjump import report as R

TINY = {
    "schema_version": 1,
    "name": "tiny",
    "geometry": {"preset": "rectangle", "width": 1.0, "height": 1.0, "h": 0.5},
    "material": {"E": 100.0, "nu": 0.0, "Gc": 1.0, "ell": 0.5, "dissipation": "AT1"},
    "fatigue": {"alpha_th": 1.0},
    "boundary": {
        "constraints": [
            {"set": "left", "component": 0},
            {"set": "bottom", "component": 1},
            {"set": "right", "component": 0, "value": 1.0, "follows_load": True},
        ]
    },
    "load": {"kind": "displacement", "min_level": 0.0, "max_level": 1e-3},
    "crack": {"c_tip": 1.0, "c_ext": 1.0},
    "engine": {"kind": "HF"},
    "budget": {"max_cycles": 10},
}


def _cfg(**changes):
    doc = copy.deepcopy(TINY)
    for k, v in changes.items():
        doc[k] = v
    return doc


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.suffix == ".csv" and p.name != "timing.csv"}


# -- configuration -----------------------------------------------------
def test_config_roundtrip(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(TINY))
    a = R.load_config(p)
    b = R.load_config(json.dumps(TINY))
    assert a.model_hash == b.model_hash
    assert a.engine.kind == "HF" and a.engine.max_cycles == 10
    # engine and budget do not change the problem fingerprint
    c = R.load_config(_cfg(engine={"kind": "ACJ"}))
    assert c.model_hash == a.model_hash
    d = R.load_config(_cfg(fatigue={"alpha_th": 2.0}))
    assert d.model_hash != a.model_hash


@pytest.mark.parametrize("change,match", [
    ({"schema_version": 7}, "schema_version"),
    ({"geometry": {"preset": "donut"}}, "preset"),
    ({"material": {"E": 1.0}}, "material"),
    ({"engine": {"kind": "XYZ"}}, "engine"),
    ({"solver": {"irreversibility": "magic"}}, "irreversibility"),
    ({"surprise": 1}, "unknown keys"),
    ({"crack": {"tips": 2}}, "unknown keys"),
])
def test_config_errors(change, match):
    with pytest.raises(R.ConfigError, match=match):
        R.load_config(_cfg(**change))


def test_invalid_json():
    with pytest.raises(R.ConfigError):
        R.load_config("{not json")


# -- runs --------------------------------------------------------------
def test_hf_run_writes_one_row_per_cycle(tmp_path):
    res = R.run(TINY, tmp_path)
    assert R.cycles_row_count(tmp_path) == 10
    assert res.summary["N_r"] == 10 and res.summary["failure_mode"] == "budget"
    text = (tmp_path / "cycles.csv").read_bytes()
    assert b"\r" not in text and text.splitlines()[0] == b"N,max_alpha_bar,max_d,a_smeared,stagger_iters,wall_time"
    js = json.loads((tmp_path / "summary.json").read_text())
    assert js["N_final"] == 10 and js["cpu_time"] > 0


def test_rerun_is_byte_identical(tmp_path):
    R.run(TINY, tmp_path / "a")
    R.run(TINY, tmp_path / "b")
    fa, fb = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert fa.keys() == fb.keys() and "summary.csv" in fa
    assert fa == fb


def test_acj_bookkeeping(tmp_path):
    doc = _cfg(fatigue={"alpha_th": 1e6}, engine={"kind": "FCJ", "fixed_jump": 50}, budget={"max_cycles": 300})
    res = R.run(doc, tmp_path)
    tr = res.trace
    jumps = [j for j in tr.jumps if j.outcome == A.JUMPED]
    assert jumps
    assert tr.N_final == tr.N_resolved + sum(j.delta_N - 1 for j in jumps)
    assert R.cycles_row_count(tmp_path) == tr.N_resolved
    s = R.read_summary(tmp_path)
    assert s["omega_N"] == pytest.approx(tr.N_final / R.cycles_row_count(tmp_path))
    assert s["omega_N"] >= 1.0


def test_stage_one_acj_bookkeeping(tmp_path):
    res = R.run(_cfg(engine={"kind": "ACJ"}, budget={"max_cycles": 500}), tmp_path)
    tr = res.trace
    assert any(j.outcome == A.JUMPED for j in tr.jumps)
    assert tr.N_final == tr.N_resolved + tr.jumped_cycles
    with open(tmp_path / "jumps.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header[:6] == ["N_before", "stage", "target_increment", "delta_N", "outcome", "observed_increment"]


# -- metrics -----------------------------------------------------------
def test_metric_formulas():
    assert R.life_error(28293, 27998) == pytest.approx(0.0105, abs=5e-5)
    assert R.resolved_speedup(28293, 1045) == pytest.approx(27.07, abs=5e-3)
    assert R.cpu_speedup(10.0, 40.0) == pytest.approx(-0.75)


def test_compare_summaries():
    a = {"model_hash": "x", "N_u": 28293, "N_r": 1045, "cpu_time": 1.0}
    hf = {"model_hash": "x", "N_u": 27998, "N_r": 27998, "cpu_time": 20.0}
    m = R.compare(a, hf)
    assert m.eps_N == pytest.approx(0.0105, abs=5e-5)
    assert m.omega_N == pytest.approx(27.07, abs=5e-3)
    assert m.omega_cpu == pytest.approx(-0.95)
    same = R.compare(hf, hf)
    assert same.eps_N == 0.0 and same.omega_N == 1.0
    with pytest.raises(ValueError, match="model_hash"):
        R.compare(dict(a, model_hash="y"), hf)
    with pytest.raises(ValueError):
        R.compare(dict(a, N_u=None), hf)


def test_compare_directories_and_checkpoint(tmp_path):
    for name, a_values in (("a", [0.0, 0.1, 0.3]), ("hf", [0.0, 0.05, 0.2, 0.35])):
        d = tmp_path / name
        d.mkdir()
        rows = ["N,a_smeared_raw,a_smeared,a_interpolated,a_discrete"]
        rows += [f"{i + 1},{a},{a},nan,nan" for i, a in enumerate(a_values)]
        (d / "crack.csv").write_text("\n".join(rows) + "\n")
        (d / "summary.csv").write_text(f"key,value\nmodel_hash,h\nN_u,\nN_r,{len(a_values)}\n")
    m = R.compare(tmp_path / "a", tmp_path / "hf", a_co=0.25)
    assert (m.N_a, m.N_hf) == (3, 4)
    assert m.eps_N == pytest.approx(-0.25)
    with pytest.raises(ValueError):
        R.compare(tmp_path / "a", tmp_path / "hf", a_co=5.0)


def test_prediction_error_zero_for_linear_evolution():
    sim_doc = _cfg(fatigue={"alpha_th": 1e6}, engine={"kind": "FCJ", "fixed_jump": 20,
                                                       "store_alpha_diagnostics": True},
                   budget={"max_cycles": 60})
    cfg = R.load_config(sim_doc)
    sim = R.build_simulation(cfg)
    tr = A.run_engine(sim, cfg.engine)
    errs = R.prediction_error_field(tr, sim.disc.wdet.ravel())
    assert errs and all(e[3] < 1e-10 for e in errs)


def test_prediction_error_excludes_zero_points():
    diag = A.AlphaDiagnostic(10, 5, A.Stage.II, np.array([[0.0, 1.0], [0.0, 2.0], [0.0, 3.0], [0.0, 4.0]]))
    # computed values for N = 11, 12 (one and two cycles after the jump base)
    diag.computed = [(11, np.array([0.0, 5.0])), (12, np.array([0.0, 6.0]))]
    tr = A.Trace("ACJ", diagnostics=[diag])
    (N, dN, st, norm), = R.prediction_error_field(tr)
    assert (N, dN, st) == (10, 5, 2) and norm == pytest.approx(0.0, abs=1e-12)
    diag.computed = [(11, np.array([0.0, 2.5])), (12, np.array([0.0, 3.0]))]
    # predictions 5 and 6 against 2.5 and 3: relative error 1 at the live point
    assert R.prediction_error_field(tr)[0][3] == pytest.approx(1.0)
    assert R.prediction_error_field(A.Trace("HF")) == []


def test_sweep(tmp_path):
    cfgs = tmp_path / "cfg"
    cfgs.mkdir()
    for i in range(2):
        (cfgs / f"r{i}.json").write_text(json.dumps(_cfg(budget={"max_cycles": 3 + i})))
    (cfgs / "bad.json").write_text("{}")
    out = R.sweep(cfgs, workers=1, out_root=tmp_path / "out")
    by = {p.split("/")[-1]: (n, mode) for p, n, mode, _, _ in out}
    assert by["bad.json"][1] == "error"
    assert by["r0.json"] == (None, "budget")
    assert R.cycles_row_count(tmp_path / "out" / "r1") == 4
