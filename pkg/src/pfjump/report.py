"""Run configuration, trace persistence and comparison metrics.

A run is described by one JSON document (:func:`load_config`). :func:`run`
builds the simulation, drives the selected engine and writes

``cycles.csv``
    one row per kept cycle (resolved cycles and accepted trial cycles);
``jumps.csv``
    every jump attempt with its outcome;
``crack.csv``
    all crack-length measures per kept cycle;
``growth.csv``
    secant growth rates of the smeared crack length;
``summary.csv`` / ``summary.json``
    life, resolved cycles and bookkeeping.

In deterministic mode (the default) the wall-time column of ``cycles.csv``
is written as zero and timings go to ``timing.csv`` and ``summary.json``
only, so that every CSV is byte-identical across reruns.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import acj as acj_mod
from . import fem, mesh as mesh_mod
from .acj import AcjSettings, EngineSettings, Trace, extrapolate_alpha, run_engine
from .crack import CorrectionTable, SmearedConfig, crack_growth_rate
from .cycle import (BoundaryConditions, Constraint, FailureCriterion, Load, LoadProgram, Simulation,
                    StaggerSettings)
from .model import FatigueParams, Material

SCHEMA_VERSION = 1

CYCLE_COLUMNS = ["N", "max_alpha_bar", "max_d", "a_smeared", "stagger_iters", "wall_time"]
JUMP_COLUMNS = ["N_before", "stage", "target_increment", "delta_N", "outcome", "observed_increment", "branch"]
CRACK_COLUMNS = ["N", "a_smeared_raw", "a_smeared", "a_interpolated", "a_discrete"]
SUMMARY_KEYS = ["schema_version", "name", "engine", "model_hash", "N_final", "N_u", "failure_mode", "N_r",
                "jumped_cycles", "n_jumps", "rejected_trials", "flagged_invalid", "hf_lock_events",
                "omega_N", "a_final"]


class ConfigError(ValueError):
    """The run configuration is malformed."""


# ----------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------
@dataclass
class RunConfig:
    """Parsed run configuration; ``raw`` keeps the validated JSON document."""

    name: str
    geometry: mesh_mod.GeometryPreset
    material: Material
    fatigue: FatigueParams
    bcs: BoundaryConditions
    program: LoadProgram
    engine: EngineSettings
    stagger: StaggerSettings
    newton: fem.NewtonSettings
    irreversibility: str = "history"
    tol_ir: float = 1e-6
    crack: dict = field(default_factory=dict)
    failure: FailureCriterion = field(default_factory=FailureCriterion)
    output: str = "out"
    deterministic: bool = True
    K_Ic: float = None
    raw: dict = field(default_factory=dict)

    @property
    def model_hash(self) -> str:
        """Fingerprint of everything that defines the physical problem."""
        keys = ("geometry", "material", "fatigue", "boundary", "load", "crack", "failure")
        doc = {k: self.raw.get(k) for k in keys}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


_TOP_KEYS = {"schema_version", "name", "geometry", "material", "fatigue", "boundary", "load", "solver",
             "crack", "failure", "engine", "budget", "output", "K_Ic"}
_CRACK_KEYS = {"k_tips", "c_tip", "c_ext", "ell_over_h", "d_rel", "path", "correction_table", "growth_da",
               "initial"}


def _kwargs(section: str, doc: dict, allowed) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"[{section}] must be an object")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    return dict(doc)


def _names(cls):
    return [f.name for f in dataclasses.fields(cls)]


def _build(section, cls, doc, allowed=None, **extra):
    kw = _kwargs(section, doc, allowed or _names(cls))
    kw.update(extra)
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def _bands(doc):
    return tuple(_build("geometry.bands", mesh_mod.RefineBand, b) for b in doc)


def _geometry(doc) -> mesh_mod.GeometryPreset:
    doc = dict(doc)
    kind = doc.pop("preset", None)
    builders = {
        "rectangle": mesh_mod.rectangle,
        "pull_strip": mesh_mod.pull_strip,
        "ct": mesh_mod.ct_specimen,
        "hole_plate": mesh_mod.hole_plate,
    }
    if kind not in builders:
        raise ConfigError(f"[geometry] preset must be one of {sorted(builders)}, got {kind!r}")
    if "bands" in doc:
        doc["bands"] = _bands(doc["bands"])
    try:
        return builders[kind](**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[geometry] {exc}") from exc


def _boundary(doc) -> BoundaryConditions:
    doc = _kwargs("boundary", doc, ["constraints", "loads"])
    cons = []
    for c in doc.get("constraints", []):
        c = _kwargs("boundary.constraints", c, ["set", "component", "value", "follows_load"])
        cons.append(Constraint(c.pop("set"), int(c.pop("component")), **c))
    loads = []
    for ld in doc.get("loads", []):
        ld = _kwargs("boundary.loads", ld, ["set", "component", "scale", "distribution"])
        loads.append(Load(ld.pop("set"), int(ld.pop("component")), **ld))
    return BoundaryConditions(cons, loads)


def _engine(doc, budget) -> EngineSettings:
    acj_keys = _names(AcjSettings)
    eng_keys = ["kind", "fixed_jump", "ecj_q", "ecj_max_jump", "store_alpha_diagnostics"]
    kw = _kwargs("engine", doc, acj_keys + eng_keys)
    acj_kw = {k: kw.pop(k) for k in list(kw) if k in acj_keys}
    budget = _kwargs("budget", budget, ["max_cycles", "max_wall_seconds"])
    try:
        return EngineSettings(acj=AcjSettings(**acj_kw), **kw, **budget)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[engine] {exc}") from exc


def parse_config(doc: dict) -> RunConfig:
    """Validate a configuration document and build the typed objects."""
    if not isinstance(doc, dict):
        raise ConfigError("the configuration must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    _kwargs("config", doc, _TOP_KEYS)
    for key in ("geometry", "material", "fatigue", "boundary", "load"):
        if key not in doc:
            raise ConfigError(f"missing section [{key}]")
    solver = _kwargs("solver", doc.get("solver", {}), ["tol_stag", "max_stag_iters", "irreversibility", "tol_ir",
                                                       "newton"])
    crack = _kwargs("crack", doc.get("crack", {}), _CRACK_KEYS)
    output = _kwargs("output", doc.get("output", {}), ["directory", "deterministic"])
    irr = solver.get("irreversibility", "history")
    if irr not in ("history", "penalty"):
        raise ConfigError(f"[solver] irreversibility must be 'history' or 'penalty', got {irr!r}")
    return RunConfig(
        name=str(doc.get("name", "run")),
        geometry=_geometry(doc["geometry"]),
        material=_build("material", Material, doc["material"]),
        fatigue=_build("fatigue", FatigueParams, doc["fatigue"]),
        bcs=_boundary(doc["boundary"]),
        program=_build("load", LoadProgram, doc["load"]),
        engine=_engine(doc.get("engine", {"kind": "HF"}), doc.get("budget", {})),
        stagger=_build("solver", StaggerSettings, {k: solver[k] for k in ("tol_stag", "max_stag_iters") if k in solver}),
        newton=_build("solver.newton", fem.NewtonSettings, solver.get("newton", {})),
        irreversibility=irr,
        tol_ir=float(solver.get("tol_ir", 1e-6)),
        crack=crack,
        failure=_build("failure", FailureCriterion, doc.get("failure", {})),
        output=str(output.get("directory", "out")),
        deterministic=bool(output.get("deterministic", True)),
        K_Ic=doc.get("K_Ic"),
        raw=json.loads(json.dumps(doc)),
    )


def load_config(source) -> RunConfig:
    """Read a configuration from a path, a JSON string or a dict."""
    if isinstance(source, dict):
        return parse_config(source)
    if isinstance(source, str) and source.lstrip().startswith("{"):
        text = source
    else:
        text = Path(source).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return parse_config(doc)


def build_simulation(cfg: RunConfig) -> Simulation:
    mesh = mesh_mod.generate_mesh(cfg.geometry)
    mat = cfg.material
    c = cfg.crack
    smeared = None
    if c.get("c_tip") is not None and c.get("c_ext") is not None:
        smeared = SmearedConfig(mat.dissipation, mat.ell, int(c.get("k_tips", 1)), float(c["c_tip"]),
                                float(c["c_ext"]), c.get("d_rel"))
    else:
        ratio = c.get("ell_over_h") or mat.ell / float(mesh.char_length_h.min())
        table = CorrectionTable.read_csv(c["correction_table"]) if c.get("correction_table") else None
        smeared = SmearedConfig.from_table(mat.dissipation, mat.ell, ratio, int(c.get("k_tips", 1)), table,
                                           d_rel=c.get("d_rel"))
    return Simulation(mesh, mat, cfg.fatigue, cfg.bcs, cfg.program, cfg.stagger, cfg.newton,
                      irreversibility=cfg.irreversibility, tol_ir=cfg.tol_ir, smeared=smeared,
                      crack_path=c.get("path"), failure=cfg.failure, initial_crack=c.get("initial"))


# ----------------------------------------------------------------------
# Output
# ----------------------------------------------------------------------
def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def prediction_error_field(trace: Trace, weights=None) -> list:
    """L2 norm of the averaged relative extrapolation error of ``alpha_bar`` per jump.

    For each stored diagnostic the computed fields of the cycles after the
    trial cycle are compared with the extrapolation from the pre-jump
    stencil. Points where the computed value is zero are left out. With
    ``weights`` (quadrature weights) the norm is ``sqrt(sum w eps^2)``,
    otherwise the Euclidean norm over the points.

    Returns a list of ``(N_jump, delta_N, stage, norm)``.
    """
    out = []
    for diag in trace.diagnostics:
        if not diag.computed:
            continue
        acc = None
        for N, alpha in diag.computed:
            pred = extrapolate_alpha(diag.buffer, N - diag.N_jump)
            ok = alpha > 0.0
            rel = np.where(ok, (pred - alpha) / np.where(ok, alpha, 1.0), 0.0)
            acc = rel if acc is None else acc + rel
        eps = acc / len(diag.computed)
        w = np.ones_like(eps) if weights is None else np.asarray(weights, dtype=float).ravel()
        out.append((diag.N_jump, diag.delta_N, int(diag.stage), float(np.sqrt(np.sum(w * eps * eps)))))
    return out


@dataclass
class RunResult:
    config: RunConfig
    trace: Trace
    summary: dict
    directory: Path
    alpha_errors: list = field(default_factory=list)


def summarize(cfg: RunConfig, trace: Trace) -> dict:
    """Deterministic summary of a finished run."""
    N_r = trace.N_resolved
    life = trace.N_u if trace.N_u is not None else trace.N_final
    a_final = trace.records[-1].a_smeared if trace.records else 0.0
    return {
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "engine": trace.engine,
        "model_hash": cfg.model_hash,
        "N_final": int(trace.N_final),
        "N_u": None if trace.N_u is None else int(trace.N_u),
        "failure_mode": trace.failure_mode,
        "N_r": int(N_r),
        "jumped_cycles": int(trace.jumped_cycles),
        "n_jumps": sum(1 for j in trace.jumps if j.outcome == acj_mod.JUMPED),
        "rejected_trials": int(trace.rejected_trials),
        "flagged_invalid": bool(trace.flagged_invalid),
        "hf_lock_events": len(trace.hf_lock_events),
        "omega_N": life / N_r if N_r else float("nan"),
        "a_final": float(a_final),
    }


def write_trace(cfg: RunConfig, trace: Trace, directory, sim: Simulation = None) -> RunResult:
    """Persist a trace as CSV files plus ``summary.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    det = cfg.deterministic
    recs = trace.records
    _write_csv(out / "cycles.csv", CYCLE_COLUMNS,
               [(r.N, r.max_alpha_bar, r.max_d, r.a_smeared, r.stagger_iters, 0.0 if det else r.wall_time)
                for r in recs])
    _write_csv(out / "jumps.csv", JUMP_COLUMNS,
               [(j.N_before, int(j.stage), j.target_increment, j.delta_N, j.outcome, j.observed_increment,
                 j.branch) for j in trace.jumps])
    _write_csv(out / "crack.csv", CRACK_COLUMNS,
               [(r.N, r.a_raw, r.a_smeared, r.a_interpolated, r.a_discrete) for r in recs])
    da = cfg.crack.get("growth_da") or cfg.material.ell
    _write_csv(out / "growth.csv", ["a", "dadN"], crack_growth_rate(recs, float(da)))
    _write_csv(out / "timing.csv", ["N", "wall_time"], [(r.N, r.wall_time) for r in recs])

    weights = sim.disc.wdet.ravel() if sim is not None else None
    errors = prediction_error_field(trace, weights)
    if trace.diagnostics:
        _write_csv(out / "alpha_error.csv", ["N_jump", "delta_N", "stage", "eps_alpha_l2"], errors)

    summary = summarize(cfg, trace)
    _write_csv(out / "summary.csv", ["key", "value"], [(k, summary[k]) for k in SUMMARY_KEYS])
    full = dict(summary, cpu_time=trace.wall_time, eps_alpha_l2=[e[3] for e in errors], K_Ic=cfg.K_Ic)
    with open(out / "summary.json", "w", newline="\n") as fh:
        json.dump(full, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return RunResult(cfg, trace, summary, out, errors)


def run(config, directory=None) -> RunResult:
    """Run one configuration to completion and write its trace files."""
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    sim = build_simulation(cfg)
    trace = run_engine(sim, cfg.engine)
    return write_trace(cfg, trace, directory or cfg.output, sim)


def _sweep_one(args):
    path, out = args
    t0 = time.perf_counter()
    try:
        res = run(path, out)
        return str(path), res.summary.get("N_u"), res.summary.get("failure_mode"), time.perf_counter() - t0, ""
    except Exception as exc:    # noqa: BLE001  one bad config must not stop the sweep
        return str(path), None, "error", time.perf_counter() - t0, str(exc)


def sweep(directory, workers: int = None, out_root=None) -> list:
    """Run every ``*.json`` config in ``directory`` in a process pool.

    Each run writes to ``<out_root>/<config stem>``; ``out_root`` defaults to
    ``directory``.
    """
    from concurrent.futures import ProcessPoolExecutor

    directory = Path(directory)
    out_root = Path(out_root) if out_root is not None else directory
    jobs = [(p, out_root / p.stem) for p in sorted(directory.glob("*.json"))]
    if not jobs:
        return []
    workers = workers or int(os.environ.get("PFJUMP_WORKERS", os.cpu_count() or 1))
    if workers <= 1 or len(jobs) == 1:
        return [_sweep_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_one, jobs))


# ----------------------------------------------------------------------
# Comparison
# ----------------------------------------------------------------------
@dataclass
class Metrics:
    eps_N: float
    omega_cpu: float
    omega_N: float
    eps_alpha_l2: list = field(default_factory=list)
    N_a: int = None
    N_hf: int = None


def _summary_from_csv(path: Path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["key"]] = row["value"]
    for k in ("N_final", "N_u", "N_r", "jumped_cycles", "n_jumps", "rejected_trials", "hf_lock_events",
              "schema_version"):
        if k in out:
            out[k] = int(out[k]) if out[k] != "" else None
    for k in ("omega_N", "a_final"):
        if k in out:
            out[k] = float(out[k])
    return out


def read_summary(source) -> dict:
    """Load a summary from a run directory, ``summary.json`` or ``summary.csv``.

    ``_dir`` in the result points at the run directory.
    """
    if isinstance(source, dict):
        return dict(source)
    p = Path(source)
    if p.is_dir():
        p = p / "summary.json" if (p / "summary.json").exists() else p / "summary.csv"
    if not p.exists():
        raise FileNotFoundError(f"no summary at {source}")
    if p.suffix == ".csv":
        out = _summary_from_csv(p)
        js = p.with_name("summary.json")
        if js.exists():
            out["cpu_time"] = json.loads(js.read_text()).get("cpu_time")
    else:
        out = json.loads(p.read_text())
    out["_dir"] = str(p.parent)
    return out


def _crack_checkpoint(summary: dict, a_co: float) -> int:
    d = summary.get("_dir")
    if d is None or not (Path(d) / "crack.csv").exists():
        raise ValueError("checkpoint comparison needs the run's crack.csv")
    with open(Path(d) / "crack.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if float(row["a_smeared"]) >= a_co:
                return int(row["N"])
    raise ValueError(f"run in {d} never reached a = {a_co}")


def compare(run_a, run_hf, a_co: float = None) -> Metrics:
    """Accuracy and speedup of ``run_a`` relative to the reference ``run_hf``.

    Without ``a_co`` the fatigue lives ``N_u`` are compared; with it, the
    first cycle at which the smeared crack length reaches ``a_co``.
    """
    a, hf = read_summary(run_a), read_summary(run_hf)
    ha, hh = a.get("model_hash"), hf.get("model_hash")
    if ha is not None and hh is not None and ha != hh:
        raise ValueError("runs describe different problems (model_hash differs)")
    if a_co is None:
        Na, Nh = a.get("N_u"), hf.get("N_u")
        if Na is None or Nh is None:
            raise ValueError("both runs must reach failure for a life comparison")
    else:
        Na, Nh = _crack_checkpoint(a, a_co), _crack_checkpoint(hf, a_co)
    eps = Na / Nh - 1.0
    ta, th = a.get("cpu_time"), hf.get("cpu_time")
    omega_cpu = ta / th - 1.0 if ta is not None and th else float("nan")
    omega_N = Na / a["N_r"] if a.get("N_r") else float("nan")
    return Metrics(eps, omega_cpu, omega_N, list(a.get("eps_alpha_l2") or []), Na, Nh)


def life_error(N_u: float, N_u_hf: float) -> float:
    return N_u / N_u_hf - 1.0


def resolved_speedup(N_u: float, N_r: float) -> float:
    return N_u / N_r


def cpu_speedup(cpu: float, cpu_hf: float) -> float:
    return cpu / cpu_hf - 1.0


def cycles_row_count(directory) -> int:
    with open(Path(directory) / "cycles.csv", newline="") as fh:
        return sum(1 for _ in fh) - 1


def metrics_dict(m: Metrics) -> dict:
    d = dataclasses.asdict(m)
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}
