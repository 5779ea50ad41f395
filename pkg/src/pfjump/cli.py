"""Command-line entry point: ``pfjump {run,sweep,compare,calibrate,profiles}``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path


def _cmd_run(args):
    from .report import ConfigError, run

    try:
        res = run(args.config, args.out)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    s = res.summary
    print(f"{s['name']}: engine={s['engine']} N_final={s['N_final']} N_u={s['N_u']} "
          f"mode={s['failure_mode']} N_r={s['N_r']} -> {res.directory}")
    return 0


def _cmd_sweep(args):
    from .report import sweep

    rows = sweep(args.directory, args.workers, args.out)
    if not rows:
        print(f"no *.json configs in {args.directory}", file=sys.stderr)
        return 2
    bad = 0
    for path, N_u, mode, wall, err in rows:
        print(f"{path}: N_u={N_u} mode={mode} wall={wall:.1f}s {err}".rstrip())
        bad += mode == "error"
    return 1 if bad else 0


def _cmd_compare(args):
    from .report import compare, metrics_dict

    m = compare(args.summary_a, args.summary_hf, args.a_co)
    print(json.dumps(metrics_dict(m), indent=2))
    return 0


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


def _cmd_profiles(args):
    import numpy as np

    from . import profile1d as p1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rhos = p1.default_rho_grid(args.n_rho)
    rows = []
    for r in rhos:
        if r >= 1.0:
            continue
        prof = p1.localized_profile(args.model, float(r))
        for z, d in zip(prof.zeta_grid, prof.d_values):
            rows.append((float(r), float(z), float(d)))
    _write_rows(out / f"profiles_{args.model}.csv", ["rho", "zeta", "d"], rows)
    env, dev = p1.irreversible_envelope(args.model, rhos)
    _write_rows(out / f"envelope_{args.model}.csv", ["zeta", "d_envelope", "d_optimal"],
                [(float(z), float(a), float(b)) for z, a, b in zip(env.zeta, env.d_env, env.d_opt)])
    hom = p1.homogeneous_solution(args.model)
    _write_rows(out / f"envelope_{args.model}_summary.csv", ["key", "value"],
                [("d_hom", float(hom.d_hom)), ("area_envelope", float(env.area_env)),
                 ("area_optimal", float(env.area_opt)), ("area_deviation", float(dev))])
    print(f"{args.model}: area deviation {dev:+.4f} ({np.size(rows)//3} profile points) -> {out}")
    return 0


def _cmd_calibrate(args):
    from . import profile1d as p1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    settings = p1.CalibrationSettings(height=args.height, max_steps=args.max_steps)
    table, cells = p1.calibrate_corrections(args.model, args.ell, args.ell_over_h, settings)
    table.write_csv(out / f"corrections_{args.model}.csv")
    _write_rows(out / f"calibration_cells_{args.model}.csv",
                ["model", "ell", "ell_over_h", "c_tip", "c_ext", "ok", "message"],
                [(c.model, float(c.ell), float(c.ell_over_h), float(c.c_tip), float(c.c_ext), c.ok, c.message)
                 for c in cells])
    for (m, k), (ct, ce) in sorted(table.entries.items()):
        print(f"{m} ell/h={k}: c_tip={ct:.3f} c_ext={ce:.3f}")
    return 0 if table.entries else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pfjump", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one configuration")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="run every *.json config of a directory")
    s.add_argument("directory")
    s.add_argument("--workers", type=int)
    s.add_argument("--out", help="root of the per-run output directories")
    s.set_defaults(func=_cmd_sweep)

    c = sub.add_parser("compare", help="accuracy and speedup metrics of two runs")
    c.add_argument("summary_a")
    c.add_argument("summary_hf")
    c.add_argument("--a-co", type=float, default=None, help="compare at this crack length instead of N_u")
    c.set_defaults(func=_cmd_compare)

    k = sub.add_parser("calibrate", help="fit tip/extension correction factors on pull strips")
    k.add_argument("model", choices=["AT1", "AT2"])
    k.add_argument("--ell", type=float, nargs="+", default=[0.02])
    k.add_argument("--height", type=float, default=1.0, help="strip height (width is 1)")
    k.add_argument("--ell-over-h", type=float, nargs="+", default=[2.0, 3.0, 4.0])
    k.add_argument("--max-steps", type=int, default=400)
    k.add_argument("--out", default="calibration")
    k.set_defaults(func=_cmd_calibrate)

    f = sub.add_parser("profiles", help="1D localized profiles and their irreversible envelope")
    f.add_argument("model", choices=["AT1", "AT2"])
    f.add_argument("--n-rho", type=int, default=200)
    f.add_argument("--out", default="profiles")
    f.set_defaults(func=_cmd_profiles)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
