"""Command line: ``run``, ``mc``, ``calibrate`` and ``report``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import scenario as S
from .detector import DetectorConfig, chi2_inv_cdf

log = logging.getLogger("fdialab")

METRIC_ROWS = (
    ("M1.1", "rms_nominal", "RMS hand error vs nominal [m]"),
    ("M1.2", "mnd_nominal", "max hand error vs nominal [m]"),
    ("M2.1", "rms_attacker", "RMS hand error vs attacker [m]"),
    ("M2.2", "mnd_attacker", "max hand error vs attacker [m]"),
    ("M3.1", "qdot_mean", "mean |qdot| [rad/s]"),
    ("M3.2", "qdot_max", "max |qdot| [rad/s]"),
    ("M3.3", "power_mean", "mean |P_tot| [W]"),
    ("M3.4", "power_max", "max |P_tot| [W]"),
    ("M3.5", "path_length", "hand path length [m]"),
    ("M3.6", "E_inj", "defense injected energy [J]"),
    ("M3.7", "E_diss", "defense dissipated energy [J]"),
)
EMPTY = "∅"


def default_config_path() -> Path:
    return Path(str(resources.files("fdialab") / "data" / "default_config.yaml"))


def _load(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config or default_config_path())
    over = list(args.override or [])
    if getattr(args, "decimate", None) is not None:
        over.append(f"output.decimate={args.decimate}")
    if getattr(args, "seed", None) is not None:
        over.append(f"scenario.seed={args.seed}")
    if getattr(args, "T", None) is not None:
        over.append(f"scenario.T={args.T}")
    return cfgmod.apply_overrides(cfg, over)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else format(float(x), ".10g")


def write_trace(trace: dict, path: Path, decimate: int = 1) -> None:
    n = trace["q"].shape[1]
    header = list(S.TRACE_COLUMNS_SCALAR)
    cols = [trace[c] for c in header]
    for name in ("q", "qd", "u", "u_d", "u_nom_sat", "qd_tilde", "a_q"):
        header += [f"{name}_{j + 1}" for j in range(n)]
        cols += [trace[name][:, j] for j in range(n)]
    for name in ("p", "p_ref", "p_att"):
        header += [f"{name}_{ax}" for ax in "xyz"]
        cols += [trace[name][:, i] for i in range(3)]
    data = np.column_stack(cols)[::decimate]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([_fmt(v) for v in row])


def _json_clean(obj):
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, (np.floating, np.integer)):
        return _json_clean(obj.item())
    return obj


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    trace = S.run_scenario(cfg, args.scenario)
    metrics = S.compute_metrics(trace)
    write_trace(trace, out / f"{args.scenario}_trace.csv", cfg.output.decimate)
    doc = {"scenario": args.scenario, "seed": trace["meta"]["seed"], "runs": 1, "metrics": metrics.to_dict()}
    (out / f"{args.scenario}_metrics.json").write_text(json.dumps(_json_clean(doc), indent=2) + "\n")
    print(f"{args.scenario}: RMS {metrics.rms_nominal:.4g} m, alarms {metrics.alarm_count}, written to {out}")
    return 0


def cmd_mc(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    sid = args.scenario
    runs = args.runs or (cfg.scenario.mc_runs_a if sid.startswith("A") else cfg.scenario.mc_runs_b)
    res = S.monte_carlo(cfg, sid, runs)
    keys = list(next(r for r in res.runs if r is not None).keys()) if res.n_ok else []
    with open(out / f"{sid}_mc_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "ok"] + keys)
        for s, r in zip(res.seeds, res.runs):
            w.writerow([s, int(r is not None)] + ([_fmt(r[k]) for k in keys] if r else [""] * len(keys)))
    doc = {"scenario": sid, "seed": res.seeds[0], "runs": runs, "succeeded": res.n_ok,
           "failures": [{"seed": s, "error": e} for s, e in res.failures],
           "metrics": res.mean, "stderr": res.stderr}
    (out / f"{sid}_metrics.json").write_text(json.dumps(_json_clean(doc), indent=2) + "\n")
    print(f"{sid}: {res.n_ok}/{runs} runs succeeded, mean RMS {res.mean.get('rms_nominal', float('nan')):.4g} m")
    return 0 if res.n_ok == runs else 1


def calibration_table(dof: int, alphas=(), arls=(), taus=(), Ts: float | None = None) -> list[dict]:
    rows = []
    cfgs = [DetectorConfig.from_alpha(a, dof) for a in alphas]
    cfgs += [DetectorConfig.from_arl(n, dof) for n in arls]
    cfgs += [DetectorConfig.from_tau(t, dof) for t in taus]
    for c in cfgs:
        row = {"tau": c.tau, "alpha_F": c.alpha_F, "ARL_steps": c.arl}
        if Ts is not None:
            row["ARL_hours"] = c.arl * Ts / 3600.0
        rows.append(row)
    return rows


def cmd_calibrate(args) -> int:
    if not (args.alpha or args.arl or args.tau or args.quantile):
        args.tau = [DetectorConfig.from_tau().tau]
    rows = calibration_table(args.dof, args.alpha or (), args.arl or (), args.tau or (), args.Ts)
    for r in rows:
        extra = f"  ARL={r['ARL_hours']:.6g} h" if "ARL_hours" in r else ""
        print(f"tau={r['tau']:.6f}  alpha_F={r['alpha_F']:.6e}  ARL={r['ARL_steps']:.6g} steps{extra}")
    for p in args.quantile or ():
        print(f"chi2_inv_cdf({p}, {args.dof}) = {chi2_inv_cdf(p, args.dof):.6f}")
    return 0


def load_metrics_dir(run_dir: Path) -> tuple[dict, list[str]]:
    found, errors = {}, []
    for sid in S.TABLE1:
        path = run_dir / f"{sid}_metrics.json"
        if not path.exists():
            continue
        try:
            doc = json.loads(path.read_text())
            found[sid] = doc["metrics"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            errors.append(f"{path}: malformed metrics file ({exc})")
    return found, errors


def report_table(found: dict) -> str:
    ids = list(found)
    head = ["ID", "Metric"] + ids
    lines = [head]
    for mid, key, label in METRIC_ROWS:
        row = [mid, label]
        for sid in ids:
            v = found[sid].get(key)
            row.append(EMPTY if v is None else f"{v:.4g}")
        lines.append(row)
    widths = [max(len(r[i]) for r in lines) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in lines)


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        print(f"error: {run_dir} is not a directory", file=sys.stderr)
        return 2
    found, errors = load_metrics_dir(run_dir)
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    if not found:
        print(f"error: no scenario metrics files (<ID>_metrics.json) in {run_dir}", file=sys.stderr)
        return 2
    missing = [s for s in S.TABLE1 if s not in found]
    print(report_table(found))
    if missing:
        print(f"missing scenarios: {', '.join(missing)}")
    return 1 if errors else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fdialab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, mc=False):
        p.add_argument("--config", help="YAML run config (default: packaged)")
        p.add_argument("--scenario", required=True, choices=list(S.TABLE1))
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--decimate", type=int)
        p.add_argument("--T", type=int, help="horizon in steps")
        p.add_argument("--override", action="append", metavar="SECTION.KEY=VALUE")
        if mc:
            p.add_argument("--runs", type=int)

    common(sub.add_parser("run", help="simulate one scenario"))
    common(sub.add_parser("mc", help="Monte Carlo over seeds"), mc=True)
    c = sub.add_parser("calibrate", help="map alpha_F / ARL / tau")
    c.add_argument("--alpha", type=float, action="append")
    c.add_argument("--arl", type=float, action="append", help="ARL in steps")
    c.add_argument("--tau", type=float, action="append")
    c.add_argument("--quantile", type=float, action="append", help="print the chi-square quantile")
    c.add_argument("--dof", type=int, default=14)
    c.add_argument("--Ts", type=float, default=0.01)
    r = sub.add_parser("report", help="Table of metrics across scenario outputs")
    r.add_argument("run_dir")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "mc": cmd_mc, "calibrate": cmd_calibrate, "report": cmd_report}
    try:
        return handlers[args.cmd](args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except S.ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
