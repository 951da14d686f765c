"""Command-line entry point: ``awereel {simulate,design,online,compare}``.

Exit codes: 0 success, 1 configuration/input error, 2 infeasible run,
3 empty feasible set.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .compare import compare_strategies, format_table, run_online, write_report
from .config import ConfigError, RunConfig, load_config
from .controllers import ManifoldModel, Phase
from .cycle import METRICS_COLUMNS, TRACE_COLUMNS, metrics_row, simulate, write_rows
from .design import MANIFOLD_COLUMNS, OPTIMA_COLUMNS, NoFeasibleRegion, OptimalPoint, run_design, surface_rows, write_csv

log = logging.getLogger("awereel")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_EMPTY = 0, 1, 2, 3

CONVERGENCE_COLUMNS = ("time_s", "cycle", "phase", "v_ref_mps", "reel_speed_mps", "v2_m2ps2",
                       "tether_force_N", "F_star_N")
CYCLE_COLUMNS = ("cycle", "v_w", "v_trac_ref", "v_retr_ref", "P_cycle_W", "P_trac_W", "P_retr_W",
                 "F_trac_N", "F_retr_N", "v_trac_mean", "v_retr_mean", "feasible")


class InputError(Exception):
    pass


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _outdir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _wind(args, cfg: RunConfig) -> float:
    v_w = cfg.plant.env.wind_speed if args.wind is None else args.wind
    if not v_w > 0:
        raise InputError(f"--wind: must be positive, got {v_w}")
    return v_w


def _manifold(path) -> ManifoldModel:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"--manifold: {path}: file not found")
    with open(p, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "K_trac" not in rows[0] or "K_retr" not in rows[0]:
        raise InputError(f"--manifold: {path}: expected columns K_trac, K_retr")
    try:
        return ManifoldModel(float(rows[0]["K_trac"]), float(rows[0]["K_retr"]))
    except ValueError as exc:
        raise InputError(f"--manifold: {exc}") from None


def cmd_simulate(args) -> int:
    cfg = _config(args)
    lo, hi = cfg.plant.winch.speed_limits
    v_w = _wind(args, cfg)
    vt = cfg.reel.v_trac if args.vtrac is None else args.vtrac
    vr = cfg.reel.v_retr if args.vretr is None else args.vretr
    if not 0 < vt <= hi:
        raise InputError(f"--vtrac: reel-out speed must be in (0, {hi}] m/s, got {vt}")
    if not lo <= vr < 0:
        raise InputError(f"--vretr: reel-in speed must be negative and >= {lo} m/s, got {vr}")
    out = _outdir(args, cfg)
    res = simulate(cfg.sim.with_wind(v_w), vt, vr, n_cycles=args.cycles)
    res.trace.to_csv(out / "trace.csv")
    write_rows(out / "metrics.csv", METRICS_COLUMNS, [metrics_row(v_w, vt, vr, m) for m in res.cycles])
    m = res.final
    print(f"v_w={v_w:g} m/s  v_trac={vt:g}  v_retr={vr:g}  cycles={len(res.cycles)}  "
          f"P_cycle={m.p_cycle:.1f} W  feasible={res.feasible}{'' if res.feasible else ' (' + res.reason + ')'}")
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def cmd_design(args) -> int:
    cfg = _config(args)
    out = _outdir(args, cfg)
    workers = args.workers or cfg.design.workers
    d = cfg.design
    res = run_design(cfg.sweep, cfg.sim, sigma=d.sigma, mu=d.mu, max_iter=d.max_iter, workers=workers)
    res.dataset.to_csv(out / "dataset.csv")
    write_csv(out / "optima.csv", OPTIMA_COLUMNS, [p.as_dict() for p in res.optima])
    for w, s in res.surfaces.items():
        write_csv(out / f"surface_{w:g}.csv", ("v_trac", "v_retr", "P_hat_W"), surface_rows(s))
    for p in res.optima:
        flag = "verified" if p.verified else f"UNVERIFIED ({p.diagnostic})"
        print(f"v_w={p.v_w:5.2f}  v_trac*={p.v_trac:6.3f}  v_retr*={p.v_retr:7.3f}  "
              f"P={p.p_cycle:9.1f} W  F_trac={p.f_trac:8.1f} N  F_retr={p.f_retr:7.1f} N  {flag}")
    if res.manifold is None:
        print("no feasible region: fewer than 2 wind slices produced a verified optimum", file=sys.stderr)
        return EXIT_EMPTY
    write_csv(out / "manifold.csv", MANIFOLD_COLUMNS, [res.manifold.as_dict()])
    m = res.manifold
    print(f"K_trac={m.model.k_trac:.3f}  K_retr={m.model.k_retr:.3f}  R2_trac={m.r2_trac:.4f}  "
          f"R2_retr={m.r2_retr:.4f}")
    return EXIT_OK


def _parse_steps(text: str) -> list[tuple[int, float]]:
    steps = []
    for item in text.split(","):
        try:
            c, v = item.split(":")
            steps.append((int(c), float(v)))
        except ValueError:
            raise InputError(f"--wind-step: expected CYCLE:SPEED[,CYCLE:SPEED...], got {text!r}") from None
    return steps


def cmd_online(args) -> int:
    cfg = _config(args)
    manifold = _manifold(args.manifold)
    v_w = _wind(args, cfg)
    steps = _parse_steps(args.wind_step) if args.wind_step else None
    ref = cfg.reel
    if args.vtrac is not None or args.vretr is not None:
        ref = replace(ref, v_trac=args.vtrac if args.vtrac is not None else ref.v_trac,
                      v_retr=args.vretr if args.vretr is not None else ref.v_retr)
        if not ref.v_trac > 0 or not ref.v_retr < 0:
            raise InputError("--vtrac/--vretr: need vtrac > 0 > vretr")
    out = _outdir(args, cfg)
    n = args.cycles or cfg.compare.online_cycles
    res = run_online(cfg.sim, manifold, ref, n, v_w=v_w, cycle_winds=steps, record_trace=True)
    res.trace.to_csv(out / "trace.csv")
    rows = []
    for r in res.trace.rows:
        d = dict(zip(TRACE_COLUMNS, r))
        d["v2_m2ps2"] = d["reel_speed_mps"] ** 2
        rows.append(d)
    write_rows(out / "convergence.csv", CONVERGENCE_COLUMNS, rows)
    winds = dict(steps or [])
    cur = v_w
    crow = []
    for m, (vt, vr) in zip(res.cycles, res.refs):
        cur = winds.get(m.index, cur)
        crow.append({"cycle": m.index, "v_w": cur, "v_trac_ref": vt, "v_retr_ref": vr, "P_cycle_W": m.p_cycle,
                     "P_trac_W": m.p_trac, "P_retr_W": m.p_retr, "F_trac_N": m.f_trac, "F_retr_N": m.f_retr,
                     "v_trac_mean": m.mean_speed(Phase.TRACTION), "v_retr_mean": m.mean_speed(Phase.RETRACTION),
                     "feasible": int(m.feasible)})
        print(f"cycle {m.index}: v_w={cur:g}  refs=({vt:.3f}, {vr:.3f})  P_cycle={m.p_cycle:.1f} W  "
              f"F_trac={m.f_trac:.0f} N  feasible={m.feasible}")
    write_rows(out / "cycles.csv", CYCLE_COLUMNS, crow)
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def _read_optima(path) -> list[OptimalPoint]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"--optima: {path}: file not found")
    out = []
    with open(p, newline="") as fh:
        for d in csv.DictReader(fh):
            out.append(OptimalPoint(float(d["v_w"]), float(d["v_trac"]), float(d["v_retr"]), float(d["P_hat_W"]),
                                    float(d["P_cycle_W"]), float(d["F_trac_N"]), float(d["F_retr_N"]),
                                    bool(int(d["verified"])), int(d["iterations"])))
    return out


def cmd_compare(args) -> int:
    cfg = _config(args)
    manifold = _manifold(args.manifold)
    if args.optima:
        optima = _read_optima(args.optima)
    else:
        d = cfg.design
        optima = run_design(cfg.sweep, cfg.sim, sigma=d.sigma, mu=d.mu, max_iter=d.max_iter,
                            workers=args.workers or d.workers).optima
    out = _outdir(args, cfg)
    winds = [args.wind] if args.wind is not None else list(cfg.sweep.winds)
    c = cfg.compare
    rows = compare_strategies(cfg.sim, manifold, cfg.reel, winds, optima, c.fast_recovery_speed,
                              c.trac_fractions, c.online_cycles)
    write_report(out / "comparison.csv", rows)
    table = format_table(rows)
    (out / "comparison.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="awereel", description="Pumping-cycle kite power simulation and design.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI-style configuration file (defaults if omitted)")
        sp.add_argument("--out", help="output directory (default: [output] directory)")

    s = sub.add_parser("simulate", help="run fixed reel speeds to periodicity")
    common(s)
    s.add_argument("--wind", type=float)
    s.add_argument("--vtrac", type=float)
    s.add_argument("--vretr", type=float)
    s.add_argument("--cycles", type=int, help="fixed number of cycles instead of running to periodicity")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("design", help="sweep, fit, certify and regress the optimal manifold")
    common(s)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("online", help="closed loop with the force-feedback reeling law")
    common(s)
    s.add_argument("--manifold", required=True)
    s.add_argument("--wind", type=float)
    s.add_argument("--wind-step", help="wind steps CYCLE:SPEED[,...] applied at cycle starts")
    s.add_argument("--vtrac", type=float, help="initial reel-out reference")
    s.add_argument("--vretr", type=float, help="initial reel-in reference")
    s.add_argument("--cycles", type=int)
    s.set_defaults(func=cmd_online)

    s = sub.add_parser("compare", help="benchmark reeling strategies")
    common(s)
    s.add_argument("--manifold", required=True)
    s.add_argument("--optima", help="optima.csv from 'design' (otherwise the design is re-run)")
    s.add_argument("--wind", type=float, help="single wind value instead of the sweep winds")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoFeasibleRegion as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY


if __name__ == "__main__":
    sys.exit(main())
