"""Closed-loop convergence of the reeling law from displaced references.

Starts both references a given fraction away from the certified optimum at
one wind speed and records per-cycle references, forces and power, plus the
10 Hz convergence trace, for each update mode.

    python3 scripts/convergence.py --manifold out/tables/manifold.csv --optima out/tables/optima.csv
"""
import argparse
import csv
from dataclasses import replace
from pathlib import Path

from awereel.compare import run_online
from awereel.controllers import Phase, ReelRefState
from awereel.cycle import TRACE_COLUMNS, SimConfig, write_rows
from awereel.design import read_manifold


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--manifold", required=True)
    ap.add_argument("--optima", required=True)
    ap.add_argument("--wind", type=float, default=6.5)
    ap.add_argument("--offset", type=float, default=0.3, help="relative displacement of the initial references")
    ap.add_argument("--cycles", type=int, default=10)
    ap.add_argument("--out", default="out/convergence")
    args = ap.parse_args(argv)

    manifold = read_manifold(args.manifold)
    with open(args.optima, newline="") as fh:
        opt = next(r for r in csv.DictReader(fh) if float(r["v_w"]) == args.wind)
    start = ReelRefState(v_trac=(1 + args.offset) * float(opt["v_trac"]),
                         v_retr=(1 + args.offset) * float(opt["v_retr"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"optimum at v_w={args.wind:g}: ({float(opt['v_trac']):.3f}, {float(opt['v_retr']):.3f}), "
          f"P={float(opt['P_cycle_W']):.0f} W")

    for mode in ("proportional", "fixed"):
        res = run_online(SimConfig(), manifold, replace(start, mode=mode), args.cycles, v_w=args.wind,
                         record_trace=True)
        rows = []
        print(f"\n{mode} update")
        for m, (vt, vr) in zip(res.cycles, res.refs):
            v = m.mean_speed(Phase.TRACTION)
            err = (m.f_trac - manifold.k_trac * v ** 2) / (manifold.k_trac * v ** 2)
            rows.append({"cycle": m.index, "v_trac_ref": vt, "v_retr_ref": vr, "P_cycle_W": m.p_cycle,
                         "F_trac_N": m.f_trac, "F_retr_N": m.f_retr, "trac_manifold_error": err})
            print(f"  cycle {m.index}: refs ({vt:.3f}, {vr:.3f})  P={m.p_cycle:7.0f} W  "
                  f"traction error {100 * err:+.1f}%")
        write_rows(out / f"cycles_{mode}.csv", tuple(rows[0]), rows)
        write_rows(out / f"trace_{mode}.csv", TRACE_COLUMNS, [dict(zip(TRACE_COLUMNS, r)) for r in res.trace.rows])


if __name__ == "__main__":
    main()
