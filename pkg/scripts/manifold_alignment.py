"""How well do per-wind optima line up on F = K v^2?

For each wind value, scans the reel-out speed on a 1-D line (reel-in speed
held at the certified value), fits a parabola to the cycle power (the top is
flat and single runs jitter by ~1%, so the raw argmax is unreliable) and
reports the vertex, its ratio to the wind speed and the traction force there
(linear fit in the reel-out speed). The through-origin
fit of those refined optima shows how much of the design-pipeline R^2 gap
comes from surrogate error and how much from the simulator itself.

    python3 scripts/manifold_alignment.py --optima out/tables/optima.csv
"""
import argparse
import csv

import numpy as np

from awereel.cycle import SimConfig
from awereel.design import evaluate_pair, fit_through_origin


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--optima", required=True)
    ap.add_argument("--span", type=float, default=0.25, help="relative half-width of the reel-out scan")
    ap.add_argument("--points", type=int, default=11)
    args = ap.parse_args(argv)

    with open(args.optima, newline="") as fh:
        optima = [r for r in csv.DictReader(fh) if int(r["verified"])]
    cfg = SimConfig()
    refined = []
    for o in optima:
        w, vt0, vr = float(o["v_w"]), float(o["v_trac"]), float(o["v_retr"])
        rows = [evaluate_pair(cfg, w, vt, vr) for vt in np.linspace((1 - args.span) * vt0,
                                                                   (1 + args.span) * vt0, args.points)]
        ok = [r for r in rows if r.feasible]
        v = np.array([r.v_trac for r in ok])
        a, b, _ = np.polyfit(v, [r.power for r in ok], 2)
        v_best = float(np.clip(-b / (2 * a), v.min(), v.max())) if a < 0 else float(v[np.argmax([r.power for r in ok])])
        f_best = float(np.polyval(np.polyfit(v, [r.f_trac for r in ok], 1), v_best))
        refined.append((v_best, f_best))
        print(f"v_w={w:5.2f}  surrogate v_trac*={vt0:.3f} ({vt0 / w:.3f} v_w)  "
              f"line-scan vertex {v_best:.3f} ({v_best / w:.3f} v_w)  F_trac={f_best:.0f} N")
    for name, pts in (("surrogate optima", [(float(o["v_trac"]), float(o["F_trac_N"])) for o in optima]),
                      ("line-scan optima", refined)):
        k, r2 = fit_through_origin([v ** 2 for v, _ in pts], [f for _, f in pts])
        print(f"{name}: K_trac={k:.1f}  R2={r2:.4f}")


if __name__ == "__main__":
    main()
