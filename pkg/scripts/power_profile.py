"""Winch power and tether force over one periodic cycle at fixed reel speeds.

    python3 scripts/power_profile.py --wind 9 --vtrac 1.69 --vretr -5.24
"""
import argparse
from pathlib import Path

import numpy as np

from awereel.controllers import Phase
from awereel.cycle import SimConfig, Trace, simulate


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wind", type=float, default=9.0)
    ap.add_argument("--vtrac", type=float, default=1.69)
    ap.add_argument("--vretr", type=float, default=-5.24)
    ap.add_argument("--out", default="out/profile")
    args = ap.parse_args(argv)

    res = simulate(SimConfig().with_wind(args.wind), args.vtrac, args.vretr)
    last = res.final.index
    cycle = np.array(res.trace.column("cycle"))
    rows = [r for r, c in zip(res.trace.rows, cycle) if c == last]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sub = Trace()
    for r in rows:
        sub.append(r)
    sub.to_csv(out / "last_cycle.csv")

    m = res.final
    print(f"feasible={res.feasible}  P_cycle={m.p_cycle:.0f} W over {sum(m.durations.values()):.1f} s")
    for p in Phase:
        print(f"  {p.label:12s} {m.durations[p]:6.1f} s  energy {m.energies[p] / 1e3:9.1f} kJ")


if __name__ == "__main__":
    main()
