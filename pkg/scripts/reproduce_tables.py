"""Full offline design followed by the strategy benchmark.

Writes dataset/optima/manifold/surface CSVs and the comparison table to
OUT (default ``out/tables``) and prints the optimum table, the manifold fit
and the per-wind ratio of the closed-loop power to the certified optimum.

    python3 scripts/reproduce_tables.py [--config run.ini] [--out DIR] [--workers N]
"""
import argparse
import csv
import sys
import time
from pathlib import Path

from awereel import cli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out", default="out/tables")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    out = Path(args.out)
    common = (["--config", args.config] if args.config else []) + ["--workers", str(args.workers)]

    t0 = time.perf_counter()
    code = cli.main(["design", "--out", str(out), *common])
    print(f"design finished in {time.perf_counter() - t0:.0f} s (exit {code})")
    if code != 0:
        return code
    code = cli.main(["compare", "--manifold", str(out / "manifold.csv"), "--optima", str(out / "optima.csv"),
                     "--out", str(out), *common])

    with open(out / "comparison.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    power = {(float(r["v_w"]), r["strategy"]): float(r["P_cycle_W"]) for r in rows}
    print("\nclosed-loop power relative to the certified optimum")
    for w in sorted({k[0] for k in power}):
        print(f"  v_w={w:5.2f}  {power[(w, 'optimal_Pcycle')] / power[(w, 'oracle')]:.3f}")
    return code


if __name__ == "__main__":
    sys.exit(main())
