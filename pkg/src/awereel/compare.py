"""Benchmark of reeling strategies at a set of wind speeds.

* ``optimal_Pcycle`` - the force-feedback law on the fitted manifold (closed loop, wind unknown)
* ``optimal_Ptrac``  - reel-out speed maximising traction power, same reel-in speed
* ``fast_recovery``  - same reel-out speed, reel-in at the configured cap
* ``oracle``         - certified optimum of the design pipeline (wind known)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

from .controllers import ManifoldModel, Phase, ReelRefState
from .cycle import INFEASIBLE_POWER, RunResult, SimConfig, simulate
from .design import OptimalPoint, evaluate_pair, write_csv

log = logging.getLogger(__name__)

STRATEGIES = ("optimal_Pcycle", "optimal_Ptrac", "fast_recovery", "oracle")
REPORT_COLUMNS = ("v_w", "strategy", "v_trac", "v_retr", "P_cycle_W", "feasible", "best")


@dataclass
class StrategyResult:
    v_w: float
    strategy: str
    v_trac: float
    v_retr: float
    p_cycle: float
    feasible: int
    best: int = 0

    def as_dict(self) -> dict:
        return {"v_w": self.v_w, "strategy": self.strategy, "v_trac": self.v_trac, "v_retr": self.v_retr,
                "P_cycle_W": self.p_cycle, "feasible": self.feasible, "best": self.best}


def run_online(cfg: SimConfig, manifold: ManifoldModel, ref: ReelRefState, n_cycles: int,
               v_w: float | None = None, cycle_winds=None, record_trace: bool = False) -> RunResult:
    """Closed loop with the force-feedback reeling law for ``n_cycles`` cycles."""
    if v_w is not None:
        cfg = cfg.with_wind(v_w)
    return simulate(cfg, manifold=manifold, ref=ref, n_cycles=n_cycles, record_trace=record_trace,
                    cycle_winds=cycle_winds)


def operating_point(res: RunResult) -> tuple[float, float, float]:
    """(mean reel-out speed, mean reel-in speed, P_cycle) of the last cycle."""
    m = res.final
    p = m.p_cycle if res.feasible else INFEASIBLE_POWER
    return m.mean_speed(Phase.TRACTION), m.mean_speed(Phase.RETRACTION), p


def compare_at_wind(cfg: SimConfig, manifold: ManifoldModel, ref: ReelRefState, v_w: float,
                    oracle: OptimalPoint | None, fast_recovery_speed: float,
                    trac_fractions, online_cycles: int) -> list[StrategyResult]:
    res = run_online(cfg, manifold, ref, online_cycles, v_w=v_w)
    vt, vr, p = operating_point(res)
    rows = [StrategyResult(v_w, "optimal_Pcycle", vt, vr, p, int(res.feasible))]
    hi = cfg.plant.winch.speed_limits[1]

    best = None
    for frac in trac_fractions:
        cand = frac * v_w
        if cand > hi:
            continue
        row = evaluate_pair(cfg, v_w, cand, vr)
        if row.feasible and (best is None or row.p_trac > best[0]):
            best = (row.p_trac, row)
    if best is None:
        rows.append(StrategyResult(v_w, "optimal_Ptrac", float("nan"), vr, INFEASIBLE_POWER, 0))
    else:
        r = best[1]
        rows.append(StrategyResult(v_w, "optimal_Ptrac", r.v_trac, r.v_retr, r.power, 1))

    row = evaluate_pair(cfg, v_w, vt, fast_recovery_speed)
    rows.append(StrategyResult(v_w, "fast_recovery", vt, fast_recovery_speed, row.power, row.feasible))

    if oracle is not None and oracle.verified:
        rows.append(StrategyResult(v_w, "oracle", oracle.v_trac, oracle.v_retr, oracle.p_cycle, 1))
    else:
        rows.append(StrategyResult(v_w, "oracle", float("nan"), float("nan"), INFEASIBLE_POWER, 0))

    # exactly one winner per wind value; ties go to the earlier strategy
    winner = max(range(len(rows)), key=lambda i: (rows[i].p_cycle, -i))
    rows[winner].best = 1
    return rows


def compare_strategies(cfg: SimConfig, manifold: ManifoldModel, ref: ReelRefState, winds, optima,
                       fast_recovery_speed: float, trac_fractions, online_cycles: int) -> list[StrategyResult]:
    by_wind = {p.v_w: p for p in optima}
    out = []
    for w in winds:
        out += compare_at_wind(cfg, manifold, ref, w, by_wind.get(w), fast_recovery_speed,
                               trac_fractions, online_cycles)
    return out


def write_report(path, rows: list[StrategyResult]):
    write_csv(path, REPORT_COLUMNS, [r.as_dict() for r in rows])


def format_table(rows: list[StrategyResult]) -> str:
    """Plain-text table: wind speed, strategy, reeling speeds, cycle power."""
    lines = [f"{'v_w [m/s]':>9}  {'strategy':<15} {'v_trac':>7} {'v_retr':>7} {'P_cycle [kW]':>13}",
             "-" * 57]
    last = None
    for r in rows:
        w = f"{r.v_w:9.2f}" if r.v_w != last else " " * 9
        last = r.v_w
        p = f"{r.p_cycle / 1e3:13.2f}" if r.feasible else f"{'infeasible':>13}"
        mark = " *" if r.best else ""
        lines.append(f"{w}  {r.strategy:<15} {r.v_trac:7.2f} {r.v_retr:7.2f} {p}{mark}")
    return "\n".join(lines)

