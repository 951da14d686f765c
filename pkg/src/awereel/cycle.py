"""Closed-loop pumping-cycle simulation and per-cycle metrics.

The multi-rate loop runs on one timeline:

* physics and the winch speed loop every integrator step,
* supervisor, flight controller and trace sampling at ``control_rate``,
* the force-feedback reeling law at ``reel_rate`` (online mode only).

A cycle starts at the transition-2 -> traction switch. The first simulated
cycle starts from an idealised state and is treated as a transient.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import physics as ph
from .controllers import (FlightConfig, FlightState, ManifoldModel, Phase, ReelRefState,
                          SupervisorConfig, SupervisorState, Telemetry, WinchLoopGains, bearing,
                          eight_target, flight_command, online_reel_reference, supervisor_step)
from .params import PlantParams

log = logging.getLogger(__name__)

INFEASIBLE_POWER = -1.0e6

# the kite flies at reduced angle of attack while reeling in
DEPOWERED_PHASES = (Phase.RETRACTION,)

TRACE_COLUMNS = ("time_s", "kite_x", "kite_y", "kite_z", "tether_force_N", "reel_speed_mps",
                 "winch_power_W", "phase", "v_ref_mps", "F_star_N", "cycle")

METRICS_COLUMNS = ("v_w", "v_trac", "v_retr", "P_cycle_W", "P_trac_W", "P_retr_W", "F_trac_N",
                   "F_retr_N", "dur_trac_s", "dur_retr_s", "feasible")


@dataclass(frozen=True)
class ConstraintSet:
    max_force: float = 60_000.0
    min_elevation: float = math.radians(6)
    max_elevation: float = math.radians(89)
    max_azimuth: float = math.radians(100)
    speed_limits: tuple[float, float] = (-8.0, 6.0)
    speed_margin: float = 1.0
    max_cycle_duration: float = 900.0

    def __post_init__(self):
        if self.max_force <= 0 or self.max_cycle_duration <= 0 or self.max_azimuth <= 0:
            raise ValueError("constraints must be positive")


@dataclass(frozen=True)
class SimConfig:
    plant: PlantParams = field(default_factory=PlantParams)
    supervisor: SupervisorConfig = field(default_factory=SupervisorConfig)
    flight: FlightConfig = field(default_factory=FlightConfig)
    winch_gains: WinchLoopGains = field(default_factory=WinchLoopGains)
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    dt: float = 1e-3
    control_rate: float = 10.0
    reel_rate: float = 1.0
    max_cycles: int = 10
    periodicity_tol: float = 0.02
    initial_elevation: float = math.radians(25)
    initial_speed_factor: float = 3.5

    def with_wind(self, v_w: float) -> "SimConfig":
        return replace(self, plant=replace(self.plant, env=replace(self.plant.env, wind_speed=float(v_w))))


@dataclass
class CycleMetrics:
    index: int
    p_cycle: float = 0.0
    p_trac: float = 0.0
    p_retr: float = 0.0
    f_trac: float = 0.0
    f_retr: float = 0.0
    durations: dict = field(default_factory=lambda: {p: 0.0 for p in Phase})
    energies: dict = field(default_factory=lambda: {p: 0.0 for p in Phase})
    force_integrals: dict = field(default_factory=lambda: {p: 0.0 for p in Phase})
    speed_integrals: dict = field(default_factory=lambda: {p: 0.0 for p in Phase})
    work: float = 0.0
    feasible: int = 1
    reason: str = ""
    complete: bool = False

    @property
    def duration(self) -> float:
        return sum(self.durations.values())

    @property
    def energy(self) -> float:
        return sum(self.energies.values())

    def mean_speed(self, phase: Phase) -> float:
        d = self.durations[phase]
        return self.speed_integrals[phase] / d if d > 0 else 0.0

    def finalize(self):
        d = self.durations
        total = self.duration
        self.p_cycle = self.energy / total if total > 0 else 0.0
        tr, rt = Phase.TRACTION, Phase.RETRACTION
        self.p_trac = self.energies[tr] / d[tr] if d[tr] > 0 else 0.0
        self.p_retr = self.energies[rt] / d[rt] if d[rt] > 0 else 0.0
        self.f_trac = self.force_integrals[tr] / d[tr] if d[tr] > 0 else 0.0
        self.f_retr = self.force_integrals[rt] / d[rt] if d[rt] > 0 else 0.0
        return self


class Trace:
    """Trace samples at the control rate, column-oriented."""

    def __init__(self):
        self.rows: list[tuple] = []

    def append(self, row):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        i = TRACE_COLUMNS.index(name)
        if name == "phase":
            return np.array([r[i] for r in self.rows], dtype=object)
        return np.array([r[i] for r in self.rows], dtype=float)

    def slice_cycle(self, cycle: int) -> "Trace":
        out = Trace()
        out.rows = [r for r in self.rows if r[-1] == cycle]
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.rows:
                w.writerow([fmt(v) for v in r])


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# metrics helpers


def average_phase_force(trace: Trace, phase: Phase | str) -> float:
    """Time-weighted mean tether force over the samples of ``phase``.

    Each sample holds until the next one (trapezoidal weights on the
    sampled record).
    """
    label = phase.label if isinstance(phase, Phase) else str(phase)
    t = trace.column("time_s")
    f = trace.column("tether_force_N")
    mask = trace.column("phase") == label
    if not mask.any():
        raise ValueError(f"trace contains no {label!r} samples")
    idx = np.flatnonzero(mask)
    # contiguous run(s) of the phase; integrate each with the trapezoid rule
    total = 0.0
    span = 0.0
    runs = np.split(idx, np.flatnonzero(np.diff(idx) != 1) + 1)
    for run in runs:
        if len(run) == 1:
            continue
        total += np.trapezoid(f[run], t[run])
        span += t[run[-1]] - t[run[0]]
    if span == 0.0:
        return float(f[idx].mean())
    return float(total / span)


def detect_periodicity(history: list[CycleMetrics], rel_tol: float = 0.02) -> bool:
    """Last two cycles agree in power and in traction/retraction/total durations."""
    if len(history) < 2:
        return False
    a, b = history[-2], history[-1]

    def close(x, y):
        return abs(y - x) <= rel_tol * abs(x)

    if not close(a.p_cycle, b.p_cycle):
        return False
    for p in (Phase.TRACTION, Phase.RETRACTION):
        if not close(a.durations[p], b.durations[p]):
            return False
    return close(a.duration, b.duration)


def sample_violation(elevation, azimuth, force, reel_speed, constraints: ConstraintSet) -> str:
    """Name of the first violated constraint for one sample, or ''."""
    c = constraints
    if force > c.max_force:
        return "max_force"
    if elevation < c.min_elevation:
        return "min_elevation"
    if elevation > c.max_elevation:
        return "max_elevation"
    if abs(azimuth) > c.max_azimuth:
        return "max_azimuth"
    lo, hi = c.speed_limits
    if not (lo - c.speed_margin <= reel_speed <= hi + c.speed_margin):
        return "speed_limit"
    return ""


def check_feasibility(trace: Trace, constraints: ConstraintSet, periodic: bool = True) -> tuple[int, str]:
    """Return (s, reason): s = 1 iff every sample is admissible and the run was periodic."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    x, y, z = trace.column("kite_x"), trace.column("kite_y"), trace.column("kite_z")
    el = np.arctan2(z, np.hypot(x, y))
    az = np.arctan2(y, x)
    f = trace.column("tether_force_N")
    v = trace.column("reel_speed_mps")
    for i in range(len(trace)):
        reason = sample_violation(el[i], az[i], f[i], v[i], constraints)
        if reason:
            return 0, reason
    if not periodic:
        return 0, "not_periodic"
    return 1, ""


# ---------------------------------------------------------------------------
# closed-loop engine


@dataclass
class RunResult:
    cycles: list[CycleMetrics]
    trace: Trace
    final: CycleMetrics
    feasible: int
    reason: str
    periodic: bool
    refs: list[tuple[float, float]] = field(default_factory=list)

    @property
    def p_cycle(self) -> float:
        return self.final.p_cycle if self.feasible else INFEASIBLE_POWER


class PumpingSimulator:
    """Stateful closed-loop simulator; one instance per run.

    ``reel`` selects the reeling references: a fixed (v_trac, v_retr) pair, or
    an online :class:`ReelRefState` driven by a :class:`ManifoldModel`.
    """

    def __init__(self, cfg: SimConfig, v_trac: float = None, v_retr: float = None,
                 manifold: ManifoldModel | None = None, ref: ReelRefState | None = None,
                 wind_schedule=None, record_trace: bool = True):
        self.cfg = cfg
        self.manifold = manifold
        if manifold is not None:
            if ref is None:
                ref = ReelRefState(v_trac=v_trac, v_retr=v_retr)
            self.ref = ref
        else:
            if not (v_trac > 0 > v_retr):
                raise ValueError(f"need v_trac > 0 > v_retr, got {v_trac}, {v_retr}")
            self.ref = ReelRefState(v_trac=v_trac, v_retr=v_retr, step=0.0,
                                    trac_bounds=(v_trac, v_trac), retr_bounds=(v_retr, v_retr))
        self.wind_schedule = sorted(wind_schedule or [], key=lambda p: p[0])
        self.record_trace = record_trace
        plant = cfg.plant
        self.prm = ph.pack_params(plant)
        self.dt = min(cfg.dt, ph.stable_dt(0.9 * cfg.supervisor.min_length, plant.tether))
        self.n_sub = max(1, int(round(1.0 / (cfg.control_rate * self.dt))))
        self.tick = self.n_sub * self.dt
        self.reel_every = max(1, int(round(cfg.control_rate / cfg.reel_rate)))
        self.gains = replace(cfg.winch_gains,
                             torque_limit=min(cfg.winch_gains.torque_limit, plant.winch.drum_torque_limit)).as_array()
        self.state = self._initial_state()
        self.time = 0.0
        self.sup = SupervisorState(Phase.TRACTION, 0.0)
        self.flight = FlightState(side=1)
        self.pi = np.zeros(1)
        self.trace = Trace()
        self.cycle_index = 0
        self.steering = 0.0
        self.target_force = float("nan")
        self._window = np.zeros(4)  # force integral, speed integral, duration, ticks

    def _initial_state(self):
        cfg = self.cfg
        plant = cfg.plant
        vw = plant.env.wind_speed
        L0 = cfg.supervisor.min_length
        speed = cfg.initial_speed_factor * max(vw, 1.0)
        strain = 0.3 * plant.tether.elongation_at_max
        st = ph.straight_tether_state(plant, L0, cfg.initial_elevation, 0.0, kite_speed=speed,
                                      heading=-0.3, stretch=strain)
        return st.y

    # -- helpers -----------------------------------------------------------

    def telemetry(self) -> Telemetry:
        y = self.state
        return Telemetry.from_kite(y[0:3], y[3:6], self.prm[ph.P_WR] * y[-2])

    def reel_speed(self) -> float:
        return float(self.prm[ph.P_WR] * self.state[-1])

    def v_ref(self, phase: Phase) -> float:
        if phase is Phase.TRACTION:
            return self.ref.v_trac
        if phase is Phase.RETRACTION:
            return self.ref.v_retr
        return 0.0

    def _set_power(self, phase: Phase):
        kite = self.cfg.plant.kite
        if phase in DEPOWERED_PHASES:
            self.prm[ph.P_KCL], self.prm[ph.P_KE] = kite.depowered_lift_coeff, kite.depowered_lift_to_drag
        else:
            self.prm[ph.P_KCL], self.prm[ph.P_KE] = kite.lift_coeff, kite.lift_to_drag

    def _apply_wind(self):
        vw = None
        for t0, v in self.wind_schedule:
            if self.time + 1e-9 >= t0:
                vw = v
        if vw is not None and vw != self.prm[ph.P_VW]:
            self.prm[ph.P_VW] = vw

    # -- main loop ---------------------------------------------------------

    def run_cycle(self) -> CycleMetrics:
        """Simulate until the next cycle boundary (or a violation/timeout)."""
        cfg = self.cfg
        m = CycleMetrics(index=self.cycle_index)
        start = self.time
        acc = np.zeros(ph.N_ACC)
        phase = self.sup.phase
        while True:
            tel = self.telemetry()
            el_t, az_t = eight_target(self.flight.side, cfg.flight)
            target_course = bearing(tel, el_t, az_t)
            self.sup, new_phase = supervisor_step(self.sup, tel, self.time, cfg.supervisor, target_course)
            if self.sup.timed_out:
                # attribute the timeout to the phase that overran, then carry on
                m.feasible, m.reason = 0, f"timeout_{phase.label}"
                self.sup = replace(self.sup, timed_out=False)
                phase = new_phase
                break
            if new_phase is not phase:
                self._window[:] = 0.0
                if phase is Phase.TRANSITION2 and new_phase is Phase.TRACTION:
                    m.complete = True
                    break
                phase = new_phase
            self.steering, self.flight = flight_command(tel, phase, self.flight, cfg.flight)
            if self.manifold is not None and self._window[3] >= self.reel_every:
                f_meas = self._window[0] / self._window[2]
                v_meas = abs(self._window[1] / self._window[2])
                self.ref = online_reel_reference(self.ref, phase, f_meas, v_meas, self.manifold)
                self.target_force = self.ref.last_target
                self._window[:] = 0.0
            v_ref = self.v_ref(phase)
            self._set_power(phase)
            self._apply_wind()

            acc[:] = 0.0
            status = ph.advance(self.state, self.n_sub, self.dt, self.steering, v_ref, self.pi,
                                self.gains, self.prm, acc)
            if status:
                i = int(np.argmax(~np.isfinite(self.state)))
                raise ph.SimulationError(
                    f"non-finite state at t={self.time + status * self.dt:.4f} s, component {i}")
            if acc[ph.A_DEGEN]:
                log.warning("t=%.2f: degenerate tether segments (%d evaluations)", self.time, acc[ph.A_DEGEN])
            self.time += acc[ph.A_TIME]
            m.durations[phase] += acc[ph.A_TIME]
            m.energies[phase] += acc[ph.A_ENERGY]
            m.force_integrals[phase] += acc[ph.A_FORCE]
            m.speed_integrals[phase] += acc[ph.A_SPEED]
            m.work += acc[ph.A_WORK]
            self._window += (acc[ph.A_FORCE], acc[ph.A_SPEED], acc[ph.A_TIME], 1.0)

            force = float(ph._ground_force(self.state, self.prm))
            v = self.reel_speed()
            y = self.state
            if self.record_trace:
                f_star = self.target_force if phase in (Phase.TRACTION, Phase.RETRACTION) else float("nan")
                self.trace.append((self.time, float(y[0]), float(y[1]), float(y[2]), force, v,
                                   force * v, phase.label, v_ref, f_star, self.cycle_index))
            tel = self.telemetry()
            reason = sample_violation(tel.elevation, tel.azimuth, force, v, cfg.constraints)
            if reason:
                m.feasible, m.reason = 0, reason
                break
            if self.time - start > cfg.constraints.max_cycle_duration:
                m.feasible, m.reason = 0, "max_cycle_duration"
                break
        self.cycle_index += 1
        return m.finalize()


def simulate(cfg: SimConfig, v_trac: float = None, v_retr: float = None, manifold=None, ref=None,
             wind_schedule=None, n_cycles: int | None = None, record_trace: bool = True,
             cycle_winds=None) -> RunResult:
    """Run cycles until periodic (or ``n_cycles`` if given).

    The first cycle is a transient and never counts towards periodicity.
    ``wind_schedule`` holds (time, v_w) steps; ``cycle_winds`` holds
    (cycle index, v_w) steps applied at the start of that cycle.
    """
    sim = PumpingSimulator(cfg, v_trac, v_retr, manifold=manifold, ref=ref,
                           wind_schedule=wind_schedule, record_trace=record_trace)
    cycles: list[CycleMetrics] = []
    refs = []
    limit = n_cycles if n_cycles is not None else cfg.max_cycles
    periodic = False
    try:
        steps = dict(cycle_winds or [])
        while len(cycles) < limit:
            if len(cycles) in steps:
                sim.prm[ph.P_VW] = float(steps[len(cycles)])
            refs.append((sim.ref.v_trac, sim.ref.v_retr))
            m = sim.run_cycle()
            cycles.append(m)
            if not m.feasible:
                break
            if n_cycles is None and len(cycles) >= 3 and detect_periodicity(cycles[1:], cfg.periodicity_tol):
                periodic = True
                break
    except ph.SimulationError as exc:
        log.warning("simulation aborted: %s", exc)
        m = CycleMetrics(index=len(cycles), feasible=0, reason="diverged").finalize()
        cycles.append(m)
    final = cycles[-1]
    if n_cycles is not None and final.feasible:
        periodic = len(cycles) >= 3 and detect_periodicity(cycles[1:], cfg.periodicity_tol)
    if not final.feasible:
        s, reason = 0, final.reason
    elif not periodic and n_cycles is None:
        s, reason = 0, "not_periodic"
    else:
        s, reason = 1, ""
    return RunResult(cycles, sim.trace, final, s, reason, periodic, refs)


def run_cycle(cfg: SimConfig, v_trac: float, v_retr: float, v_w: float | None = None, **kw) -> tuple[CycleMetrics, Trace]:
    """Fixed-reference evaluation at one wind speed: metrics of the last cycle plus the trace."""
    lo, hi = cfg.plant.winch.speed_limits
    if not (0 < v_trac <= hi and lo <= v_retr < 0):
        raise ValueError(f"reel speeds ({v_trac}, {v_retr}) outside winch limits {cfg.plant.winch.speed_limits}")
    if v_w is not None:
        cfg = cfg.with_wind(v_w)
    res = simulate(cfg, v_trac, v_retr, **kw)
    final = res.final
    final.feasible = res.feasible
    final.reason = res.reason
    return final, res.trace


def metrics_row(v_w, v_trac, v_retr, m: CycleMetrics) -> dict:
    return {"v_w": v_w, "v_trac": v_trac, "v_retr": v_retr,
            "P_cycle_W": m.p_cycle, "P_trac_W": m.p_trac, "P_retr_W": m.p_retr,
            "F_trac_N": m.f_trac, "F_retr_N": m.f_retr,
            "dur_trac_s": m.durations[Phase.TRACTION], "dur_retr_s": m.durations[Phase.RETRACTION],
            "feasible": int(m.feasible)}


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])
