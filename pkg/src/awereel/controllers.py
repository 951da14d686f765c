"""Supervisor, flight controller, winch speed loop and the force-feedback reeling law.

Everything here is a pure state-transition function: ``(state, inputs) ->
(state, outputs)``. The cycle engine owns the timeline and calls each
controller at its own rate.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .physics import pi_torque


class Phase(enum.IntEnum):
    TRACTION = 0
    TRANSITION1 = 1
    RETRACTION = 2
    TRANSITION2 = 3

    @property
    def next(self) -> "Phase":
        return Phase((self.value + 1) % 4)

    @property
    def label(self) -> str:
        return self.name.lower()


# ---------------------------------------------------------------------------
# telemetry helpers


@dataclass(frozen=True)
class Telemetry:
    """Kite telemetry in the ground-station spherical frame."""

    elevation: float
    azimuth: float
    distance: float
    v_elevation: float  # tangential speed component along increasing elevation [m/s]
    v_azimuth: float    # ... along increasing azimuth [m/s]
    v_radial: float
    tether_length: float = 0.0

    @classmethod
    def from_kite(cls, position, velocity, tether_length=0.0):
        x, y, z = position
        rho = math.hypot(x, y)
        el = math.atan2(z, rho)
        az = math.atan2(y, x)
        ce, se = math.cos(el), math.sin(el)
        ca, sa = math.cos(az), math.sin(az)
        vx, vy, vz = velocity
        v_el = -se * ca * vx - se * sa * vy + ce * vz
        v_az = -sa * vx + ca * vy
        v_r = ce * ca * vx + ce * sa * vy + se * vz
        return cls(el, az, math.sqrt(rho * rho + z * z), v_el, v_az, v_r, tether_length)

    @property
    def course(self) -> float:
        """Velocity angle: 0 towards increasing azimuth, pi/2 climbing."""
        return math.atan2(self.v_elevation, self.v_azimuth)

    @property
    def tangential_speed(self) -> float:
        return math.hypot(self.v_elevation, self.v_azimuth)


def wrap_angle(a: float, low: float = -math.pi) -> float:
    """Map ``a`` into ``[low, low + 2*pi)``."""
    return (a - low) % (2.0 * math.pi) + low


def bearing(tel: Telemetry, elevation: float, azimuth: float) -> float:
    """Course angle pointing from the kite towards a target on the sphere."""
    return math.atan2(elevation - tel.elevation, (azimuth - tel.azimuth) * math.cos(tel.elevation))


# ---------------------------------------------------------------------------
# supervisor


@dataclass(frozen=True)
class SupervisorConfig:
    """Phase-switching thresholds.

    Zones are boxes on the (elevation, |azimuth|) plane in radians. The power
    zone also requires the course to point within ``course_tolerance`` of the
    active figure-eight target.
    """

    min_length: float = 200.0
    max_length: float = 300.0
    power_elevation: tuple[float, float] = (math.radians(12), math.radians(40))
    power_azimuth: float = math.radians(30)
    course_tolerance: float = math.radians(60)
    parking_elevation: tuple[float, float] = (math.radians(45), math.radians(89))
    parking_azimuth: tuple[float, float] = (math.radians(0), math.radians(90))
    parking_speed: float = 12.0
    transition1_timeout: float = 40.0
    transition2_timeout: float = 40.0

    def __post_init__(self):
        if not 0 < self.min_length < self.max_length:
            raise ValueError("supervisor: need 0 < min_length < max_length")
        if self.transition1_timeout <= 0 or self.transition2_timeout <= 0:
            raise ValueError("supervisor: timeouts must be positive")


@dataclass(frozen=True)
class SupervisorState:
    phase: Phase = Phase.TRACTION
    phase_start: float = 0.0
    timed_out: bool = False


def in_parking_zone(tel: Telemetry, cfg: SupervisorConfig) -> bool:
    lo, hi = cfg.parking_elevation
    alo, ahi = cfg.parking_azimuth
    return (lo <= tel.elevation <= hi and alo <= abs(tel.azimuth) <= ahi
            and tel.tangential_speed <= cfg.parking_speed)


def in_power_zone(tel: Telemetry, cfg: SupervisorConfig, target_course: float | None = None) -> bool:
    lo, hi = cfg.power_elevation
    if not (lo <= tel.elevation <= hi and abs(tel.azimuth) <= cfg.power_azimuth):
        return False
    if target_course is None:
        return True
    return abs(wrap_angle(target_course - tel.course)) <= cfg.course_tolerance


def supervisor_step(sup: SupervisorState, tel: Telemetry, time: float, cfg: SupervisorConfig,
                    target_course: float | None = None) -> tuple[SupervisorState, Phase]:
    """Advance the phase machine by one supervisor tick.

    Transitions only move forward along traction -> transition 1 ->
    retraction -> transition 2 -> traction. A transition phase that exceeds
    its timeout is forced onwards and ``timed_out`` is latched so the cycle
    can be flagged infeasible.
    """
    if not all(math.isfinite(v) for v in (tel.tether_length, tel.elevation, tel.azimuth)):
        raise ValueError("non-finite telemetry")
    ph = sup.phase
    elapsed = time - sup.phase_start
    switch = False
    timeout = False
    if ph is Phase.TRACTION:
        switch = tel.tether_length >= cfg.max_length
    elif ph is Phase.TRANSITION1:
        switch = in_parking_zone(tel, cfg)
        if not switch and elapsed >= cfg.transition1_timeout:
            switch = timeout = True
    elif ph is Phase.RETRACTION:
        switch = tel.tether_length <= cfg.min_length
    else:
        switch = in_power_zone(tel, cfg, target_course)
        if not switch and elapsed >= cfg.transition2_timeout:
            switch = timeout = True
    if not switch:
        return sup, ph
    new = SupervisorState(ph.next, time, sup.timed_out or timeout)
    return new, new.phase


# ---------------------------------------------------------------------------
# flight control


@dataclass(frozen=True)
class FlightConfig:
    """Course-angle feedback with target-point navigation.

    Traction flies figure-eights between targets at (+-eight_azimuth,
    eight_elevation), switching target when the azimuth crosses
    +-switch_azimuth. Retraction and transition 1 head for the parking
    target on the current side.
    """

    gain: float = 0.08
    max_steering: float = math.radians(8)
    eight_azimuth: float = math.radians(40)
    eight_elevation: float = math.radians(22)
    switch_azimuth: float = math.radians(18)
    parking_azimuth: float = math.radians(60)
    parking_elevation: float = math.radians(70)
    min_speed: float = 3.0


@dataclass(frozen=True)
class FlightState:
    side: int = 1          # active figure-eight target: +1 right (positive azimuth), -1 left
    steering: float = 0.0


def eight_target(side: int, cfg: FlightConfig) -> tuple[float, float]:
    return cfg.eight_elevation, side * cfg.eight_azimuth


def flight_command(tel: Telemetry, phase: Phase, state: FlightState, cfg: FlightConfig
                   ) -> tuple[float, FlightState]:
    """Return (steering [rad], new flight state).

    During traction the course error is wrapped into a window that forces
    the turn at each side of the eight to go upwards.
    """
    side = state.side
    if phase is Phase.TRACTION:
        if side > 0 and tel.azimuth > cfg.switch_azimuth:
            side = -1
        elif side < 0 and tel.azimuth < -cfg.switch_azimuth:
            side = 1
        el_t, az_t = eight_target(side, cfg)
        # heading left (side -1) after a right-hand turn: turn counter-clockwise
        low = -0.5 * math.pi if side < 0 else -1.5 * math.pi
    elif phase is Phase.TRANSITION2:
        el_t, az_t = eight_target(side, cfg)
        low = -math.pi
    else:
        park_side = 1 if tel.azimuth >= 0 else -1
        el_t, az_t = cfg.parking_elevation, park_side * cfg.parking_azimuth
        # next traction starts by crossing back to the opposite target
        side = -park_side
        low = -math.pi
    if tel.tangential_speed < cfg.min_speed:
        # course undefined: neutral command, the kite then climbs along its lift
        return 0.0, FlightState(side, 0.0)
    err = wrap_angle(bearing(tel, el_t, az_t) - tel.course, low)
    u = float(np.clip(cfg.gain * err, -cfg.max_steering, cfg.max_steering))
    return u, FlightState(side, u)


# ---------------------------------------------------------------------------
# winch speed loop


@dataclass(frozen=True)
class WinchLoopGains:
    """PI speed loop on tether speed: torque [N m] per (m/s) and per m."""

    kp: float = 3000.0
    ki: float = 30000.0
    integrator_limit: float = 32344.0
    torque_limit: float = 32344.0

    def __post_init__(self):
        if min(self.kp, self.ki, self.integrator_limit, self.torque_limit) <= 0:
            raise ValueError("winch gains and limits must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.kp, self.ki, self.integrator_limit, self.torque_limit])


def winch_torque(v_ref: float, v_meas: float, gains: WinchLoopGains, integrator: float, dt: float
                 ) -> tuple[float, float, bool]:
    """One PI update. Returns (drum torque, new integrator, saturated)."""
    t, i, sat = pi_torque(v_ref, v_meas, integrator, dt, gains.kp, gains.ki,
                          gains.integrator_limit, gains.torque_limit)
    return float(t), float(i), bool(sat)


# ---------------------------------------------------------------------------
# force-feedback reeling law


@dataclass(frozen=True)
class ManifoldModel:
    """Optimal-manifold coefficients: F = K * v**2 for each phase."""

    k_trac: float
    k_retr: float

    def __post_init__(self):
        if not (self.k_trac > 0 and self.k_retr > 0):
            raise ValueError(f"manifold coefficients must be positive, got {self.k_trac}, {self.k_retr}")

    def force(self, phase: Phase, speed: float) -> float:
        k = self.k_trac if phase is Phase.TRACTION else self.k_retr
        return k * speed * speed

    def speed(self, phase: Phase, force: float) -> float:
        """Manifold speed magnitude carrying ``force``."""
        k = self.k_trac if phase is Phase.TRACTION else self.k_retr
        return math.sqrt(max(force, 0.0) / k)


@dataclass(frozen=True)
class ReelRefState:
    """Reference reeling speeds for the force-feedback law.

    ``v_retr`` is stored negative. ``deadband`` is relative to the target
    force. In proportional mode (the default) the step is
    ``gain * (F - F*)`` clamped to +-``step``; in fixed mode it is always
    +-``step``. The fixed step follows the sign of each window's force
    error, so with a skewed force distribution it settles where the median
    rather than the mean force sits on the manifold.
    """

    v_trac: float = 1.5
    v_retr: float = -3.5
    step: float = 0.05
    mode: str = "proportional"
    gain: float = 1e-4
    deadband: float = 0.01
    trac_bounds: tuple[float, float] = (0.1, 6.0)
    retr_bounds: tuple[float, float] = (-8.0, -0.1)
    last_target: float = float("nan")

    def __post_init__(self):
        if self.mode not in ("fixed", "proportional"):
            raise ValueError(f"unknown update mode {self.mode!r}")
        if self.step < 0:
            raise ValueError("step must be >= 0")
        if not self.v_trac > 0 or not self.v_retr < 0:
            raise ValueError("need v_trac > 0 > v_retr")

    def clamp(self) -> "ReelRefState":
        return replace(self, v_trac=float(np.clip(self.v_trac, *self.trac_bounds)),
                       v_retr=float(np.clip(self.v_retr, *self.retr_bounds)))


def online_reel_reference(ref: ReelRefState, phase: Phase, force: float, speed: float,
                          manifold: ManifoldModel) -> ReelRefState:
    """One update of the reeling-speed reference from measured force and speed.

    ``speed`` is the measured reeling speed magnitude. When the force is
    above the manifold value K*v**2 the reeling speed magnitude is raised,
    below it is lowered, inside the dead-band it is held. Outside traction
    and retraction the reference is returned unchanged.
    """
    if phase not in (Phase.TRACTION, Phase.RETRACTION):
        return ref
    target = manifold.force(phase, speed)
    diff = force - target
    if abs(diff) <= ref.deadband * target:
        delta = 0.0
    elif ref.mode == "fixed":
        delta = math.copysign(ref.step, diff)
    else:
        delta = float(np.clip(ref.gain * diff, -ref.step, ref.step))
    if phase is Phase.TRACTION:
        new = replace(ref, v_trac=ref.v_trac + delta, last_target=target)
    else:
        new = replace(ref, v_retr=ref.v_retr - delta, last_target=target)
    return new.clamp()
