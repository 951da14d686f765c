"""Kite, lumped-mass tether and winch dynamics with a fixed-step RK4 integrator.

The plant state is a flat float64 vector so the hot loop can run under numba::

    [kite_pos(3), kite_vel(3), node_pos(3N), node_vel(3N), winch_angle, winch_rate]

Node 1 is next to the ground station, node N next to the kite. The tether
exit point sits fixed at the origin. Parameters are packed into a flat vector
by :func:`pack_params`; the ``P_*`` constants index into it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .params import EnvParams, KiteParams, PlantParams, TetherParams, WinchParams

log = logging.getLogger(__name__)

# packed parameter layout
P_RHO, P_G, P_VW, P_SHEAR, P_ZREF, P_WX, P_WY, P_WZ = range(8)
P_KA, P_KM, P_KCL, P_KE = range(8, 12)
P_TD, P_TRHO, P_TCD, P_TFMAX, P_TEPS, P_TBETA, P_TN = range(12, 19)
P_WR, P_WJ, P_WBETA = range(19, 22)
N_PARAMS = 22


class SimulationError(RuntimeError):
    """Non-finite state encountered during integration."""


def pack_params(plant: PlantParams) -> np.ndarray:
    k, t, w, e = plant.kite, plant.tether, plant.winch, plant.env
    prm = np.zeros(N_PARAMS)
    prm[P_RHO], prm[P_G], prm[P_VW] = e.air_density, e.gravity, e.wind_speed
    prm[P_SHEAR], prm[P_ZREF] = e.shear_exponent, e.reference_height
    prm[P_WX:P_WZ + 1] = e.wind_direction
    prm[P_KA], prm[P_KM], prm[P_KCL], prm[P_KE] = k.area, k.mass, k.lift_coeff, k.lift_to_drag
    prm[P_TD], prm[P_TRHO], prm[P_TCD] = t.diameter, t.linear_density, t.drag_coeff
    prm[P_TFMAX], prm[P_TEPS], prm[P_TBETA] = t.max_elastic_load, t.elongation_at_max, t.axial_damping
    prm[P_TN] = t.node_count
    prm[P_WR], prm[P_WJ], prm[P_WBETA] = w.drum_radius, w.inertia, w.viscous_coeff
    return prm


def state_size(node_count: int) -> int:
    return 8 + 6 * node_count


# ---------------------------------------------------------------------------
# scalar kernels


@njit(cache=True)
def _wind(z, prm):
    vw = prm[P_VW]
    a = prm[P_SHEAR]
    if a != 0.0:
        if z <= 0.0:
            return 0.0, 0.0, 0.0
        vw = vw * (z / prm[P_ZREF]) ** a
    return vw * prm[P_WX], vw * prm[P_WY], vw * prm[P_WZ]


@njit(cache=True)
def _discretization(L, prm):
    n = prm[P_TN]
    m = L * prm[P_TRHO] / n
    ell = L / (n + 1.0)
    k = prm[P_TFMAX] / (prm[P_TEPS] * ell)
    return m, ell, k


@njit(cache=True)
def _segment(px, py, pz, qx, qy, qz, vx, vy, vz, ux, uy, uz, ell, k, beta):
    """Elastic plus axial damping force on point p from the segment p-q.

    Returns (fx, fy, fz, degenerate).
    """
    dx = qx - px
    dy = qy - py
    dz = qz - pz
    d2 = dx * dx + dy * dy + dz * dz
    if d2 == 0.0:
        return 0.0, 0.0, 0.0, True
    dist = math.sqrt(d2)
    if dist <= ell:
        # slack: the line transmits neither elastic nor damping force
        return 0.0, 0.0, 0.0, False
    t = k * (dist - ell) + beta * ((ux - vx) * dx + (uy - vy) * dy + (uz - vz) * dz) / dist
    if t < 0.0:
        t = 0.0     # a line cannot push
    s = t / dist
    return s * dx, s * dy, s * dz, False


@njit(cache=True)
def _elastic_only(px, py, pz, qx, qy, qz, ell, k):
    dx = qx - px
    dy = qy - py
    dz = qz - pz
    d2 = dx * dx + dy * dy + dz * dz
    if d2 == 0.0:
        return 0.0, 0.0, 0.0
    dist = math.sqrt(d2)
    fe = k * (dist - ell)
    if fe < 0.0:
        fe = 0.0
    s = fe / dist
    return s * dx, s * dy, s * dz


@njit(cache=True)
def _damping_only(px, py, pz, qx, qy, qz, vx, vy, vz, ux, uy, uz, beta):
    dx = qx - px
    dy = qy - py
    dz = qz - pz
    d2 = dx * dx + dy * dy + dz * dz
    if d2 == 0.0:
        return 0.0, 0.0, 0.0
    s = beta * ((ux - vx) * dx + (uy - vy) * dy + (uz - vz) * dz) / d2
    return s * dx, s * dy, s * dz


@njit(cache=True)
def _node_aero(vx, vy, vz, wx, wy, wz, ax, ay, az, ell, prm):
    """Drag on one tether node; (ax, ay, az) is the unit local tether axis."""
    rx = wx - vx
    ry = wy - vy
    rz = wz - vz
    n = math.sqrt(rx * rx + ry * ry + rz * rz)
    if n == 0.0:
        return 0.0, 0.0, 0.0
    cx = ay * rz - az * ry
    cy = az * rx - ax * rz
    cz = ax * ry - ay * rx
    sin_inc = math.sqrt(cx * cx + cy * cy + cz * cz) / n
    area = prm[P_TD] * ell * sin_inc
    c = 0.5 * prm[P_RHO] * prm[P_TCD] * area * n
    return c * rx, c * ry, c * rz


@njit(cache=True)
def _kite_aero(px, py, pz, vx, vy, vz, tx, ty, tz, steering, prm):
    """Lift + drag on the kite.

    (tx, ty, tz) points along the tether towards the kite. Lift lies in the
    plane of tether axis and apparent wind, rotated by ``steering`` [rad]
    about the apparent-wind axis.
    """
    wx, wy, wz = _wind(pz, prm)
    ax = wx - vx
    ay = wy - vy
    az = wz - vz
    n2 = ax * ax + ay * ay + az * az
    if n2 < 1e-18:
        return 0.0, 0.0, 0.0
    n = math.sqrt(n2)
    ex = ax / n
    ey = ay / n
    ez = az / n
    dot = tx * ex + ty * ey + tz * ez
    lx = tx - dot * ex
    ly = ty - dot * ey
    lz = tz - dot * ez
    ln = math.sqrt(lx * lx + ly * ly + lz * lz)
    lift = 0.5 * prm[P_RHO] * prm[P_KA] * prm[P_KCL] * n2
    drag = lift / prm[P_KE]
    if ln < 1e-12:
        return drag * ex, drag * ey, drag * ez
    lx /= ln
    ly /= ln
    lz /= ln
    # side = e_w x l0
    sx = ey * lz - ez * ly
    sy = ez * lx - ex * lz
    sz = ex * ly - ey * lx
    c = math.cos(steering)
    s = math.sin(steering)
    return (lift * (c * lx + s * sx) + drag * ex,
            lift * (c * ly + s * sy) + drag * ey,
            lift * (c * lz + s * sz) + drag * ez)


@njit(cache=True)
def _ground_force(y, prm):
    """Axial tension [N] of the ground-side segment (load-cell reading)."""
    n = int(prm[P_TN])
    L = prm[P_WR] * y[6 + 6 * n]
    if L < 1e-6:
        L = 1e-6
    m, ell, k = _discretization(L, prm)
    px = y[6]
    py = y[7]
    pz = y[8]
    o = 6 + 3 * n
    d2 = px * px + py * py + pz * pz
    if d2 == 0.0:
        return 0.0
    dist = math.sqrt(d2)
    if dist <= ell:
        return 0.0
    t = k * (dist - ell) + prm[P_TBETA] * (y[o] * px + y[o + 1] * py + y[o + 2] * pz) / dist
    return t if t > 0.0 else 0.0


@njit(cache=True)
def _derivatives(y, steering, torque, prm, dy):
    """Fill dy with dy/dt. Returns (ground axial force, degenerate segment count)."""
    n = int(prm[P_TN])
    g = prm[P_G]
    beta = prm[P_TBETA]
    ip = 6
    iv = 6 + 3 * n
    ith = 6 + 6 * n
    L = prm[P_WR] * y[ith]
    if L < 1e-6:
        L = 1e-6
    m, ell, k = _discretization(L, prm)
    degenerate = 0

    # kite
    kx = y[0]
    ky = y[1]
    kz = y[2]
    kvx = y[3]
    kvy = y[4]
    kvz = y[5]
    for j in range(3):
        dy[j] = y[3 + j]

    # segment forces: seg i joins point i-1 and i (point 0 = origin, point n+1 = kite)
    # accumulate on nodes, read kite & ground end
    for i in range(n):
        dy[iv + 3 * i] = 0.0
        dy[iv + 3 * i + 1] = 0.0
        dy[iv + 3 * i + 2] = 0.0
    f_ground = 0.0
    kfx = 0.0
    kfy = 0.0
    kfz = 0.0
    for s in range(n + 1):
        # lower point a, upper point b
        if s == 0:
            ax = 0.0
            ay = 0.0
            az = 0.0
            avx = 0.0
            avy = 0.0
            avz = 0.0
        else:
            a = s - 1
            ax = y[ip + 3 * a]
            ay = y[ip + 3 * a + 1]
            az = y[ip + 3 * a + 2]
            avx = y[iv + 3 * a]
            avy = y[iv + 3 * a + 1]
            avz = y[iv + 3 * a + 2]
        if s == n:
            bx = kx
            by = ky
            bz = kz
            bvx = kvx
            bvy = kvy
            bvz = kvz
        else:
            bx = y[ip + 3 * s]
            by = y[ip + 3 * s + 1]
            bz = y[ip + 3 * s + 2]
            bvx = y[iv + 3 * s]
            bvy = y[iv + 3 * s + 1]
            bvz = y[iv + 3 * s + 2]
        fx, fy, fz, deg = _segment(ax, ay, az, bx, by, bz, avx, avy, avz, bvx, bvy, bvz, ell, k, beta)
        if deg:
            degenerate += 1
        # force on a is (fx, fy, fz); on b it is the negative
        if s == 0:
            dist = math.sqrt(bx * bx + by * by + bz * bz)
            if dist > 0.0:
                f_ground = (fx * bx + fy * by + fz * bz) / dist
        else:
            a = s - 1
            dy[iv + 3 * a] += fx
            dy[iv + 3 * a + 1] += fy
            dy[iv + 3 * a + 2] += fz
        if s == n:
            kfx = -fx
            kfy = -fy
            kfz = -fz
        else:
            dy[iv + 3 * s] -= fx
            dy[iv + 3 * s + 1] -= fy
            dy[iv + 3 * s + 2] -= fz

    # node aero, gravity, kinematics
    for i in range(n):
        pz = y[ip + 3 * i + 2]
        vx = y[iv + 3 * i]
        vy = y[iv + 3 * i + 1]
        vz = y[iv + 3 * i + 2]
        if i == 0:
            lx = 0.0
            ly = 0.0
            lz = 0.0
        else:
            lx = y[ip + 3 * (i - 1)]
            ly = y[ip + 3 * (i - 1) + 1]
            lz = y[ip + 3 * (i - 1) + 2]
        if i == n - 1:
            ux = kx
            uy = ky
            uz = kz
        else:
            ux = y[ip + 3 * (i + 1)]
            uy = y[ip + 3 * (i + 1) + 1]
            uz = y[ip + 3 * (i + 1) + 2]
        axx = ux - lx
        axy = uy - ly
        axz = uz - lz
        an = math.sqrt(axx * axx + axy * axy + axz * axz)
        if an > 0.0 and prm[P_RHO] > 0.0:
            wx, wy, wz = _wind(pz, prm)
            fax, fay, faz = _node_aero(vx, vy, vz, wx, wy, wz, axx / an, axy / an, axz / an, ell, prm)
        else:
            fax = 0.0
            fay = 0.0
            faz = 0.0
        dy[iv + 3 * i] = (dy[iv + 3 * i] + fax) / m
        dy[iv + 3 * i + 1] = (dy[iv + 3 * i + 1] + fay) / m
        dy[iv + 3 * i + 2] = (dy[iv + 3 * i + 2] + faz) / m - g
        dy[ip + 3 * i] = vx
        dy[ip + 3 * i + 1] = vy
        dy[ip + 3 * i + 2] = vz

    # kite: tether axis at the kite
    if n > 0:
        tx = kx - y[ip + 3 * (n - 1)]
        ty = ky - y[ip + 3 * (n - 1) + 1]
        tz = kz - y[ip + 3 * (n - 1) + 2]
    else:
        tx = kx
        ty = ky
        tz = kz
    tn = math.sqrt(tx * tx + ty * ty + tz * tz)
    if tn == 0.0:
        tn = math.sqrt(kx * kx + ky * ky + kz * kz)
        tx = kx
        ty = ky
        tz = kz
    if tn > 0.0 and prm[P_RHO] > 0.0:
        fax, fay, faz = _kite_aero(kx, ky, kz, kvx, kvy, kvz, tx / tn, ty / tn, tz / tn, steering, prm)
    else:
        fax = 0.0
        fay = 0.0
        faz = 0.0
    mk = prm[P_KM]
    dy[3] = (fax + kfx) / mk
    dy[4] = (fay + kfy) / mk
    dy[5] = (faz + kfz) / mk - g

    # winch
    rate = y[ith + 1]
    dy[ith] = rate
    dy[ith + 1] = (-prm[P_WBETA] * rate + torque + prm[P_WR] * f_ground) / prm[P_WJ]
    return f_ground, degenerate


@njit(cache=True)
def _rk4(y, dt, steering, torque, prm, k1, k2, k3, k4, tmp):
    """In-place RK4 step. Returns (ground force at step start, degenerate count)."""
    f0, deg = _derivatives(y, steering, torque, prm, k1)
    h = 0.5 * dt
    for i in range(y.size):
        tmp[i] = y[i] + h * k1[i]
    _derivatives(tmp, steering, torque, prm, k2)
    for i in range(y.size):
        tmp[i] = y[i] + h * k2[i]
    _derivatives(tmp, steering, torque, prm, k3)
    for i in range(y.size):
        tmp[i] = y[i] + dt * k3[i]
    _derivatives(tmp, steering, torque, prm, k4)
    c = dt / 6.0
    for i in range(y.size):
        y[i] = y[i] + c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return f0, deg


# accumulator slots used by advance()
A_ENERGY, A_WORK, A_FORCE, A_SPEED, A_FMAX, A_DEGEN, A_TIME, A_TORQUE_SAT = range(8)
N_ACC = 8


@njit(cache=True)
def pi_torque(v_ref, v_meas, integ, dt, kp, ki, i_limit, t_max):
    """Speed PI with clamped integrator and conditional integration.

    Returns (torque, new integrator, saturated).
    """
    e = v_ref - v_meas
    cand = integ + ki * e * dt
    if cand > i_limit:
        cand = i_limit
    elif cand < -i_limit:
        cand = -i_limit
    t = kp * e + cand
    sat = False
    if t > t_max:
        t = t_max
        sat = True
        if e > 0.0:
            cand = integ
    elif t < -t_max:
        t = -t_max
        sat = True
        if e < 0.0:
            cand = integ
    return t, cand, sat


@njit(cache=True)
def advance(y, n_steps, dt, steering, v_ref, pi_state, gains, prm, acc):
    """Advance ``n_steps`` RK4 steps with the winch speed loop closed every step.

    ``gains`` = [kp, ki, integrator limit, drum torque limit]; the speed loop
    acts on tether speed r*theta_dot. Work integrals go into ``acc``.
    Returns 0 on success or the 1-based index of the step that produced a
    non-finite state.
    """
    size = y.size
    k1 = np.empty(size)
    k2 = np.empty(size)
    k3 = np.empty(size)
    k4 = np.empty(size)
    tmp = np.empty(size)
    ith = size - 2
    r = prm[P_WR]
    f0 = _ground_force(y, prm)
    for step_i in range(n_steps):
        rate0 = y[ith + 1]
        torque, pi_state[0], sat = pi_torque(v_ref, r * rate0, pi_state[0], dt,
                                             gains[0], gains[1], gains[2], gains[3])
        if sat:
            acc[A_TORQUE_SAT] += 1.0
        _, deg = _rk4(y, dt, steering, torque, prm, k1, k2, k3, k4, tmp)
        acc[A_DEGEN] += deg
        total = 0.0
        for i in range(size):
            total += y[i]
        if not math.isfinite(total):
            return step_i + 1
        f1 = _ground_force(y, prm)
        rate1 = y[ith + 1]
        h = 0.5 * dt
        acc[A_ENERGY] += h * (r * rate0 * f0 + r * rate1 * f1)
        acc[A_WORK] += h * (rate0 * f0 + rate1 * f1)
        acc[A_FORCE] += h * (f0 + f1)
        acc[A_SPEED] += h * r * (rate0 + rate1)
        if f1 > acc[A_FMAX]:
            acc[A_FMAX] = f1
        acc[A_TIME] += dt
        f0 = f1
    return 0


@njit(cache=True)
def _energy(y, prm):
    n = int(prm[P_TN])
    g = prm[P_G]
    ip = 6
    iv = 6 + 3 * n
    ith = 6 + 6 * n
    L = prm[P_WR] * y[ith]
    m, ell, k = _discretization(L, prm)
    mk = prm[P_KM]
    e = 0.5 * mk * (y[3] ** 2 + y[4] ** 2 + y[5] ** 2) + mk * g * y[2]
    for i in range(n):
        e += 0.5 * m * (y[iv + 3 * i] ** 2 + y[iv + 3 * i + 1] ** 2 + y[iv + 3 * i + 2] ** 2)
        e += m * g * y[ip + 3 * i + 2]
    e += 0.5 * prm[P_WJ] * y[ith + 1] ** 2
    for s in range(n + 1):
        if s == 0:
            ax = 0.0
            ay = 0.0
            az = 0.0
        else:
            ax = y[ip + 3 * (s - 1)]
            ay = y[ip + 3 * (s - 1) + 1]
            az = y[ip + 3 * (s - 1) + 2]
        if s == n:
            bx = y[0]
            by = y[1]
            bz = y[2]
        else:
            bx = y[ip + 3 * s]
            by = y[ip + 3 * s + 1]
            bz = y[ip + 3 * s + 2]
        dist = math.sqrt((bx - ax) ** 2 + (by - ay) ** 2 + (bz - az) ** 2)
        if dist > ell:
            e += 0.5 * k * (dist - ell) ** 2
    return e


# ---------------------------------------------------------------------------
# Python-facing API


@dataclass(frozen=True)
class KiteState:
    position: np.ndarray
    velocity: np.ndarray

    @classmethod
    def from_spherical(cls, elevation, azimuth, distance, d_elevation=0.0, d_azimuth=0.0, d_distance=0.0):
        """Build from (elevation, azimuth, radius) and their rates."""
        ce, se = math.cos(elevation), math.sin(elevation)
        ca, sa = math.cos(azimuth), math.sin(azimuth)
        e_r = np.array([ce * ca, ce * sa, se])
        e_el = np.array([-se * ca, -se * sa, ce])
        e_az = np.array([-sa, ca, 0.0])
        pos = distance * e_r
        vel = d_distance * e_r + distance * d_elevation * e_el + distance * ce * d_azimuth * e_az
        return cls(pos, vel)

    def spherical(self):
        """Return (elevation, azimuth, radius, d_elevation, d_azimuth, d_radius)."""
        x, y, z = self.position
        r = math.sqrt(x * x + y * y + z * z)
        rho = math.hypot(x, y)
        el = math.atan2(z, rho)
        az = math.atan2(y, x)
        ce, se = math.cos(el), math.sin(el)
        ca, sa = math.cos(az), math.sin(az)
        e_r = np.array([ce * ca, ce * sa, se])
        e_el = np.array([-se * ca, -se * sa, ce])
        e_az = np.array([-sa, ca, 0.0])
        v = self.velocity
        d_el = float(v @ e_el) / r
        d_az = float(v @ e_az) / (r * ce) if ce > 0 else 0.0
        return el, az, r, d_el, d_az, float(v @ e_r)


@dataclass(frozen=True)
class TetherState:
    node_pos: np.ndarray
    node_vel: np.ndarray
    nominal_length: float


@dataclass(frozen=True)
class WinchState:
    angle: float
    speed: float


@dataclass
class SystemState:
    """Full plant state. ``y`` is the flat vector the integrator works on."""

    y: np.ndarray
    time: float
    node_count: int

    @classmethod
    def compose(cls, kite: KiteState, tether: TetherState, winch: WinchState, time=0.0):
        n = len(tether.node_pos)
        y = np.concatenate([kite.position, kite.velocity,
                            np.asarray(tether.node_pos, float).ravel(),
                            np.asarray(tether.node_vel, float).ravel(),
                            [winch.angle, winch.speed]])
        return cls(y.astype(float), float(time), n)

    def copy(self):
        return SystemState(self.y.copy(), self.time, self.node_count)

    @property
    def kite(self) -> KiteState:
        return KiteState(self.y[0:3].copy(), self.y[3:6].copy())

    @property
    def winch(self) -> WinchState:
        return WinchState(float(self.y[-2]), float(self.y[-1]))

    def tether(self, drum_radius: float) -> TetherState:
        n = self.node_count
        return TetherState(self.y[6:6 + 3 * n].reshape(n, 3).copy(),
                           self.y[6 + 3 * n:6 + 6 * n].reshape(n, 3).copy(),
                           drum_radius * float(self.y[-2]))


def wind_at(position, env: EnvParams) -> np.ndarray:
    z = float(position[2])
    if z < 0:
        raise ValueError("position below ground")
    vw = env.wind_speed
    if env.shear_exponent != 0.0:
        vw = 0.0 if z == 0.0 else vw * (z / env.reference_height) ** env.shear_exponent
    return vw * np.asarray(env.wind_direction, float)


def tether_discretization(length: float, p: TetherParams):
    """Return (node mass, nominal segment length, segment spring constant)."""
    if not length > 0:
        raise ValueError(f"tether length must be positive, got {length}")
    n = p.node_count
    ell = length / (n + 1)
    return length * p.linear_density / n, ell, p.max_elastic_load / (p.elongation_at_max * ell)


def stable_dt(length: float, p: TetherParams) -> float:
    """Largest step allowed by the 0.2*sqrt(m/k) stiffness bound."""
    m, _, k = tether_discretization(length, p)
    return 0.2 * math.sqrt(m / k)


def segment_elastic_force(p_self, p_neighbor, ell, k):
    d = np.asarray(p_neighbor, float) - np.asarray(p_self, float)
    if not d.any():
        log.warning("coincident tether nodes at %s; elastic force set to zero", p_self)
        return np.zeros(3)
    return np.array(_elastic_only(*p_self, *p_neighbor, ell, k))


def segment_damping_force(p_self, p_neighbor, v_self, v_neighbor, beta):
    d = np.asarray(p_neighbor, float) - np.asarray(p_self, float)
    if not d.any():
        log.warning("coincident tether nodes at %s; damping force set to zero", p_self)
        return np.zeros(3)
    return np.array(_damping_only(*p_self, *p_neighbor, *v_self, *v_neighbor, beta))


def node_aero_force(node_vel, wind, segment_axis, segment_length, tether: TetherParams, air_density):
    prm = np.zeros(N_PARAMS)
    prm[P_TD], prm[P_TCD], prm[P_RHO] = tether.diameter, tether.drag_coeff, air_density
    return np.array(_node_aero(*node_vel, *wind, *segment_axis, segment_length, prm))


def derivatives(state: SystemState, steering: float, torque: float, plant: PlantParams):
    """Return (dy/dt, ground-side axial tether force)."""
    prm = pack_params(plant)
    dy = np.empty_like(state.y)
    f, deg = _derivatives(state.y, steering, torque, prm, dy)
    if deg:
        log.warning("t=%.3f: %d degenerate tether segment(s)", state.time, deg)
    return dy, f


def tether_accelerations(state: SystemState, plant: PlantParams) -> np.ndarray:
    n = state.node_count
    dy, _ = derivatives(state, 0.0, 0.0, plant)
    return dy[6 + 3 * n:6 + 6 * n].reshape(n, 3)


def kite_derivatives(kite: KiteState, steering: float, tether_end_force, tether_axis,
                     kite_params: KiteParams, env: EnvParams):
    """Velocity and acceleration of the kite point mass.

    ``tether_axis`` is the unit vector along the tether towards the kite; it
    orients the lift plane.
    """
    prm = pack_params(PlantParams(kite=kite_params, env=env))
    pos, vel = kite.position, kite.velocity
    if env.air_density > 0:
        f = np.array(_kite_aero(*pos, *vel, *tether_axis, steering, prm))
    else:
        f = np.zeros(3)
    acc = (f + np.asarray(tether_end_force, float)) / kite_params.mass
    acc[2] -= env.gravity
    return vel.copy(), acc


def kite_aero_force(kite: KiteState, steering, tether_axis, kite_params: KiteParams, env: EnvParams):
    prm = pack_params(PlantParams(kite=kite_params, env=env))
    return np.array(_kite_aero(*kite.position, *kite.velocity, *tether_axis, steering, prm))


def winch_derivatives(winch: WinchState, torque: float, axial_force: float, p: WinchParams) -> float:
    """Angular acceleration of the drum; torque beyond the drum limit is saturated."""
    lim = p.drum_torque_limit
    if abs(torque) > lim:
        log.warning("motor torque %.1f N m saturated to +-%.1f", torque, lim)
        torque = math.copysign(lim, torque)
    return (-p.viscous_coeff * winch.speed + torque + p.drum_radius * axial_force) / p.inertia


def step(state: SystemState, steering: float, torque: float, dt: float, plant: PlantParams) -> SystemState:
    """One RK4 step; returns a new state. Raises SimulationError on non-finite values."""
    prm = pack_params(plant)
    y = state.y.copy()
    size = y.size
    work = [np.empty(size) for _ in range(5)]
    _, deg = _rk4(y, dt, steering, torque, prm, *work)
    if deg:
        log.warning("t=%.3f: %d degenerate tether segment(s)", state.time, deg)
    bad = ~np.isfinite(y)
    if bad.any():
        raise SimulationError(f"non-finite state at t={state.time + dt:.6f}: component {int(np.argmax(bad))}")
    return SystemState(y, state.time + dt, state.node_count)


def mechanical_energy(state: SystemState, plant: PlantParams) -> float:
    return float(_energy(state.y, pack_params(plant)))


def ground_force(state: SystemState, plant: PlantParams) -> float:
    return float(_ground_force(state.y, pack_params(plant)))


def straight_tether_state(plant: PlantParams, length: float, elevation: float, azimuth: float,
                          kite_speed: float = 0.0, heading: float = 0.0, stretch: float = 0.0,
                          reel_speed: float = 0.0) -> SystemState:
    """Kite at the end of a straight tether of nominal ``length``.

    The kite moves tangentially at ``kite_speed`` with course angle
    ``heading`` (0 = increasing azimuth, pi/2 = climbing); node velocities are
    interpolated linearly from the ground. ``stretch`` is the segment strain.
    """
    n = plant.tether.node_count
    r = length * (1.0 + stretch)
    ce, se = math.cos(elevation), math.sin(elevation)
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    e_r = np.array([ce * ca, ce * sa, se])
    e_el = np.array([-se * ca, -se * sa, ce])
    e_az = np.array([-sa, ca, 0.0])
    v_kite = kite_speed * (math.cos(heading) * e_az + math.sin(heading) * e_el) + reel_speed * e_r
    frac = np.arange(1, n + 1) / (n + 1)
    nodes = np.outer(frac, r * e_r)
    vels = np.outer(frac, v_kite)
    kite = KiteState(r * e_r, v_kite)
    winch = WinchState(length / plant.winch.drum_radius, reel_speed / plant.winch.drum_radius)
    return SystemState.compose(kite, TetherState(nodes, vels, length), winch)
