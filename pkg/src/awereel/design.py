"""Offline design: sweep reel-speed pairs, fit a response surface per wind
speed, maximise it, certify the optimum by simulation, and regress the
optimal force/speed manifold across wind speeds.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import pdist

from .controllers import ManifoldModel
from .cycle import INFEASIBLE_POWER, SimConfig, fmt, simulate

log = logging.getLogger(__name__)

# surfaces at or below this value count as "infeasible everywhere"
FEASIBLE_THRESHOLD = 0.5 * INFEASIBLE_POWER

DATASET_COLUMNS = ("v_w", "v_trac", "v_retr", "P_cycle_W", "feasible", "P_trac_W", "P_retr_W", "F_trac_N",
                   "F_retr_N", "reason")
OPTIMA_COLUMNS = ("v_w", "v_trac", "v_retr", "P_hat_W", "P_cycle_W", "F_trac_N", "F_retr_N",
                  "verified", "iterations")
MANIFOLD_COLUMNS = ("K_trac", "K_retr", "r2_trac", "r2_retr")


class NoFeasibleRegion(RuntimeError):
    """The response surface never rises above the infeasibility placeholder."""


# ---------------------------------------------------------------------------
# sweep


def _default_winds():
    return tuple(round(6.5 + 0.5 * i, 10) for i in range(8))


@dataclass(frozen=True)
class SweepGrid:
    """Wind values and reel-speed pairs to simulate.

    With ``relative=True`` the speed lists are fractions of the wind speed,
    so every wind slice covers the same region of the (v_trac/v_w,
    v_retr/v_w) plane; otherwise they are absolute speeds in m/s.
    """

    winds: tuple[float, ...] = field(default_factory=_default_winds)
    trac_speeds: tuple[float, ...] = (0.08, 0.13, 0.18, 0.23, 0.28, 0.33, 0.38)
    retr_speeds: tuple[float, ...] = (-0.2, -0.3, -0.4, -0.5, -0.6, -0.7, -0.8)
    relative: bool = True

    def __post_init__(self):
        if not self.winds or not self.trac_speeds or not self.retr_speeds:
            raise ValueError("sweep grid needs at least one wind value and one speed of each kind")
        if any(not (math.isfinite(w) and w > 0) for w in self.winds):
            raise ValueError(f"wind values must be positive, got {self.winds}")
        if any(v <= 0 for v in self.trac_speeds):
            raise ValueError("reel-out speeds must be positive")
        if any(v >= 0 for v in self.retr_speeds):
            raise ValueError("reel-in speeds must be negative")

    def pairs(self, v_w: float) -> list[tuple[float, float]]:
        scale = v_w if self.relative else 1.0
        return [(round(scale * a, 12), round(scale * b, 12)) for a in self.trac_speeds for b in self.retr_speeds]

    @property
    def size(self) -> tuple[int, int]:
        return len(self.winds), len(self.trac_speeds) * len(self.retr_speeds)


@dataclass(frozen=True)
class SweepRow:
    v_w: float
    v_trac: float
    v_retr: float
    power: float
    feasible: int
    p_trac: float = float("nan")
    p_retr: float = float("nan")
    f_trac: float = float("nan")
    f_retr: float = float("nan")
    reason: str = ""

    def as_dict(self) -> dict:
        return {"v_w": self.v_w, "v_trac": self.v_trac, "v_retr": self.v_retr, "P_cycle_W": self.power,
                "feasible": self.feasible, "P_trac_W": self.p_trac, "P_retr_W": self.p_retr,
                "F_trac_N": self.f_trac, "F_retr_N": self.f_retr, "reason": self.reason}


def evaluate_pair(cfg: SimConfig, v_w: float, v_trac: float, v_retr: float) -> SweepRow:
    """Simulate one pair to periodicity; every failure becomes an infeasible row."""
    lo, hi = cfg.plant.winch.speed_limits
    if not (0 < v_trac <= hi and lo <= v_retr < 0):
        return SweepRow(v_w, v_trac, v_retr, INFEASIBLE_POWER, 0, reason="speed_limit")
    try:
        res = simulate(cfg.with_wind(v_w), v_trac, v_retr, record_trace=False)
    except Exception as exc:  # noqa: BLE001 - a crashed run is just an infeasible sample
        log.warning("v_w=%g (%g, %g): simulation failed: %s", v_w, v_trac, v_retr, exc)
        return SweepRow(v_w, v_trac, v_retr, INFEASIBLE_POWER, 0, reason=f"error:{type(exc).__name__}")
    m = res.final
    if not res.feasible:
        return SweepRow(v_w, v_trac, v_retr, INFEASIBLE_POWER, 0, m.p_trac, m.p_retr, m.f_trac, m.f_retr,
                        res.reason)
    return SweepRow(v_w, v_trac, v_retr, m.p_cycle, 1, m.p_trac, m.p_retr, m.f_trac, m.f_retr)


def _evaluate_star(args):
    return evaluate_pair(*args)


class PowerDataset:
    """Rows of (v_w, v_trac, v_retr, P, s), kept in insertion order."""

    def __init__(self, rows=()):
        self.rows: list[SweepRow] = list(rows)

    def __len__(self):
        return len(self.rows)

    def append(self, row: SweepRow):
        self.rows.append(row)

    @property
    def winds(self) -> list[float]:
        return sorted({r.v_w for r in self.rows})

    def slice(self, v_w: float) -> list[SweepRow]:
        return [r for r in self.rows if r.v_w == v_w]

    def sorted(self) -> "PowerDataset":
        return PowerDataset(sorted(self.rows, key=lambda r: (r.v_w, r.v_trac, r.v_retr)))

    def arrays(self, v_w: float) -> tuple[np.ndarray, np.ndarray]:
        rows = self.slice(v_w)
        x = np.array([(r.v_trac, r.v_retr) for r in rows], dtype=float).reshape(-1, 2)
        y = np.array([r.power for r in rows], dtype=float)
        return x, y

    def to_csv(self, path):
        write_csv(path, DATASET_COLUMNS, [r.as_dict() for r in self.rows])

    @classmethod
    def from_csv(cls, path) -> "PowerDataset":
        rows = []
        with open(path, newline="") as fh:
            for d in csv.DictReader(fh):
                rows.append(SweepRow(float(d["v_w"]), float(d["v_trac"]), float(d["v_retr"]),
                                     float(d["P_cycle_W"]), int(d["feasible"]), float(d["P_trac_W"]),
                                     float(d["P_retr_W"]), float(d["F_trac_N"]), float(d["F_retr_N"]),
                                     d["reason"]))
        return cls(rows)


def run_sweep(grid: SweepGrid, cfg: SimConfig, workers: int = 1) -> PowerDataset:
    """One closed-loop evaluation per (wind, pair); output order is the grid order.

    ``workers > 1`` dispatches to a process pool. Results are assembled by
    grid index, so the dataset does not depend on the schedule.
    """
    jobs = [(cfg, w, vt, vr) for w in grid.winds for vt, vr in grid.pairs(w)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_evaluate_star, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        rows = []
        for k, job in enumerate(jobs):
            rows.append(_evaluate_star(job))
            if (k + 1) % 49 == 0:
                log.info("sweep: %d/%d pairs done", k + 1, len(jobs))
    return PowerDataset(rows)


# ---------------------------------------------------------------------------
# response surface


@dataclass
class ResponseSurface:
    """Gaussian RBF surrogate P(v_trac, v_retr) for one wind speed.

    Inputs are standardised with ``mean``/``scale`` before the kernel is
    applied, so ``sigma`` is dimensionless. ``offset`` (the median training
    power) is added back, which makes the fit invariant to a constant shift
    of the data.
    """

    centers: np.ndarray
    weights: np.ndarray
    sigma: float
    mu: float
    mean: np.ndarray
    scale: np.ndarray
    offset: float
    v_w: float = float("nan")

    def _z(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def _kernel(self, z):
        zc = (self.centers - self.mean) / self.scale
        d2 = ((z[:, None, :] - zc[None, :, :]) ** 2).sum(axis=-1)
        return np.exp(-0.5 * d2 / self.sigma ** 2), zc

    def __call__(self, v_trac, v_retr):
        vt, vr = np.broadcast_arrays(np.asarray(v_trac, float), np.asarray(v_retr, float))
        z = self._z(np.stack([vt.ravel(), vr.ravel()], axis=1))
        out = np.empty(len(z))
        for s in range(0, len(z), 4096):  # bound the kernel-matrix memory
            phi, _ = self._kernel(z[s:s + 4096])
            out[s:s + 4096] = phi @ self.weights
        return (out + self.offset).reshape(vt.shape)

    def gradient(self, v_trac: float, v_retr: float) -> np.ndarray:
        z = self._z([[v_trac, v_retr]])
        phi, zc = self._kernel(z)
        dz = -(z[0] - zc) / self.sigma ** 2 * (phi[0] * self.weights)[:, None]
        return dz.sum(axis=0) / self.scale

    def residuals(self, targets) -> np.ndarray:
        return self(self.centers[:, 0], self.centers[:, 1]) - np.asarray(targets, float)


def default_sigma(z: np.ndarray) -> float:
    """Median pairwise distance between standardised centres."""
    return float(np.median(pdist(z)))


def penalty_floor(y, threshold: float = FEASIBLE_THRESHOLD) -> np.ndarray:
    """Replace placeholder powers by a value one feasible range below the worst feasible one.

    A -1e6 W cliff next to powers of order 1e4 W makes any Gaussian
    expansion overshoot by 1e5 W across the slice; the floored target keeps
    penalised points below every feasible value without the ringing.
    Slices with no feasible point are returned unchanged.
    """
    y = np.asarray(y, dtype=float)
    bad = y <= threshold
    if not bad.any() or bad.all():
        return y.copy()
    good = y[~bad]
    span = max(good.max() - good.min(), abs(good.max()), 1.0)
    return np.where(bad, good.min() - span, y)


def fit_response_surface(x, y, sigma: float | None = None, mu: float = 1e-6, v_w: float = float("nan"),
                         floor_penalties: bool = True, rcond: float = 1e-13) -> ResponseSurface:
    """Ridge-regularised Gaussian RBF fit with one basis function per data point.

    Minimises ``||Phi theta - (y - median y)||^2 + mu ||theta||^2``. With
    ``mu = 0`` the surface interpolates the data, which requires a
    numerically non-singular kernel matrix. Placeholder (infeasible) targets
    are floored first, see :func:`penalty_floor`.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    y = np.asarray(y, dtype=float)
    if len(x) < 3 or len(y) != len(x):
        raise ValueError(f"need at least 3 data points with matching targets, got {len(x)}")
    if floor_penalties:
        y = penalty_floor(y)
    if mu < 0 or not math.isfinite(mu):
        raise ValueError(f"regularisation weight must be >= 0, got {mu}")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = (x - mean) / scale
    if sigma is None:
        sigma = default_sigma(z)
    if not sigma > 0:
        raise ValueError(f"kernel width must be positive, got {sigma}")
    offset = float(np.median(y))
    d2 = ((z[:, None, :] - z[None, :, :]) ** 2).sum(axis=-1)
    phi = np.exp(-0.5 * d2 / sigma ** 2)
    if mu == 0:
        s = np.linalg.svd(phi, compute_uv=False)
        if s[-1] <= rcond * s[0]:
            raise np.linalg.LinAlgError(
                f"kernel matrix is rank deficient (condition {s[0] / max(s[-1], 1e-300):.3g}); use mu > 0")
        theta = np.linalg.solve(phi, y - offset)
    else:
        # augmented least squares avoids squaring the condition number
        a = np.vstack([phi, math.sqrt(mu) * np.eye(len(x))])
        b = np.concatenate([y - offset, np.zeros(len(x))])
        theta = np.linalg.lstsq(a, b, rcond=None)[0]
    if not np.all(np.isfinite(theta)):
        raise np.linalg.LinAlgError("non-finite surface weights")
    return ResponseSurface(x.copy(), theta, float(sigma), float(mu), mean, scale, offset, v_w)


def maximize_surface(surface: ResponseSurface, bounds, n_scan: int = 401,
                     threshold: float = FEASIBLE_THRESHOLD) -> tuple[float, float]:
    """Dense scan of the box, then bounded gradient ascent from the best node.

    ``bounds`` is ((vt_lo, vt_hi), (vr_lo, vr_hi)).
    """
    (a0, a1), (b0, b1) = bounds
    if not (a0 <= a1 and b0 <= b1):
        raise ValueError(f"malformed bounds {bounds}")
    vt = np.linspace(a0, a1, n_scan)
    vr = np.linspace(b0, b1, n_scan)
    gt, gr = np.meshgrid(vt, vr, indexing="ij")
    values = surface(gt, gr)
    k = int(np.argmax(values))
    best = values.flat[k]
    if best <= threshold:
        raise NoFeasibleRegion("no feasible region: response surface never exceeds the infeasibility threshold")
    x0 = np.array([gt.flat[k], gr.flat[k]])
    res = minimize(lambda p: -float(surface(p[0], p[1])), x0, jac=lambda p: -surface.gradient(p[0], p[1]),
                   method="L-BFGS-B", bounds=[(a0, a1), (b0, b1)])
    x = np.clip(res.x, [a0, b0], [a1, b1])
    if float(surface(x[0], x[1])) < best:
        x = x0
    return float(x[0]), float(x[1])


def bounds_of(x) -> tuple[tuple[float, float], tuple[float, float]]:
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    return (float(x[:, 0].min()), float(x[:, 0].max())), (float(x[:, 1].min()), float(x[:, 1].max()))


# ---------------------------------------------------------------------------
# certification and manifold


@dataclass
class OptimalPoint:
    v_w: float
    v_trac: float
    v_retr: float
    p_hat: float
    p_cycle: float = float("nan")
    f_trac: float = float("nan")
    f_retr: float = float("nan")
    verified: bool = False
    iterations: int = 0
    diagnostic: str = ""

    def as_dict(self) -> dict:
        return {"v_w": self.v_w, "v_trac": self.v_trac, "v_retr": self.v_retr, "P_hat_W": self.p_hat,
                "P_cycle_W": self.p_cycle, "F_trac_N": self.f_trac, "F_retr_N": self.f_retr,
                "verified": int(self.verified), "iterations": self.iterations}


def certify_optimum(dataset: PowerDataset, v_w: float, cfg: SimConfig, sigma: float | None = None,
                    mu: float = 1e-6, max_iter: int = 10, n_scan: int = 401) -> OptimalPoint:
    """Fit, maximise and simulate until the surrogate optimum is feasible.

    Each infeasible candidate is appended to ``dataset`` (in place) with the
    placeholder power before refitting, so the loop makes progress.
    """
    x, _ = dataset.arrays(v_w)
    if len(x) == 0:
        raise ValueError(f"dataset has no rows at v_w={v_w}")
    bounds = bounds_of(x)
    point = None
    for it in range(1, max_iter + 1):
        x, y = dataset.arrays(v_w)
        surface = fit_response_surface(x, y, sigma=sigma, mu=mu, v_w=v_w)
        vt, vr = maximize_surface(surface, bounds, n_scan=n_scan)
        p_hat = float(surface(vt, vr))
        row = evaluate_pair(cfg, v_w, vt, vr)
        point = OptimalPoint(v_w, vt, vr, p_hat, iterations=it)
        if row.feasible:
            point.p_cycle, point.f_trac, point.f_retr = row.power, row.f_trac, row.f_retr
            point.verified = True
            return point
        log.info("v_w=%g: candidate (%.3f, %.3f) infeasible (%s); refitting", v_w, vt, vr, row.reason)
        dataset.append(row)
    point.diagnostic = f"no feasible candidate after {max_iter} iterations"
    log.warning("v_w=%g: %s", v_w, point.diagnostic)
    return point


@dataclass(frozen=True)
class ManifoldFit:
    model: ManifoldModel
    r2_trac: float
    r2_retr: float

    def as_dict(self) -> dict:
        return {"K_trac": self.model.k_trac, "K_retr": self.model.k_retr,
                "r2_trac": self.r2_trac, "r2_retr": self.r2_retr}


def fit_through_origin(v2, force) -> tuple[float, float]:
    """Least-squares slope K of F = K v^2 and its coefficient of determination.

    R^2 uses the centred total sum of squares, 1 - SS_res / SS_tot.
    """
    v2 = np.asarray(v2, dtype=float)
    f = np.asarray(force, dtype=float)
    k = float(np.dot(f, v2) / np.dot(v2, v2))
    ss_res = float(np.sum((f - k * v2) ** 2))
    ss_tot = float(np.sum((f - f.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return k, r2


def fit_manifold(points) -> ManifoldFit:
    pts = sorted((p for p in points if p.verified), key=lambda p: (p.v_w, p.v_trac, p.v_retr))
    if len(pts) < 2:
        raise ValueError(f"need at least 2 verified optimal points, got {len(pts)}")
    k_t, r2_t = fit_through_origin([p.v_trac ** 2 for p in pts], [p.f_trac for p in pts])
    k_r, r2_r = fit_through_origin([p.v_retr ** 2 for p in pts], [abs(p.f_retr) for p in pts])
    return ManifoldFit(ManifoldModel(k_t, k_r), r2_t, r2_r)


def read_manifold(path) -> ManifoldModel:
    with open(path, newline="") as fh:
        row = next(csv.DictReader(fh))
    return ManifoldModel(float(row["K_trac"]), float(row["K_retr"]))


# ---------------------------------------------------------------------------
# end-to-end


@dataclass
class DesignResult:
    dataset: PowerDataset
    surfaces: dict
    optima: list[OptimalPoint]
    manifold: ManifoldFit | None
    skipped: list[float]


def run_design(grid: SweepGrid, cfg: SimConfig, sigma: float | None = None, mu: float = 1e-6,
               max_iter: int = 10, workers: int = 1, dataset: PowerDataset | None = None) -> DesignResult:
    """Sweep, then per wind: fit, maximise, certify; finally regress the manifold."""
    if dataset is None:
        dataset = run_sweep(grid, cfg, workers=workers)
    surfaces, optima, skipped = {}, [], []
    for w in grid.winds:
        if not any(r.feasible for r in dataset.slice(w)):
            log.warning("v_w=%g: no feasible pair in the sweep; slice skipped", w)
            skipped.append(w)
            continue
        try:
            opt = certify_optimum(dataset, w, cfg, sigma=sigma, mu=mu, max_iter=max_iter)
        except NoFeasibleRegion as exc:
            log.warning("v_w=%g: %s; slice skipped", w, exc)
            skipped.append(w)
            continue
        x, y = dataset.arrays(w)
        surfaces[w] = fit_response_surface(x, y, sigma=sigma, mu=mu, v_w=w)
        optima.append(opt)
    verified = [p for p in optima if p.verified]
    manifold = fit_manifold(verified) if len(verified) >= 2 else None
    return DesignResult(dataset, surfaces, optima, manifold, skipped)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])


def surface_rows(surface: ResponseSurface, n: int = 101) -> list[dict]:
    """Surface values on an n x n grid over the data bounds (level-set export)."""
    (a0, a1), (b0, b1) = bounds_of(surface.centers)
    vt, vr = np.meshgrid(np.linspace(a0, a1, n), np.linspace(b0, b1, n), indexing="ij")
    p = surface(vt, vr)
    return [{"v_trac": float(a), "v_retr": float(b), "P_hat_W": float(c)}
            for a, b, c in zip(vt.ravel(), vr.ravel(), p.ravel())]
