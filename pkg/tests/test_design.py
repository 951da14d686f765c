"""Sweep bookkeeping, RBF response surface, maximisation, certification and manifold regression."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awereel import design
from awereel.cycle import INFEASIBLE_POWER, SimConfig
from awereel.design import (NoFeasibleRegion, OptimalPoint, PowerDataset, SweepGrid, SweepRow, bounds_of,
                            certify_optimum, evaluate_pair, fit_manifold, fit_response_surface,
                            fit_through_origin, maximize_surface, penalty_floor, run_sweep)


def bowl(vt, vr, center=(1.6, -4.2), curv=(3000.0, 400.0), peak=12000.0):
    return peak - curv[0] * (vt - center[0]) ** 2 - curv[1] * (vr - center[1]) ** 2


def grid_points(n, vt=(0.8, 2.6), vr=(-6.5, -1.5)):
    a, b = np.meshgrid(np.linspace(*vt, n), np.linspace(*vr, n), indexing="ij")
    return np.column_stack([a.ravel(), b.ravel()])


# -- sweep -----------------------------------------------------------------------------

def test_relative_grid_scales_with_wind():
    g = SweepGrid(winds=(8.0,), trac_speeds=(0.1, 0.2), retr_speeds=(-0.5,))
    assert g.pairs(8.0) == [(0.8, -4.0), (1.6, -4.0)]
    assert SweepGrid(trac_speeds=(1.0,), retr_speeds=(-2.0,), relative=False).pairs(9.0) == [(1.0, -2.0)]
    assert SweepGrid().size == (8, 49)


@pytest.mark.parametrize("kw", [dict(winds=()), dict(winds=(0.0,)), dict(trac_speeds=(-1.0,)),
                                dict(retr_speeds=(0.5,))])
def test_malformed_grid_rejected(kw):
    with pytest.raises(ValueError):
        SweepGrid(**kw)


def test_pair_beyond_winch_limit_is_penalised_without_simulating():
    row = evaluate_pair(SimConfig(), 8.0, 1.5, -50.0)
    assert row.power == INFEASIBLE_POWER == -1e6
    assert row.feasible == 0 and row.reason == "speed_limit"


def test_single_feasible_pair_gives_one_finite_row():
    ds = run_sweep(SweepGrid(winds=(9.0,), trac_speeds=(2.0,), retr_speeds=(-4.0,), relative=False), SimConfig())
    assert len(ds) == 1
    r = ds.rows[0]
    assert r.feasible == 1 and math.isfinite(r.power) and r.power > 0


def test_sweep_keeps_grid_order_and_permutation_leaves_sorted_dataset_unchanged():
    # every pair beyond the winch limit: the bookkeeping is exercised without any simulation
    a = SweepGrid(winds=(7.0, 9.0), trac_speeds=(20.0, 30.0), retr_speeds=(-40.0, -50.0), relative=False)
    b = SweepGrid(winds=(9.0, 7.0), trac_speeds=(30.0, 20.0), retr_speeds=(-50.0, -40.0), relative=False)
    da, db = run_sweep(a, SimConfig()), run_sweep(b, SimConfig())
    assert [(r.v_w, r.v_trac, r.v_retr) for r in da.rows][:2] == [(7.0, 20.0, -40.0), (7.0, 20.0, -50.0)]
    assert da.sorted().rows == db.sorted().rows


def test_dataset_csv_round_trip(tmp_path):
    ds = PowerDataset([SweepRow(7.0, 1.2, -3.0, 5321.25, 1, 9000.5, -1200.0, 9800.0, 1100.0),
                       SweepRow(7.0, 2.4, -1.4, INFEASIBLE_POWER, 0, reason="not_periodic")])
    ds.to_csv(tmp_path / "d.csv")
    back = PowerDataset.from_csv(tmp_path / "d.csv")
    assert back.rows[0] == ds.rows[0]
    assert back.rows[1].power == INFEASIBLE_POWER and back.rows[1].reason == "not_periodic"
    back.to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_bytes() == (tmp_path / "d.csv").read_bytes()


# -- response surface ------------------------------------------------------------------

def test_interpolates_every_point_without_regularisation():
    x = np.array([[1.0, -3.0], [1.5, -4.0], [2.0, -2.5], [1.2, -5.0], [1.8, -3.6]])
    y = np.array([6000.0, 7400.0, 5100.0, 6600.0, 7900.0])
    s = fit_response_surface(x, y, mu=0.0)
    np.testing.assert_allclose(s(x[:, 0], x[:, 1]), y, rtol=1e-6)


def test_rank_deficient_kernel_without_regularisation_advises_mu():
    x = np.array([[1.0, -3.0], [1.0, -3.0], [2.0, -2.5], [1.2, -5.0]])
    with pytest.raises(np.linalg.LinAlgError, match="mu > 0"):
        fit_response_surface(x, np.arange(4.0), mu=0.0)


def test_too_few_points_rejected():
    with pytest.raises(ValueError):
        fit_response_surface([[1.0, -2.0], [2.0, -3.0]], [1.0, 2.0])


def test_quadratic_bowl_on_5x5_grid_maximum_within_one_grid_spacing():
    x = grid_points(5)
    s = fit_response_surface(x, bowl(x[:, 0], x[:, 1]))
    vt, vr = maximize_surface(s, bounds_of(x))
    assert abs(vt - 1.6) <= 0.45 and abs(vr + 4.2) <= 1.25


@pytest.mark.parametrize("seed", range(5))
def test_quadratic_bowl_on_7x7_grid_argmax_within_1cm_per_s(seed):
    rng = np.random.default_rng(seed)
    center = (rng.uniform(1.2, 2.2), rng.uniform(-5.5, -2.5))
    curv = (rng.uniform(1000, 6000), rng.uniform(100, 800))
    x = grid_points(7)
    s = fit_response_surface(x, bowl(x[:, 0], x[:, 1], center, curv), mu=1e-12)
    vt, vr = maximize_surface(s, bounds_of(x))
    assert abs(vt - center[0]) <= 1e-2 and abs(vr - center[1]) <= 1e-2


def test_gaussian_bump_centre_recovered():
    x = grid_points(9)
    c = np.array([1.55, -3.85])
    y = 5000.0 * np.exp(-0.5 * (((x[:, 0] - c[0]) / 0.5) ** 2 + ((x[:, 1] - c[1]) / 1.5) ** 2))
    # the bump is ~0.9 standard deviations wide in both inputs; a kernel of similar width represents it well
    s = fit_response_surface(x, y, sigma=0.8, mu=0.0)
    assert np.allclose(maximize_surface(s, bounds_of(x)), c, atol=1e-3)


def test_doubling_mu_never_decreases_training_residual():
    rng = np.random.default_rng(7)
    x = grid_points(6)
    y = bowl(x[:, 0], x[:, 1]) + rng.normal(0, 300, len(x))
    sse = [float(np.sum(fit_response_surface(x, y, mu=mu).residuals(y) ** 2))
           for mu in 1e-6 * 2.0 ** np.arange(12)]
    assert all(b >= a * (1 - 1e-9) for a, b in zip(sse, sse[1:]))


@given(st.floats(-5e4, 5e4))
@settings(max_examples=20)
def test_constant_shift_moves_surface_but_not_argmax(shift):
    x = grid_points(5)
    y = bowl(x[:, 0], x[:, 1])
    s0 = fit_response_surface(x, y)
    s1 = fit_response_surface(x, y + shift)
    probe = np.array([1.3, 1.9]), np.array([-3.1, -5.2])
    np.testing.assert_allclose(s1(*probe) - s0(*probe), shift, atol=1e-6 * (1 + abs(shift)))
    assert np.allclose(maximize_surface(s0, bounds_of(x)), maximize_surface(s1, bounds_of(x)), atol=1e-6)


def test_penalty_floor_stays_below_every_feasible_value():
    y = np.array([5000.0, 7000.0, INFEASIBLE_POWER, 6500.0])
    f = penalty_floor(y)
    assert f[2] < 5000.0 and f[2] > INFEASIBLE_POWER
    np.testing.assert_array_equal(f[[0, 1, 3]], y[[0, 1, 3]])
    assert np.array_equal(penalty_floor(np.full(3, INFEASIBLE_POWER)), np.full(3, INFEASIBLE_POWER))


def test_argmax_avoids_penalised_corner():
    x = grid_points(6)
    y = bowl(x[:, 0], x[:, 1], center=(2.6, -1.5))
    y[(x[:, 0] > 2.2) & (x[:, 1] > -2.5)] = INFEASIBLE_POWER
    s = fit_response_surface(x, y)
    vt, vr = maximize_surface(s, bounds_of(x))
    assert not (vt > 2.3 and vr > -2.2)


@given(st.integers(0, 10_000))
@settings(max_examples=15)
def test_maximiser_stays_inside_bounds(seed):
    rng = np.random.default_rng(seed)
    x = np.column_stack([rng.uniform(0.5, 3.0, 12), rng.uniform(-7.0, -1.0, 12)])
    s = fit_response_surface(x, rng.normal(8000, 2000, 12))
    (a0, a1), (b0, b1) = b = bounds_of(x)
    vt, vr = maximize_surface(s, b, n_scan=101)
    assert a0 <= vt <= a1 and b0 <= vr <= b1


def test_all_infeasible_surface_has_no_feasible_region():
    x = grid_points(4)
    s = fit_response_surface(x, np.full(len(x), INFEASIBLE_POWER))
    with pytest.raises(NoFeasibleRegion, match="no feasible region"):
        maximize_surface(s, bounds_of(x))


# -- certification ---------------------------------------------------------------------

def _bowl_dataset(v_w=8.0):
    x = grid_points(6)
    return PowerDataset([SweepRow(v_w, a, b, bowl(a, b), 1, f_trac=9000.0, f_retr=1500.0) for a, b in x])


def test_feasible_candidate_is_verified_with_measured_forces(monkeypatch):
    monkeypatch.setattr(design, "evaluate_pair",
                        lambda cfg, w, vt, vr: SweepRow(w, vt, vr, bowl(vt, vr), 1, 0, 0, 9100.0, 1400.0))
    ds = _bowl_dataset()
    p = certify_optimum(ds, 8.0, SimConfig())
    assert p.verified and p.iterations == 1 and len(ds) == 36
    assert (p.f_trac, p.f_retr) == (9100.0, 1400.0)
    q = certify_optimum(ds, 8.0, SimConfig())
    assert (q.v_trac, q.v_retr, q.p_cycle) == (p.v_trac, p.v_retr, p.p_cycle)


def test_infeasible_candidates_grow_dataset_and_move_the_candidate(monkeypatch):
    seen = []

    def fake(cfg, w, vt, vr):
        seen.append((vt, vr))
        ok = len(seen) > 2
        return SweepRow(w, vt, vr, bowl(vt, vr) if ok else INFEASIBLE_POWER, int(ok), f_trac=1.0, f_retr=1.0,
                        reason="" if ok else "max_force")

    monkeypatch.setattr(design, "evaluate_pair", fake)
    ds = _bowl_dataset()
    p = certify_optimum(ds, 8.0, SimConfig())
    assert p.verified and p.iterations == 3
    assert len(ds) == 36 + 2
    assert seen[0] != seen[1] != seen[2]


def test_exhausted_budget_returns_unverified_point_with_diagnostic(monkeypatch):
    monkeypatch.setattr(design, "evaluate_pair",
                        lambda cfg, w, vt, vr: SweepRow(w, vt, vr, INFEASIBLE_POWER, 0, reason="max_force"))
    ds = _bowl_dataset()
    p = certify_optimum(ds, 8.0, SimConfig(), max_iter=3)
    assert not p.verified and "3 iterations" in p.diagnostic and len(ds) == 39


# -- manifold --------------------------------------------------------------------------

def _points(v2, f, vr2=None, fr=None):
    vr2 = v2 if vr2 is None else vr2
    fr = f if fr is None else fr
    return [OptimalPoint(6.5 + i, math.sqrt(a), -math.sqrt(c), 0.0, 0.0, b, d, True)
            for i, (a, b, c, d) in enumerate(zip(v2, f, vr2, fr))]


def test_exact_quadratic_data_recovers_coefficient():
    k, r2 = fit_through_origin([1, 4, 9], [500, 2000, 4500])
    assert k == pytest.approx(500, rel=1e-12) and r2 == pytest.approx(1.0, abs=1e-12)
    m = fit_manifold(_points([1, 4, 9], [500, 2000, 4500], [4, 9, 16], [200, 450, 800]))
    assert m.model.k_trac == pytest.approx(500) and m.model.k_retr == pytest.approx(50)
    assert m.r2_trac == pytest.approx(1.0) and m.r2_retr == pytest.approx(1.0)


@given(st.floats(1e-3, 1e3))
def test_scaling_forces_scales_coefficient(c):
    v2, f = [1.2, 2.5, 3.1, 4.4], [700.0, 1400.0, 1900.0, 2500.0]
    k, r2 = fit_through_origin(v2, f)
    kc, r2c = fit_through_origin(v2, [c * x for x in f])
    assert kc == pytest.approx(c * k, rel=1e-12) and r2c == pytest.approx(r2, abs=1e-12)


@given(st.permutations(range(5)))
def test_manifold_independent_of_point_order(perm):
    pts = _points([1.0, 2.2, 2.9, 4.1, 5.0], [520.0, 1080.0, 1500.0, 2010.0, 2555.0])
    a = fit_manifold(pts)
    b = fit_manifold([pts[i] for i in perm])
    assert a == b


def test_manifold_ignores_unverified_and_needs_two_points():
    pts = _points([1.0, 4.0, 9.0], [500.0, 2000.0, 4500.0])
    pts[2].verified = False
    pts[2].f_trac = 1e9
    assert fit_manifold(pts).model.k_trac == pytest.approx(500)
    with pytest.raises(ValueError, match="2 verified"):
        fit_manifold(pts[:1])
