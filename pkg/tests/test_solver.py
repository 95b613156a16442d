import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemoconsume.grid import Annulus, Interval, Rectangle, make_grid
from chemoconsume.initial_data import InitialPair, gen_test_function, prepare_initial
from chemoconsume.solver import (
    DT_LADDER,
    SimParams,
    SimState,
    Solver,
    SolverError,
    cfl_dt,
    clip_redistribute,
    flux_u,
    initial_state,
    run,
    snap_dt,
)


def test_homogeneous_state_is_exact():
    g = make_grid(Annulus(1.0, 2.0), (8, 16))
    mu, eps = 1.3, 0.1
    ip = InitialPair(g, np.full(g.shape, mu), np.full(g.shape, 2.0))
    traj = run(ip, SimParams(eps=eps, t_end=0.5, cfl_safety=0.45))
    exact = 2.0 * np.exp(-mu * traj.times / (1 + eps * mu))
    assert np.max(np.abs(traj.column("v_Linf") - exact) / exact) < 1e-12
    assert np.max(np.abs(traj.final.u - mu)) < 1e-13


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 1000), eps=st.floats(0.01, 0.9), gi=st.integers(0, 2))
def test_mass_conserved_and_fields_nonnegative(seed, eps, gi):
    g = [make_grid(Interval(1.0), (24,)), make_grid(Rectangle(1.0, 1.0), (8, 8)), make_grid(Annulus(1.0, 2.0), (8, 16))][gi]
    u0 = gen_test_function(seed, g, "bump_plus_floor") * 5
    v0 = gen_test_function(seed + 1, g, "low_fourier_positive")
    ip = InitialPair(g, u0, v0)
    traj = run(ip, SimParams(eps=eps, t_end=0.02, cfl_safety=0.9, track_dissipation=False))
    m = traj.column("mass")
    assert np.max(np.abs(m - m[0])) <= 1e-13 * m[0]
    assert traj.column("min_u").min() >= 0 and traj.column("min_v").min() >= 0
    for col in ("v_L1", "v_L2", "v_Linf"):
        y = traj.column(col)
        assert np.all(np.diff(y) <= 1e-12 * y[:-1])


def test_heat_mode_converges_second_order():
    # v0 = 0 decouples u, which then solves the heat equation exactly
    errs = []
    T = 0.05
    for n in (16, 32, 64):
        g = make_grid(Interval(1.0), (n,))
        x = g.centers[0]
        ip = InitialPair(g, 1.0 + 0.5 * np.cos(math.pi * x), np.zeros(n))
        traj = run(ip, SimParams(eps=0.1, t_end=T, dt=0.1 / n**2))
        exact = 1.0 + 0.5 * math.exp(-(math.pi**2) * T) * np.cos(math.pi * x)
        errs.append(np.max(np.abs(traj.final.u - exact)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), orders


def test_cfl_dt_formula():
    g = make_grid(Rectangle(1.0, 2.0), (10, 10))
    s = SimState(0.0, np.ones(g.shape), np.ones(g.shape))
    assert cfl_dt(g, s, 0.1, 0.5) == pytest.approx(0.5 * 0.1**2 / 4)
    assert cfl_dt(g, s, 0.1, 0.5, dt_max=1e-4) == 1e-4
    # a steep signal makes the transport limit bind
    X, _ = g.cartesian()
    steep = SimState(0.0, np.ones(g.shape), 1 + 1e3 * X)
    assert cfl_dt(g, steep, 0.1, 1.0) < 0.1**2 / 4
    with pytest.raises(ValueError):
        cfl_dt(g, s, 0.1, 1.5)


def test_snap_dt_ladder():
    for dt in (1e-3, 3.3e-4, 7.77e-6):
        s = snap_dt(dt, 1e-2)
        assert s <= dt and s > dt * 2 ** (-1 / DT_LADDER)
        k = DT_LADDER * math.log2(1e-2 / s)
        assert abs(k - round(k)) < 1e-9
    assert snap_dt(1.0, 1e-2) == 1e-2


def test_implicit_diffusion_conserves_and_smooths():
    g = make_grid(Annulus(1.0, 2.0), (12, 24))
    solver = Solver(g, SimParams(eps=0.1, t_end=1.0, dt=1e-2))
    v = gen_test_function(5, g, "low_fourier_positive")
    w = solver.implicit_diffusion(v, 1e-2)
    assert g.integrate(w) == pytest.approx(g.integrate(v), rel=1e-12)
    assert w.max() <= v.max() and w.min() >= v.min()
    assert g.dirichlet_energy(w) < g.dirichlet_energy(v)


def test_flux_vanishes_on_walls_and_upwinds():
    g = make_grid(Interval(1.0), (10,))
    u = np.linspace(1, 2, 10)
    v = np.linspace(0, 1, 10)
    (F,) = flux_u(g, u, v, 0.0)
    assert F[0] == 0 and F[-1] == 0
    # v increases to the right, so the donor is the left cell
    h = g.spacing[0]
    assert F[3] == pytest.approx((u[3] - u[2]) / h - u[2] * (v[3] - v[2]) / h)


def test_clip_redistribute_keeps_mass():
    g = make_grid(Interval(1.0), (6,))
    u = np.array([1.0, -0.1, 0.5, 2.0, -0.2, 1.0])
    out, clipped = clip_redistribute(g, u)
    assert np.all(out >= 0)
    assert g.integrate(out) == pytest.approx(g.integrate(u), rel=1e-14)
    assert clipped == pytest.approx(0.3 / 6)


@pytest.mark.parametrize(
    "kw,msg",
    [
        ({"eps": 0.0, "t_end": 1.0, "dt": 0.1}, "eps"),
        ({"eps": 0.1, "t_end": -1.0, "dt": 0.1}, "t_end"),
        ({"eps": 0.1, "t_end": 1.0}, "exactly one"),
        ({"eps": 0.1, "t_end": 1.0, "dt": 0.1, "cfl_safety": 0.5}, "exactly one"),
        ({"eps": 0.1, "t_end": 1.0, "cfl_safety": 1.5}, "safety"),
    ],
)
def test_sim_params_validation(kw, msg):
    with pytest.raises(ValueError, match=msg):
        SimParams(**kw)


def test_non_finite_state_raises_solver_error():
    g = make_grid(Interval(1.0), (8,))
    solver = Solver(g, SimParams(eps=0.1, t_end=1.0, dt=1e-3))
    u = np.ones(8)
    u[3] = np.nan
    with pytest.raises(SolverError, match="non-finite"):
        solver.step(SimState(0.0, u, np.ones(8)), mu=1.0)


def test_run_records_cadence_and_snapshots():
    g = make_grid(Interval(1.0), (16,))
    ip = prepare_initial(g, "gaussian_bump", {}, 0.1)
    traj = run(ip, SimParams(eps=0.1, t_end=0.01, dt=1e-3, diag_cadence=3, field_cadence=5, track_dissipation=False))
    assert traj.final.steps == 10
    assert [r.t for r in traj.records] == pytest.approx([0.0, 0.003, 0.006, 0.009, 0.01])
    assert len(traj.snapshots) == 3 and traj.snapshots[-1][0] == pytest.approx(0.01)


def test_gradient_dissipation_budget():
    # 2 int int |grad v|^2 + int v(T)^2 <= int v0^2, since consumption only removes signal
    g = make_grid(Annulus(1.0, 2.0), (16, 32))
    ip = prepare_initial(g, "two_bumps", {}, 0.1)
    traj = run(ip, SimParams(eps=0.1, t_end=0.2, cfl_safety=0.45, track_dissipation=False))
    lhs = 2 * traj.final.cumulative["int_gradv_sq"] + g.integrate(traj.final.v**2)
    assert lhs <= g.integrate(ip.v0**2)
