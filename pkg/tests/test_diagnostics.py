import math

import numpy as np
import pytest
from scipy.integrate import quad

from chemoconsume.diagnostics import (
    RECORD_COLUMNS,
    SeparableTestFunction,
    boundary_term,
    cosine_cutoff,
    delta_gate,
    dissipation_D,
    energy_F,
    energy_residual,
    exponential_rate,
    first_passage,
    fisher_information,
    growth_fit,
    make_record,
    max_delta,
    small_signal_functional,
    weak_residual,
    write_records_csv,
)
from chemoconsume.grid import Annulus, Interval, Rectangle, make_grid
from chemoconsume.initial_data import InitialPair, prepare_initial
from chemoconsume.solver import SimParams, SimState, Solver, initial_state, run


def test_fisher_information_matches_quadrature():
    exact = quad(lambda x: (math.pi * math.sin(math.pi * x)) ** 2 / (2 + math.cos(math.pi * x)), 0, 1)[0]
    g = make_grid(Interval(1.0), (512,))
    u = 2 + np.cos(math.pi * g.centers[0])
    assert fisher_information(g, u) == pytest.approx(exact, rel=1e-3)


def test_fisher_information_zero_cells():
    g = make_grid(Interval(1.0), (6,))
    assert fisher_information(g, np.array([0, 0, 1, 1, 0, 0.0]), strict=False) > 0
    with pytest.raises(ValueError):
        fisher_information(g, np.array([0, 0, 1, 1, 0, 0.0]), strict=True)
    assert fisher_information(g, np.zeros(6)) == 0.0


@pytest.mark.parametrize("geom,res", [(Interval(1.0), (16,)), (Annulus(1.0, 2.0), (8, 16)), (Rectangle(1, 1), (6, 6))])
def test_homogeneous_state_has_zero_energy_and_dissipation(geom, res):
    g = make_grid(geom, res)
    u, v = np.full(res, 1.7), np.full(res, 0.4)
    assert energy_F(g, u, v, 1.7) == pytest.approx(0.0, abs=1e-13)
    assert dissipation_D(g, u, v, 0.1) == pytest.approx((0.0, 0.0, 0.0), abs=1e-12)
    assert boundary_term(g, v) == pytest.approx(0.0, abs=1e-12)


def test_energy_requires_positive_signal():
    g = make_grid(Interval(1.0), (8,))
    v = np.ones(8)
    v[2] = 0
    with pytest.raises(ValueError, match=r"cell \(2,\)"):
        energy_F(g, np.ones(8), v, 1.0)


def test_boundary_term_is_exactly_zero_on_flat_boundaries():
    for geom, res in ((Interval(1.0), (20,)), (Rectangle(1.0, 2.0), (10, 12))):
        g = make_grid(geom, res)
        v = np.random.default_rng(0).uniform(1, 2, res)
        assert boundary_term(g, v) == 0.0


def test_annulus_boundary_term_converges_to_quadrature():
    # v = 2 + cos 3 theta: the integrand lives on both circles with opposite signs
    I = quad(lambda t: math.sin(3 * t) ** 2 / (2 + math.cos(3 * t)), 0, 2 * math.pi)[0]
    exact = 0.5 * 18 * (1 - 2 / 8) * I
    errs = []
    for n in (32, 64, 128):
        g = make_grid(Annulus(1.0, 2.0), (n, 2 * n))
        _, th = g.mesh()
        errs.append(abs(boundary_term(g, 2 + np.cos(3 * th)) - exact))
    assert errs[2] < errs[1] < errs[0]
    assert errs[2] < 0.05 * exact


def test_energy_residual_shrinks_under_refinement():
    peaks = []
    for n in (16, 32, 64):
        g = make_grid(Interval(1.0), (n,))
        # a tall bump stays pre-asymptotic (upwind and centered errors cancel) until n ~ 256
        ip = prepare_initial(g, "gaussian_bump", {"width": 0.2, "amp": 0.5}, 0.1, mollify=False)
        traj = run(ip, SimParams(eps=0.1, t_end=0.02, dt=0.2 / n**2))
        peaks.append(np.nanmax(np.abs(traj.column("energy_residual"))))
    orders = np.log2(np.array(peaks[:-1]) / np.array(peaks[1:]))
    assert np.all(orders >= 1), orders


def test_growth_fit_recovers_power_law():
    t = np.linspace(1, 100, 200)
    fit = growth_fit(t, 3.0 * t**0.75, (10, 100), "q")
    assert fit.beta == pytest.approx(0.75, abs=1e-12) and fit.C == pytest.approx(3.0, rel=1e-10)
    assert growth_fit(t, np.zeros_like(t), (10, 100)).status == "quantity-zero"
    with pytest.raises(ValueError, match="need >= 10"):
        growth_fit(t, t, (10, 12))


def test_first_passage_and_exponential_rate_are_exact_for_exponentials():
    t = np.linspace(0, 10, 41)
    y = 2.0 * np.exp(-0.7 * t)
    tp = first_passage(t, y, 0.01)
    assert tp == pytest.approx(math.log(200) / 0.7, rel=1e-12)
    assert first_passage(t, y, 1e-9) is None
    rate, _ = exponential_rate(t, y)
    assert rate == pytest.approx(0.7, rel=1e-10)


def test_delta_gate_boundary():
    for p in (3.5, 4.0, 6.0):
        d = max_delta(p)
        assert abs(delta_gate(p, d)) < 1e-10 and delta_gate(p, 1.01 * d) > 0
    with pytest.raises(ValueError, match="exceed 3"):
        max_delta(2.0)


def test_small_signal_functional_preconditions():
    g = make_grid(Interval(1.0), (8,))
    u = np.ones(8)
    assert small_signal_functional(g, u, np.full(8, 0.001), 4.0, 0.02) == pytest.approx(16 / 0.019)
    with pytest.raises(ValueError, match="delta/2"):
        small_signal_functional(g, u, np.full(8, 0.5), 4.0, 0.02)
    with pytest.raises(ValueError, match="gate"):
        small_signal_functional(g, u, np.full(8, 0.001), 4.0, 0.5)


def test_weak_residual_vanishes_for_homogeneous_data_and_checks_cutoff():
    g = make_grid(Interval(1.0), (16,))
    ip = InitialPair(g, np.full(16, 1.0), np.full(16, 1.0))
    T = 0.2
    chi, dchi = cosine_cutoff(T)
    psi = np.cos(math.pi * g.centers[0]) + 2
    res = []
    for dt in (2e-4, 1e-4):
        traj = run(ip, SimParams(eps=0.1, t_end=T, dt=dt, field_cadence=1, track_dissipation=False))
        res.append(np.abs(weak_residual(g, traj.snapshots, SeparableTestFunction(psi, chi, dchi), 0.1)))
    # only the trapezoid rule in time is left, so the residual is O(dt^2)
    assert np.all(res[1] < 1e-6)
    assert np.all(np.log2(res[0] / res[1]) > 1.9)
    with pytest.raises(ValueError, match="vanish"):
        weak_residual(g, traj.snapshots, SeparableTestFunction(psi, lambda t: 1.0, lambda t: 0.0), 0.1)


def test_record_marks_energy_undefined_without_positive_signal(tmp_path):
    g = make_grid(Interval(1.0), (8,))
    st = SimState(0.0, np.ones(8), np.zeros(8))
    rec = make_record(g, st, None, SimParams(eps=0.1, t_end=1.0, dt=0.1), 1.0)
    assert math.isnan(rec.F) and math.isnan(rec.D1) and rec.mass == pytest.approx(1.0)
    write_records_csv(tmp_path / "d.csv", [rec])
    head = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert head.split(",") == RECORD_COLUMNS
