import math

import numpy as np
import pytest
import sympy as sp
from scipy.integrate import quad

from chemoconsume import inequality_lab as lab
from chemoconsume.grid import Annulus, Interval, Rectangle, make_grid


def test_constant_identity_is_exact():
    n = sp.symbols("n", positive=True)
    assert sp.simplify(2 + 2 * (2 + sp.sqrt(n)) ** 2 - (2 * n + 8 * sp.sqrt(n) + 10)) == 0
    for k in (1, 2, 3):
        assert 2 + 2 * lab.quartic_gradient_constant(k) == pytest.approx(lab.weighted_hessian_constant(k), rel=1e-15)


@pytest.mark.parametrize("geom,res", [(Interval(1.0), (32,)), (Annulus(1.0, 2.0), (8, 16))])
def test_constant_field_passes_trivially(geom, res):
    g = make_grid(geom, res)
    phi = np.full(res, 3.0)
    for check in (lab.check_quartic_gradient, lab.check_weighted_hessian):
        r = check(g, phi)
        assert r.lhs == pytest.approx(0.0, abs=1e-12) and r.ratio == 0.0 and r.passed


def _quad_integrals():
    phi = lambda x: 2 + math.cos(math.pi * x)
    d1 = lambda x: -math.pi * math.sin(math.pi * x)
    d2 = lambda x: -(math.pi**2) * math.cos(math.pi * x)
    lnd2 = lambda x: d2(x) / phi(x) - (d1(x) / phi(x)) ** 2
    quartic = quad(lambda x: d1(x) ** 4 / phi(x) ** 3, 0, 1)[0]
    whess = quad(lambda x: d2(x) ** 2 / phi(x), 0, 1)[0]
    loghess = quad(lambda x: phi(x) * lnd2(x) ** 2, 0, 1)[0]
    return quartic, whess, loghess


def test_cosine_field_matches_quadrature_oracle():
    quartic, whess, loghess = _quad_integrals()
    g = make_grid(Interval(1.0), (1024,))
    phi = 2 + np.cos(math.pi * g.centers[0])
    r1 = lab.check_quartic_gradient(g, phi)
    r2 = lab.check_weighted_hessian(g, phi)
    assert r1.lhs == pytest.approx(quartic, rel=1e-3)
    assert r1.rhs == pytest.approx(9 * loghess, rel=1e-3)
    assert r2.lhs == pytest.approx(whess, rel=1e-3)
    assert r1.ratio < 1 and r2.ratio < 1
    assert quartic < 9 * loghess and whess < 20 * loghess


def test_rejects_nonpositive_and_cornered_domains():
    g = make_grid(Interval(1.0), (8,))
    with pytest.raises(ValueError, match="positive"):
        lab.check_quartic_gradient(g, np.array([1, 1, 0, 1, 1, 1, 1, 1.0]))
    r = make_grid(Rectangle(1.0, 1.0), (8, 8))
    with pytest.raises(ValueError, match="corners"):
        lab.check_weighted_hessian(r, np.ones((8, 8)))
    with pytest.raises(ValueError, match="annulus"):
        lab.check_boundary_control(g, np.ones(8), 1.0, 1.0)


def test_radial_neumann_field_has_vanishing_boundary_term():
    vals = []
    for n in (16, 32, 64):
        g = make_grid(Annulus(1.0, 2.0), (n, 2 * n))
        r, _ = g.mesh()
        phi = 2 + np.cos(math.pi * (r - 1.0))
        vals.append(abs(lab.boundary_gradient_term(g, phi)))
        rep = lab.check_boundary_control(g, phi, 1.0, 2.0)
        assert rep.passed
    orders = np.log2(np.array(vals[:-1]) / np.array(vals[1:]))
    assert np.all(orders > 2), orders


def test_boundary_control_constant_formula():
    c1, c2, eta = 2.0, 2.0, 0.5
    c3 = 3 * 4 * 4 / (2 * 0.5) + 4
    assert lab.boundary_control_constant(eta, c1, c2) == pytest.approx(math.sqrt(2 * c3**3 / eta))
    with pytest.raises(ValueError):
        lab.boundary_control_constant(0.0, c1, c2)


def test_trace_constant_is_deterministic_and_finite():
    g = make_grid(Annulus(1.0, 2.0), (16, 32))
    a = lab.trace_constant(g, samples=40, seed=1)
    assert a == lab.trace_constant(g, samples=40, seed=1)
    assert a[0] == pytest.approx(1.5 * a[1]) and 0.5 < a[1] < 10


def test_ode_bound_explicit_solution():
    # b = 0, lam = 2: y = y0 / (1 + y0 t) <= 1/t
    p = lab.OdeParams(1.0, 0.0, 1.0, 2.0, (0.5, 5.0, 500.0))
    res = lab.ode_comparison(p)
    assert res.passed
    for y0, m in zip(p.y0, res.max_after_tau):
        assert m == pytest.approx(y0 / (1 + y0 * 1.0), rel=1e-6)


def test_ode_equilibrium_stays_put():
    a, b, lam = 2.0, 1.0, 3.0
    y_eq = (b / a) ** (1 / lam)
    res = lab.ode_comparison(lab.OdeParams(a, b, 0.5, lam, (y_eq,)))
    assert res.max_after_tau[0] == pytest.approx(y_eq, rel=1e-8) and res.passed


def test_ode_bound_survives_brute_force():
    v = lab.validate_ode_bound(1.0, 2.0, 0.5, 1.5, n_y0=9)
    assert v["valid"] and 0.1 < v["ratio"] <= 1


def test_ode_params_validation():
    with pytest.raises(ValueError, match="lambda"):
        lab.OdeParams(1, 1, 1, 1.0)
    with pytest.raises(ValueError, match="tau"):
        lab.OdeParams(1, 1, 0, 2.0)
    assert len(lab.ode_sweep_params()) == 81


def test_young_split_trivial_cases_and_random_state():
    g = make_grid(Annulus(1.0, 2.0), (8, 16))
    v = 1 + np.random.default_rng(0).uniform(0, 1, g.shape)
    r = lab.check_flux_young_split(g, np.zeros(g.shape), v, 0.1)
    assert r.lhs == 0 and r.passed
    r = lab.check_flux_young_split(g, np.full(g.shape, 2.0), np.ones(g.shape), 0.1)
    assert r.lhs == 0 and r.rhs > 0 and r.passed
    for seed in range(5):
        u, v = lab.young_field_pair(seed, g)
        assert lab.check_flux_young_split(g, u, v, 0.05).passed


def test_report_invariants_and_id_validation():
    with pytest.raises(ValueError):
        lab.InequalityReport("NOPE", 0, 0, 0, 0, 0, True, "")
    g = make_grid(Interval(1.0), (64,))
    for seed in range(10):
        r = lab.certify("L33_1", g, lab.ensemble_field(seed), seed)
        assert r.ratio >= 0 and r.passed == (r.ratio <= 1 + lab.DEFAULT_SLACK)


def test_refine_and_retry_flags_refined_report():
    g = make_grid(Interval(1.0), (16,))
    # slack -1 fails everything, forcing the retry path
    r = lab.certify("L33_2", g, lab.ensemble_field(3), 3, slack=-1.0)
    assert r.refined and r.resolution == "32" and "coarse ratio" in r.note


def test_ensemble_order_independent_of_workers(tmp_path):
    seeds = range(6)
    one = lab.run_ensemble("L33_1", Interval(1.0), (32,), seeds, threads=1)
    two = lab.run_ensemble("L33_1", Interval(1.0), (32,), seeds, threads=2)
    assert [r.row() for r in one] == [r.row() for r in two]
    lab.write_reports_csv(tmp_path / "r.csv", one)
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 7
    s = lab.summarize(one)
    assert s["L33_1"]["total"] == 6 and s["L33_1"]["passed"] == 6


def test_thread_env_override(monkeypatch):
    monkeypatch.setenv("CHEMOCONSUME_THREADS", "3")
    assert lab.resolve_threads() == 3
    assert lab.resolve_threads(2) == 2
    monkeypatch.setenv("CHEMOCONSUME_THREADS", "0")
    with pytest.raises(ValueError):
        lab.resolve_threads()
