import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from chemoconsume.grid import Annulus, Interval, Rectangle, make_grid

GEOMS = [
    (Interval(1.0), (32,)),
    (Interval(2.5), (17,)),
    (Rectangle(1.0, 2.0), (12, 20)),
    (Annulus(1.0, 2.0), (16, 32)),
    (Annulus(0.5, 3.0), (10, 24)),
]


@pytest.mark.parametrize("geom,res", GEOMS)
def test_volumes_sum_to_measure(geom, res):
    g = make_grid(geom, res)
    assert g.integrate(1.0) == pytest.approx(geom.measure(), rel=1e-13)


@pytest.mark.parametrize("geom,res", GEOMS)
def test_laplacian_conserves_and_is_symmetric_negative(geom, res):
    g = make_grid(geom, res)
    rng = np.random.default_rng(1)
    f, h = rng.normal(size=res), rng.normal(size=res)
    # zero net flux through the boundary
    assert abs(g.integrate(g.laplacian(f))) < 1e-11 * np.abs(f).sum()
    # volume-weighted symmetry and dissipativity
    assert g.integrate(g.laplacian(f) * h) == pytest.approx(g.integrate(g.laplacian(h) * f), rel=1e-11)
    assert g.integrate(g.laplacian(f) * f) < 0
    assert g.dirichlet_energy(f) == pytest.approx(-g.integrate(g.laplacian(f) * f), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(r0=st.floats(0.2, 2.0), width=st.floats(0.2, 3.0), n0=st.integers(4, 20), n1=st.integers(4, 40))
def test_annulus_volume_and_conservation_property(r0, width, n0, n1):
    g = make_grid(Annulus(r0, r0 + width), (n0, n1))
    assert g.integrate(1.0) == pytest.approx(math.pi * ((r0 + width) ** 2 - r0**2), rel=1e-12)
    f = np.random.default_rng(n0 * 100 + n1).uniform(0, 1, (n0, n1))
    assert abs(g.integrate(g.laplacian(f))) < 1e-12 * g.integrate(np.abs(g.laplacian(f)) + 1)


def test_constant_has_zero_gradient_and_hessian():
    for geom, res in GEOMS:
        g = make_grid(geom, res)
        c = np.full(res, 3.7)
        assert np.all(g.grad_sq(c) == 0)
        assert np.max(np.abs(g.hessian(c))) < 1e-9


def test_interval_laplacian_converges_second_order():
    errs = []
    for n in (32, 64, 128):
        g = make_grid(Interval(1.0), (n,))
        x = g.centers[0]
        f = np.cos(2 * math.pi * x)
        errs.append(np.max(np.abs(g.laplacian(f) + 4 * math.pi**2 * f)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


def _sympy_hessian(expr, x, y):
    return [[sp.lambdify((x, y), sp.diff(expr, a, b), "numpy") for b in (x, y)] for a in (x, y)]


def test_annulus_hessian_matches_symbolic_in_the_interior():
    x, y = sp.symbols("x y")
    expr = sp.exp(0.3 * x) * sp.cos(0.5 * y) + x * y**2
    H = _sympy_hessian(expr, x, y)
    f_num = sp.lambdify((x, y), expr, "numpy")
    errs = []
    for n in (16, 32, 64):
        g = make_grid(Annulus(1.0, 2.0), (n, 2 * n))
        X, Y = g.cartesian()
        Hn = g.hessian(f_num(X, Y))
        exact = np.stack([np.stack([np.broadcast_to(H[i][j](X, Y), X.shape) for j in range(2)], -1) for i in range(2)], -2)
        errs.append(np.max(np.abs(Hn - exact)[1:-1]))
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


def test_rectangle_hessian_exact_for_quadratics_away_from_walls():
    g = make_grid(Rectangle(1.0, 1.0), (10, 10))
    X, Y = g.cartesian()
    H = g.hessian(X**2 + 3 * X * Y - Y**2)
    inner = (slice(1, -1), slice(1, -1))
    assert np.allclose(H[inner][..., 0, 0], 2.0)
    assert np.allclose(H[inner][..., 0, 1], 3.0)
    assert np.allclose(H[inner][..., 1, 1], -2.0)


def test_boundary_normal_derivative_vanishes_on_flat_walls():
    for geom, res in GEOMS[:3]:
        g = make_grid(geom, res)
        f = np.random.default_rng(0).uniform(1, 2, res)
        dn = g.boundary_normal_derivative_of_gradsq(f)
        assert all(np.all(a == 0) for a in dn.values())


def test_annulus_boundary_normal_derivative_of_gradsq_converges():
    # phi = 2 + cos 3 theta: |grad phi|^2 = 9 sin^2(3 theta) / r^2, outward normal -e_r inside
    errs = []
    for n in (32, 64, 128):
        g = make_grid(Annulus(1.0, 2.0), (n, 2 * n))
        r, th = g.mesh()
        dn = g.boundary_normal_derivative_of_gradsq(2 + np.cos(3 * th))
        inner = 18 * np.sin(3 * th[0]) ** 2
        outer = -18 * np.sin(3 * th[-1]) ** 2 / 8
        errs.append(max(np.max(np.abs(dn["inner"] - inner)), np.max(np.abs(dn["outer"] - outer))))
    assert errs[2] < errs[1] < errs[0]
    assert errs[1] / errs[2] > 1.5
    assert errs[2] < 0.03 * 18


def test_boundary_integrate_lengths():
    g = make_grid(Annulus(1.0, 2.0), (8, 40))
    ones = {s.name: 1.0 for s in g.boundary}
    assert g.boundary_integrate(ones) == pytest.approx(2 * math.pi * 3.0, rel=1e-12)
    r = make_grid(Rectangle(1.0, 2.0), (5, 7))
    assert r.boundary_integrate({s.name: 1.0 for s in r.boundary}) == pytest.approx(6.0)
    assert not r.has_smooth_boundary and g.has_smooth_boundary


def test_neumann_ghosts_have_zero_normal_gradient():
    for geom, res in GEOMS:
        g = make_grid(geom, res)
        f = np.random.default_rng(3).normal(size=res)
        assert g.neumann_check(f) == 0.0


@pytest.mark.parametrize(
    "geom,res,msg",
    [
        (Interval(1.0), (3,), ">= 4"),
        (Annulus(1.0, 2.0), (8,), "2"),
        (Rectangle(1.0, 1.0), (8, 2), ">= 4"),
    ],
)
def test_make_grid_rejects_bad_resolution(geom, res, msg):
    with pytest.raises(ValueError, match=msg):
        make_grid(geom, res)


def test_geometry_validation():
    with pytest.raises(ValueError):
        make_grid(Annulus(2.0, 1.0), (8, 8))
    with pytest.raises(ValueError):
        make_grid(Interval(-1.0), (8,))


def test_labels_and_curvature():
    g = make_grid(Annulus(1.0, 2.0), (8, 16))
    assert g.label() == "annulus(1;2)"
    assert g.resolution_label() == "8x16"
    assert g.curvature_bound == 1.0
    assert g.diameter == 4.0
