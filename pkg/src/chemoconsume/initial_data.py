"""Initial data: scenarios, mollification and seeded positive test functions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Annulus, Grid, Interval, Rectangle

MOLLIFIER_ALPHA = 0.5
TEST_FUNCTION_KINDS = ("low_fourier_positive", "bump_plus_floor", "radial")
SCENARIOS = ("homogeneous", "gaussian_bump", "two_bumps", "random_fourier")


def xlogx(u: np.ndarray) -> np.ndarray:
    """Elementwise u*ln(u) with 0*ln(0) = 0."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = u[pos] * np.log(u[pos])
    return out


def entropy(grid: Grid, u: np.ndarray, mu: float | None = None) -> float:
    """Integral of u ln u, or of u ln(u/mu) when ``mu`` is given."""
    if mu is None:
        return grid.integrate(xlogx(u))
    val = xlogx(u) - np.where(u > 0, u * math.log(mu), 0.0)
    return grid.integrate(val)


@dataclass(frozen=True)
class MollifierSpec:
    """Truncated discrete Gaussian of standard deviation ``alpha * eps * diam``."""

    eps: float
    alpha: float = MOLLIFIER_ALPHA
    truncate: float = 3.0

    def width(self, grid: Grid) -> float:
        return self.alpha * self.eps * grid.diameter


def _reflect_index(j: np.ndarray, n: int) -> np.ndarray:
    j = np.mod(j, 2 * n)
    return np.where(j >= n, 2 * n - 1 - j, j)


def _reflect_matrix(n: int, h: float, sigma: float, truncate: float) -> np.ndarray:
    """Row-stochastic convolution matrix with even reflection at both ends."""
    if sigma <= 0:
        return np.eye(n)
    K = max(1, int(math.ceil(truncate * sigma / h)))
    offsets = np.arange(-K, K + 1)
    w = np.exp(-0.5 * (offsets * h / sigma) ** 2)
    w /= w.sum()
    M = np.zeros((n, n))
    rows = np.arange(n)
    for k, wk in zip(offsets, w):
        np.add.at(M, (rows, _reflect_index(rows + k, n)), wk)
    M /= M.sum(axis=1, keepdims=True)
    return M


def _periodic_smooth(f: np.ndarray, dtheta: float, sigma_angle: np.ndarray, truncate: float) -> np.ndarray:
    """Smooth each row of ``f`` periodically with its own angular width."""
    n = f.shape[1]
    out = np.empty_like(f)
    for i in range(f.shape[0]):
        s = sigma_angle[i]
        K = min(n // 2, max(1, int(math.ceil(truncate * s / dtheta))))
        offsets = np.arange(-K, K + 1)
        w = np.exp(-0.5 * (offsets * dtheta / s) ** 2)
        w /= w.sum()
        row = np.zeros(n)
        for k, wk in zip(offsets, w):
            row += wk * np.roll(f[i], k)
        out[i] = row
    return out


def convolve(grid: Grid, f: np.ndarray, spec: MollifierSpec) -> np.ndarray:
    """Apply the mollifier: a convex combination of cell values per output cell."""
    sigma = spec.width(grid)
    if isinstance(grid.geometry, Interval):
        return _reflect_matrix(grid.shape[0], grid.spacing[0], sigma, spec.truncate) @ f
    M0 = _reflect_matrix(grid.shape[0], grid.spacing[0], sigma, spec.truncate)
    g = M0 @ f
    if isinstance(grid.geometry, Rectangle):
        M1 = _reflect_matrix(grid.shape[1], grid.spacing[1], sigma, spec.truncate)
        return g @ M1.T
    return _periodic_smooth(g, grid.spacing[1], sigma / grid.centers[0], spec.truncate)


def mollify_u0(grid: Grid, raw: np.ndarray, eps: float, spec: MollifierSpec | None = None) -> np.ndarray:
    """Smooth ``raw`` and rescale so the integral is unchanged."""
    raw = np.asarray(raw, dtype=float)
    if np.any(raw < 0):
        raise ValueError("u0 must be nonnegative")
    mass = grid.integrate(raw)
    if not mass > 0:
        raise ValueError("u0 must not vanish identically")
    spec = spec or MollifierSpec(eps)
    smooth = convolve(grid, raw, spec)
    return smooth * (mass / grid.integrate(smooth))


def mollify_v0(grid: Grid, raw: np.ndarray, eps: float, spec: MollifierSpec | None = None) -> np.ndarray:
    """Return the square of the mollified square root of ``raw``."""
    raw = np.asarray(raw, dtype=float)
    if not np.all(raw > 0):
        bad = tuple(int(i) for i in np.unravel_index(np.argmin(raw), raw.shape))
        raise ValueError(f"v0 must be strictly positive (min {raw[bad]:g} at cell {bad})")
    spec = spec or MollifierSpec(eps)
    return convolve(grid, np.sqrt(raw), spec) ** 2


@dataclass
class InitialPair:
    grid: Grid
    u0: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        if np.any(self.u0 < 0):
            raise ValueError("u0 must be nonnegative")
        if not self.grid.integrate(self.u0) > 0:
            raise ValueError("u0 must have positive mass")
        if np.any(self.v0 < 0):
            raise ValueError("v0 must be nonnegative")

    @property
    def mass(self) -> float:
        return self.grid.integrate(self.u0)

    @property
    def mu(self) -> float:
        return self.mass / self.grid.measure

    def v_norms(self) -> dict[str, float]:
        g = self.grid
        return {
            "L1": g.integrate(np.abs(self.v0)),
            "L2": math.sqrt(g.integrate(self.v0**2)),
            "Linf": float(np.max(np.abs(self.v0))),
        }

    def fisher_v(self) -> float:
        """Integral of |grad v0|^2 / v0 (requires v0 > 0)."""
        return self.grid.integrate(self.grid.grad_sq(self.v0) / self.v0)

    def summary(self) -> dict[str, float]:
        out = {"mass": self.mass, "mu": self.mu, "entropy_u0": entropy(self.grid, self.u0)}
        out.update({f"v0_{k}": x for k, x in self.v_norms().items()})
        if np.all(self.v0 > 0):
            out["fisher_v0"] = self.fisher_v()
        return out


# ---------------------------------------------------------------------- #
# shape primitives (all Neumann compatible)
# ---------------------------------------------------------------------- #
def _unit_coords(grid: Grid) -> tuple[np.ndarray, ...]:
    """Coordinates scaled to [0, 1] on the non-periodic axes (theta kept in radians)."""
    g = grid.geometry
    if isinstance(g, Interval):
        return (grid.centers[0] / g.L,)
    a, b = grid.mesh()
    if isinstance(g, Rectangle):
        return a / g.Lx, b / g.Ly
    return (a - g.r0) / (g.r1 - g.r0), b


def _mode(grid: Grid, k: int, l: int = 0, phase: float = 0.0) -> np.ndarray:
    """cos(k pi xi) [* cos(l pi eta) | cos(l theta + phase)]: zero normal derivative."""
    c = _unit_coords(grid)
    out = np.cos(k * math.pi * c[0])
    if grid.ndim == 2:
        if isinstance(grid.geometry, Annulus):
            out = out * np.cos(l * c[1] + phase)
        else:
            out = out * np.cos(l * math.pi * c[1])
    return out


def raised_cosine_bump(dist: np.ndarray, radius: float, power: int = 3) -> np.ndarray:
    """((1 + cos(pi d / R)) / 2)^power for d < R, else 0; C^(2 power - 1)."""
    inside = dist < radius
    out = np.zeros_like(dist, dtype=float)
    out[inside] = (0.5 * (1.0 + np.cos(math.pi * dist[inside] / radius))) ** power
    return out


def _distance(grid: Grid, center) -> np.ndarray:
    xyz = grid.cartesian()
    return np.sqrt(sum((x - c) ** 2 for x, c in zip(xyz, center)))


def gaussian(grid: Grid, center, width: float) -> np.ndarray:
    return np.exp(-0.5 * (_distance(grid, center) / width) ** 2)


def default_center(grid: Grid) -> tuple[float, ...]:
    g = grid.geometry
    if isinstance(g, Interval):
        return (0.3 * g.L,)
    if isinstance(g, Rectangle):
        return (0.3 * g.Lx, 0.4 * g.Ly)
    return (0.5 * (g.r0 + g.r1), 0.0)


def _length_scale(grid: Grid) -> float:
    g = grid.geometry
    if isinstance(g, Interval):
        return g.L
    if isinstance(g, Rectangle):
        return min(g.Lx, g.Ly)
    return g.r1 - g.r0


def _random_center(rng: np.random.Generator, grid: Grid, radius: float) -> tuple[float, ...]:
    g = grid.geometry
    if isinstance(g, Interval):
        return (rng.uniform(radius, g.L - radius),)
    if isinstance(g, Rectangle):
        return (rng.uniform(radius, g.Lx - radius), rng.uniform(radius, g.Ly - radius))
    r = rng.uniform(g.r0 + radius, g.r1 - radius)
    th = rng.uniform(0.0, 2.0 * math.pi)
    return (r * math.cos(th), r * math.sin(th))


def gen_test_function(seed: int, grid: Grid, kind: str, amplitude: float | None = None) -> np.ndarray:
    """Seeded strictly positive field with zero normal derivative; min >= 0.1.

    ``low_fourier_positive`` on an interval is
    ``0.1 + sum_k a_k (1 + cos(k pi x / L))`` for k = 1..4 with
    ``a = default_rng(seed).uniform(0, 1, 4) / [1, 2, 3, 4]``.
    ``amplitude`` rescales the non-constant part (0 gives the floor 0.1).
    """
    if kind not in TEST_FUNCTION_KINDS:
        raise ValueError(f"unknown test function kind {kind!r}; expected one of {TEST_FUNCTION_KINDS}")
    rng = np.random.default_rng(seed)
    base = np.full(grid.shape, 0.1)

    if kind == "low_fourier_positive":
        if grid.ndim == 1:
            a = rng.uniform(0.0, 1.0, 4) / np.arange(1, 5)
            part = sum(a[k - 1] * (1.0 + _mode(grid, k)) for k in range(1, 5))
        else:
            part = np.zeros(grid.shape)
            for k in range(4):
                for l in range(4):
                    if k == l == 0:
                        continue
                    a = rng.uniform(0.0, 1.0) / (1 + k + l)
                    phase = rng.uniform(0.0, 2.0 * math.pi)
                    part = part + a * (1.0 + _mode(grid, k, l, phase))
    elif kind == "bump_plus_floor":
        scale = _length_scale(grid)
        radius = rng.uniform(0.2, 0.45) * scale
        center = _random_center(rng, grid, radius)
        amp = rng.uniform(0.5, 3.0)
        part = amp * raised_cosine_bump(_distance(grid, center), radius)
    else:
        if isinstance(grid.geometry, Annulus):
            modes = [_mode(grid, k, 0) for k in range(1, 5)]
        elif grid.ndim == 1:
            modes = [_mode(grid, 2 * k) for k in range(1, 5)]
        else:
            modes = [_mode(grid, 2 * k, 2 * k) for k in range(1, 5)]
        a = rng.uniform(0.0, 1.0, 4) / np.arange(1, 5)
        part = sum(ak * (1.0 + m) for ak, m in zip(a, modes))

    if amplitude is not None:
        peak = float(np.max(np.abs(part)))
        part = part * (amplitude / peak) if peak > 0 else part
    return base + part


# ---------------------------------------------------------------------- #
# scenarios
# ---------------------------------------------------------------------- #
def build_scenario(grid: Grid, name: str, params: dict | None = None, seed: int = 0) -> InitialPair:
    """Raw (unmollified) initial data for a named scenario.

    Parameters (all optional, numeric):
      homogeneous     mu (1.0), v (1.0)
      gaussian_bump   base (0.2), amp (2.0), width (0.1 * size), cx/cy, v (1.0), v_amp (0.3)
      two_bumps       as gaussian_bump plus amp2, cx2/cy2
      random_fourier  base (0.2), amp (1.0), v (1.0), v_amp (0.3); coefficients from ``seed``
    """
    p = dict(params or {})
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; expected one of {SCENARIOS}")
    if name == "homogeneous":
        u0 = np.full(grid.shape, float(p.get("mu", 1.0)))
        v0 = np.full(grid.shape, float(p.get("v", 1.0)))
        return InitialPair(grid, u0, v0)

    v_level = float(p.get("v", 1.0))
    v_amp = float(p.get("v_amp", 0.3))
    if name == "random_fourier":
        u0 = gen_test_function(seed, grid, "low_fourier_positive")
        u0 = float(p.get("base", 0.2)) + float(p.get("amp", 1.0)) * (u0 - 0.1) / np.max(u0 - 0.1)
        w = gen_test_function(seed + 1, grid, "low_fourier_positive")
        v0 = v_level * (1.0 + v_amp * ((w - w.min()) / (w.max() - w.min()) - 0.5))
        return InitialPair(grid, u0, v0)

    size = _length_scale(grid)
    center = default_center(grid)
    cx = float(p.get("cx", center[0]))
    ctr = (cx,) if grid.ndim == 1 else (cx, float(p.get("cy", center[1])))
    width = float(p.get("width", 0.1 * size))
    u0 = float(p.get("base", 0.2)) + float(p.get("amp", 2.0)) * gaussian(grid, ctr, width)
    if name == "two_bumps":
        if grid.ndim == 1:
            c2 = (float(p.get("cx2", 0.75 * grid.geometry.L)),)
        elif isinstance(grid.geometry, Annulus):
            rm = 0.5 * (grid.geometry.r0 + grid.geometry.r1)
            c2 = (float(p.get("cx2", -rm)), float(p.get("cy2", 0.0)))
        else:
            c2 = (float(p.get("cx2", 0.7 * grid.geometry.Lx)), float(p.get("cy2", 0.7 * grid.geometry.Ly)))
        u0 = u0 + float(p.get("amp2", 1.5)) * gaussian(grid, c2, width)
    v0 = v_level * (1.0 + v_amp * _mode(grid, 1, 1 if grid.ndim == 2 else 0))
    return InitialPair(grid, u0, v0)


def prepare_initial(grid: Grid, name: str, params: dict | None, eps: float, seed: int = 0, mollify: bool = True) -> InitialPair:
    """Scenario data, mollified at scale ``eps`` when requested."""
    raw = build_scenario(grid, name, params, seed)
    if not mollify:
        return raw
    u0 = mollify_u0(grid, raw.u0, eps)
    v0 = mollify_v0(grid, raw.v0, eps) if np.all(raw.v0 > 0) else raw.v0.copy()
    return InitialPair(grid, u0, v0)
