"""Time integration of the regularized chemotaxis-consumption system

    u_t = lap u - div( u / (1 + eps u)^2 * grad v )
    v_t = lap v - u v / (1 + eps u)

with homogeneous Neumann data.  One step is

1. explicit conservative update of u with an upwinded chemotactic flux,
2. implicit (backward Euler) diffusion of v,
3. exact pointwise consumption ``v *= exp(-dt u / (1 + eps u))`` using the new u.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid

log = logging.getLogger(__name__)

CUMULATIVE_KEYS = (
    "int_gradv_sq",
    "int_consumption",
    "int_u_minus_mu",
    "int_fisher_u",
    "int_hess_v_sq",
    "int_weighted_gradv",
)
EXTRA_CUMULATIVE_KEYS = ("int_dissipation", "int_boundary")

LINEAR_RTOL = 1e-10
DT_LADDER = 8


class SolverError(RuntimeError):
    """Raised when a step cannot be completed (NaN, failed linear solve)."""

    def __init__(self, message: str, t: float | None = None):
        self.t = t
        super().__init__(message if t is None else f"{message} (t={t:.6g})")


@dataclass
class SimParams:
    eps: float
    t_end: float
    dt: float | None = None
    cfl_safety: float | None = None
    dt_max: float = 1e-2
    diag_cadence: int = 1
    field_cadence: int = 0
    small_signal: tuple[float, float] | None = None
    track_dissipation: bool = True

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if not self.t_end > 0:
            raise ValueError(f"t_end must be positive, got {self.t_end}")
        if (self.dt is None) == (self.cfl_safety is None):
            raise ValueError("exactly one of dt (fixed) or cfl_safety must be given")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.cfl_safety is not None and not 0.0 < self.cfl_safety <= 1.0:
            raise ValueError(f"cfl safety must lie in (0, 1], got {self.cfl_safety}")
        if self.diag_cadence < 1:
            raise ValueError("diag_cadence must be >= 1")


@dataclass
class SimState:
    t: float
    u: np.ndarray
    v: np.ndarray
    cumulative: dict[str, float] = field(default_factory=lambda: dict.fromkeys(CUMULATIVE_KEYS + EXTRA_CUMULATIVE_KEYS, 0.0))
    steps: int = 0
    clipped_mass: float = 0.0

    def copy(self) -> SimState:
        return replace(self, u=self.u.copy(), v=self.v.copy(), cumulative=dict(self.cumulative))


def chemotactic_sensitivity(u: np.ndarray, eps: float) -> np.ndarray:
    return u / (1.0 + eps * u) ** 2


def consumption_rate(u: np.ndarray, eps: float) -> np.ndarray:
    return u / (1.0 + eps * u)


def _donor(grid: Grid, q: np.ndarray, gv: np.ndarray, axis: int) -> np.ndarray:
    """Upwind cell value of ``q`` on faces of ``axis``; donor is the cell v decreases from."""
    if axis == 1 and grid.periodic_axis1:
        return np.where(gv > 0, q, np.roll(q, -1, axis=1))
    # boundary faces carry gv = 0, so their value is irrelevant
    out = np.zeros(gv.shape)
    if axis == 0:
        out[1:-1] = np.where(gv[1:-1] > 0, q[:-1], q[1:])
    else:
        out[:, 1:-1] = np.where(gv[:, 1:-1] > 0, q[:, :-1], q[:, 1:])
    return out


def flux_u(grid: Grid, u: np.ndarray, v: np.ndarray, eps: float) -> tuple[np.ndarray, ...]:
    """Face flux grad u - S(u_upwind) grad v with S(u) = u / (1 + eps u)^2."""
    gu = grid.gradient(u)
    gv = grid.gradient(v)
    s = chemotactic_sensitivity(u, eps)
    return tuple(gu[ax] - _donor(grid, s, gv[ax], ax) * gv[ax] for ax in range(grid.ndim))


def advective_velocity(grid: Grid, u: np.ndarray, v: np.ndarray, eps: float) -> tuple[np.ndarray, ...]:
    gv = grid.gradient(v)
    damp = 1.0 / (1.0 + eps * u) ** 2
    return tuple(_donor(grid, damp, gv[ax], ax) * gv[ax] for ax in range(grid.ndim))


def cfl_dt(grid: Grid, state: SimState, eps: float, safety: float, dt_max: float = np.inf) -> float:
    """safety * min(h^2 / (2 n), h / max|velocity|), capped at ``dt_max``."""
    if not 0.0 < safety <= 1.0:
        raise ValueError(f"safety must lie in (0, 1], got {safety}")
    h = grid.h_min
    dt = h * h / (2.0 * grid.ndim)
    vmax = max(float(np.max(np.abs(w))) for w in advective_velocity(grid, state.u, state.v, eps))
    if vmax > 0:
        dt = min(dt, h / vmax)
    return min(safety * dt, dt_max)


def snap_dt(dt: float, dt_max: float) -> float:
    """Round ``dt`` down onto the ladder dt_max * 2^(-k/8) so factorizations can be reused."""
    if dt >= dt_max:
        return dt_max
    k = math.ceil(DT_LADDER * math.log2(dt_max / dt) - 1e-9)
    return dt_max * 2.0 ** (-k / DT_LADDER)


def stiffness_matrix(grid: Grid) -> sp.csr_matrix:
    """Symmetric A with (A f)_i = sum over faces of area * (f_nb - f_i) / dist."""
    n = int(np.prod(grid.shape))
    idx = np.arange(n).reshape(grid.shape)
    rows, cols, vals = [], [], []
    for ax in range(grid.ndim):
        c = grid.face_area[ax] / grid.face_dist[ax]
        if ax == 1 and grid.periodic_axis1:
            a, b, cc = idx, np.roll(idx, -1, axis=1), c
        elif ax == 0:
            a, b, cc = idx[:-1], idx[1:], c[1:-1]
        else:
            a, b, cc = idx[:, :-1], idx[:, 1:], c[:, 1:-1]
        a, b, cc = a.ravel(), b.ravel(), cc.ravel()
        rows += [a, b, a, b]
        cols += [b, a, a, b]
        vals += [cc, cc, -cc, -cc]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


class Solver:
    """Stepper bound to one grid; caches the implicit-diffusion factorization per dt."""

    def __init__(self, grid: Grid, params: SimParams):
        self.grid = grid
        self.params = params
        self._A = stiffness_matrix(grid).tocsc()
        self._vol = grid.volumes.ravel()
        self._factors: dict[float, object] = {}
        self._mu: float | None = None
        self.clip_events: list[tuple[float, float]] = []

    def _factor(self, dt: float):
        lu = self._factors.get(dt)
        if lu is None:
            M = (sp.diags(self._vol) - dt * self._A).tocsc()
            lu = spla.splu(M)
            self._factors[dt] = lu
            if len(self._factors) > 16:
                self._factors.pop(next(iter(self._factors)))
        return lu

    def implicit_diffusion(self, v: np.ndarray, dt: float, t: float = 0.0) -> np.ndarray:
        rhs = self._vol * v.ravel()
        sol = self._factor(dt).solve(rhs)
        res = self._vol * sol - dt * (self._A @ sol) - rhs
        scale = np.linalg.norm(rhs)
        if scale > 0 and np.linalg.norm(res) > LINEAR_RTOL * scale:
            raise SolverError(f"implicit diffusion residual {np.linalg.norm(res) / scale:.3e} above {LINEAR_RTOL}", t)
        return sol.reshape(self.grid.shape)

    def choose_dt(self, state: SimState) -> float:
        p = self.params
        if p.dt is not None:
            return p.dt
        dt = cfl_dt(self.grid, state, p.eps, p.cfl_safety, p.dt_max)
        return snap_dt(dt, p.dt_max)

    def accumulate(self, state: SimState, dt: float, mu: float) -> None:
        """Left-endpoint time quadrature of the tracked space integrals."""
        q = step_integrands(self.grid, state.u, state.v, self.params.eps, mu, self.params.track_dissipation)
        for k, val in q.items():
            state.cumulative[k] = state.cumulative.get(k, 0.0) + dt * val

    def step(self, state: SimState, dt: float | None = None, mu: float | None = None) -> SimState:
        grid, eps = self.grid, self.params.eps
        if dt is None:
            dt = self.choose_dt(state)
        if mu is None:
            mu = grid.integrate(state.u) / grid.measure

        new = state.copy()
        self.accumulate(new, dt, mu)

        F = flux_u(grid, state.u, state.v, eps)
        u = state.u + dt * grid.net_outflow(F) / grid.volumes
        if not np.all(np.isfinite(u)):
            raise SolverError("non-finite u after transport step", state.t)
        if np.any(u < 0):
            u, clipped = clip_redistribute(grid, u)
            new.clipped_mass += clipped
            self.clip_events.append((state.t, clipped))
            log.debug("clipped %.3e mass at t=%.6g", clipped, state.t)

        v = self.implicit_diffusion(state.v, dt, state.t)
        v = v * np.exp(-dt * consumption_rate(u, eps))
        if not np.all(np.isfinite(v)):
            raise SolverError("non-finite v after diffusion-reaction step", state.t)

        new.u, new.v = u, v
        new.t = state.t + dt
        new.steps = state.steps + 1
        return new


def clip_redistribute(grid: Grid, u: np.ndarray) -> tuple[np.ndarray, float]:
    """Zero negative cells and rescale positive ones so the integral is unchanged."""
    mass = grid.integrate(u)
    neg = u < 0
    clipped = -grid.integrate(np.where(neg, u, 0.0))
    out = np.where(neg, 0.0, u)
    out *= mass / grid.integrate(out)
    return out, clipped


def step_integrands(grid: Grid, u, v, eps, mu, with_dissipation=True) -> dict[str, float]:
    from . import diagnostics as dg

    gv_sq = grid.grad_sq(v)
    rate = consumption_rate(u, eps)
    out = {
        "int_gradv_sq": grid.dirichlet_energy(v),
        "int_consumption": grid.integrate(rate * v),
        "int_u_minus_mu": grid.integrate(np.abs(u - mu)),
        "int_fisher_u": dg.fisher_information(grid, u, strict=False),
        "int_hess_v_sq": grid.integrate(grid.hessian_sq(v)),
        "int_weighted_gradv": grid.integrate(rate * dg.safe_ratio(gv_sq, v)),
    }
    if with_dissipation and np.all(v > 0):
        d = dg.dissipation_D(grid, u, v, eps, strict=False)
        out["int_dissipation"] = sum(d)
        out["int_boundary"] = dg.boundary_term(grid, v)
    return out


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    snapshots: list[tuple[float, np.ndarray, np.ndarray]] = field(default_factory=list)
    final: SimState | None = None
    mu: float = float("nan")
    clip_events: list[tuple[float, float]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("t")


def initial_state(initial) -> SimState:
    return SimState(t=0.0, u=np.array(initial.u0, dtype=float), v=np.array(initial.v0, dtype=float))


def run(initial, params: SimParams, hooks=(), state: SimState | None = None, solver: Solver | None = None) -> Trajectory:
    """Advance to ``params.t_end`` recording diagnostics every ``diag_cadence`` steps.

    ``hooks`` are callables ``hook(state, solver)`` invoked after every
    accepted step.  ``state`` resumes from a checkpoint instead of the
    initial data (mu is still taken from ``initial``).
    """
    from .diagnostics import make_record

    grid = initial.grid
    solver = solver or Solver(grid, params)
    mu = initial.mu
    state = state.copy() if state is not None else initial_state(initial)
    traj = Trajectory(mu=mu)

    def snapshot(s):
        traj.snapshots.append((s.t, s.u.copy(), s.v.copy()))

    traj.records.append(make_record(grid, state, None, params, mu))
    if params.field_cadence:
        snapshot(state)

    prev = state
    tol = 1e-12 * max(1.0, params.t_end)
    while state.t < params.t_end - tol:
        dt = solver.choose_dt(state)
        if state.t + dt > params.t_end - tol:
            dt = params.t_end - state.t
        try:
            prev, state = state, solver.step(state, dt, mu)
        except SolverError:
            raise
        except (FloatingPointError, ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
            raise SolverError(f"step failed: {exc}", state.t) from exc
        for hook in hooks:
            hook(state, solver)
        last = state.t >= params.t_end - tol
        if state.steps % params.diag_cadence == 0 or last:
            traj.records.append(make_record(grid, state, prev, params, mu))
        if params.field_cadence and (state.steps % params.field_cadence == 0 or last):
            snapshot(state)

    traj.final = state
    traj.clip_events = list(solver.clip_events)
    return traj
