"""Functionals evaluated on solver states and trajectories."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .grid import Grid
from .initial_data import entropy

NAN = float("nan")


def safe_ratio(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a / b where b > 0, else 0."""
    out = np.zeros(np.broadcast(a, b).shape)
    np.divide(a, b, out=out, where=np.broadcast_to(b > 0, out.shape))
    return out


def _require_positive(v: np.ndarray, name: str = "v") -> None:
    if not np.all(v > 0):
        cell = np.unravel_index(np.argmin(v), v.shape)
        raise ValueError(f"{name} must be strictly positive; found {v[cell]:.3e} at cell {tuple(int(i) for i in cell)}")


# ---------------------------------------------------------------------- #
# energy and dissipation
# ---------------------------------------------------------------------- #
def fisher_information(grid: Grid, u: np.ndarray, strict: bool = True, tol: float = 1e-12) -> float:
    """Discrete integral of |grad u|^2 / u.

    Face form ``sum area/dist * (u_b - u_a) * (ln u_b - ln u_a)``, i.e. the
    face value of u is the logarithmic mean of its neighbours.  This is the
    exact rate at which the scheme's diffusion dissipates the entropy.
    Faces with both cells at zero contribute 0; a face with exactly one zero
    cell and a jump above ``tol`` raises in strict mode and falls back to the
    arithmetic mean otherwise.
    """
    total = 0.0
    for ax in range(grid.ndim):
        if ax == 1 and grid.periodic_axis1:
            a, b = u, np.roll(u, -1, axis=1)
            w = grid.face_area[1] / grid.face_dist[1]
        elif ax == 0:
            a, b = u[:-1], u[1:]
            w = (grid.face_area[0] / grid.face_dist[0])[1:-1]
        else:
            a, b = u[:, :-1], u[:, 1:]
            w = (grid.face_area[1] / grid.face_dist[1])[:, 1:-1]
        du = b - a
        both = (a > 0) & (b > 0)
        one = (a > 0) ^ (b > 0)
        if strict and np.any(one & (np.abs(du) > tol)):
            raise ValueError("grad u does not vanish where u = 0")
        term = np.zeros_like(du)
        term[both] = du[both] * (np.log(b[both]) - np.log(a[both]))
        mean = 0.5 * (a + b)
        term[one] = du[one] ** 2 / mean[one]
        total += float(np.sum(w * term))
    return total


def energy_F(grid: Grid, u: np.ndarray, v: np.ndarray, mu: float) -> float:
    """int u ln(u / mu) + 1/2 int |grad v|^2 / v."""
    _require_positive(v)
    return entropy(grid, u, mu) + 0.5 * grid.integrate(grid.grad_sq(v) / v)


def dissipation_D(grid: Grid, u: np.ndarray, v: np.ndarray, eps: float, strict: bool = True) -> tuple[float, float, float]:
    """(int |grad u|^2/u, int v |D^2 ln v|^2, 1/2 int u/(1+eps u) |grad v|^2/v)."""
    _require_positive(v)
    if np.any(u < 0):
        raise ValueError("u must be nonnegative")
    t1 = fisher_information(grid, u, strict=strict)
    t2 = grid.integrate(v * grid.hessian_sq(np.log(v)))
    t3 = 0.5 * grid.integrate(u / (1.0 + eps * u) * grid.grad_sq(v) / v)
    return t1, t2, t3


def boundary_term(grid: Grid, v: np.ndarray) -> float:
    """1/2 of the boundary integral of (1/v) d|grad v|^2/dnu."""
    dn = grid.boundary_normal_derivative_of_gradsq(v)
    trace = grid.boundary_trace(v)
    return 0.5 * grid.boundary_integrate({k: dn[k] / trace[k] for k in dn})


def energy_residual(grid: Grid, before, after, eps: float, mu: float) -> float:
    """Signed defect of F' + D = boundary term over one step (D, boundary at pre-step state)."""
    dt = after.t - before.t
    dF = (energy_F(grid, after.u, after.v, mu) - energy_F(grid, before.u, before.v, mu)) / dt
    D = sum(dissipation_D(grid, before.u, before.v, eps, strict=False))
    return dF + D - boundary_term(grid, before.v)


def energy_inequality_terms(grid: Grid, u, v, eps: float, mu: float, prev=None, dt: float | None = None) -> dict[str, float]:
    """Left- and right-hand quantities of the differential inequality for F.

    The inequality itself is not asserted (its constants are not explicit).
    ``dF_dt`` is a backward difference when a previous state is supplied.
    """
    _require_positive(v)
    gv_sq = grid.grad_sq(v)
    out = {
        "fisher_u": fisher_information(grid, u, strict=False),
        "u_dev_L1_sq": grid.integrate(np.abs(u - mu)) ** 2,
        "hess_v_sq_over_v": grid.integrate(grid.hessian_sq(v) / v),
        "weighted_gradv": grid.integrate(u / (1.0 + eps * u) * gv_sq / v),
        "dF_dt": NAN,
        "grad_v_L1": grid.integrate(np.sqrt(gv_sq)),
    }
    if prev is not None and dt:
        out["dF_dt"] = (energy_F(grid, u, v, mu) - energy_F(grid, prev.u, prev.v, mu)) / dt
    return out


def grad_l1_faces(grid: Grid, u: np.ndarray) -> float:
    """Discrete integral of |grad u| from face gradients (dual-volume weighted)."""
    return grid.face_integral(tuple(np.abs(g) for g in grid.gradient(u)))


def poincare_l1_constant(grid: Grid, samples: int = 200, seed: int = 0) -> float:
    """Largest observed int|f - mean| / int|grad f| over seeded random fields."""
    from .initial_data import TEST_FUNCTION_KINDS, gen_test_function

    best = 0.0
    for s in range(samples):
        f = gen_test_function(seed + s, grid, TEST_FUNCTION_KINDS[s % len(TEST_FUNCTION_KINDS)])
        mean = grid.integrate(f) / grid.measure
        den = grad_l1_faces(grid, f)
        if den > 0:
            best = max(best, grid.integrate(np.abs(f - mean)) / den)
    return best


# ---------------------------------------------------------------------- #
# small-signal functional
# ---------------------------------------------------------------------- #
def delta_gate(p: float, delta: float) -> float:
    """(2p + delta p (p-1))^2 / (3 p (p-1)) + p delta - 2; admissible iff <= 0."""
    return (2 * p + delta * p * (p - 1)) ** 2 / (3 * p * (p - 1)) + p * delta - 2


def max_delta(p: float) -> float:
    """Largest delta passing the gate for exponent ``p`` (> 3)."""
    from scipy.optimize import brentq

    if not p > 3:
        raise ValueError(f"p must exceed 3, got {p}")
    return brentq(lambda d: delta_gate(p, d), 0.0, 1.0, xtol=1e-14)


def small_signal_functional(grid: Grid, u: np.ndarray, v: np.ndarray, p: float, delta: float) -> float:
    """int (u + 1)^p / (delta - v), with its preconditions enforced."""
    if not p > 3:
        raise ValueError(f"p must exceed 3, got {p}")
    g = delta_gate(p, delta)
    if g > 0:
        raise ValueError(f"delta={delta} fails the admissibility gate for p={p} (value {g:.4g} > 0)")
    vmax = float(np.max(v))
    if not vmax < delta / 2:
        raise ValueError(f"need max v < delta/2 = {delta / 2:g}, got {vmax:g}")
    return grid.integrate((u + 1.0) ** p / (delta - v))


# ---------------------------------------------------------------------- #
# per-record snapshot
# ---------------------------------------------------------------------- #
@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    v_L1: float
    v_L2: float
    v_Linf: float
    F: float
    D1: float
    D2: float
    D3: float
    boundary_term: float
    int_gradv_sq: float
    int_consumption: float
    int_u_minus_mu: float
    int_fisher_u: float
    int_hess_v_sq: float
    int_weighted_gradv: float
    int_dissipation: float
    int_boundary: float
    u_dev_L1: float
    u_dev_Linf: float
    u_pow: float
    grad_u_pow: float
    flux_pow: float
    small_signal: float
    energy_residual: float
    min_u: float
    min_v: float
    clipped_mass: float


RECORD_COLUMNS = [f.name for f in fields(DiagnosticsRecord)]


def make_record(grid: Grid, state, prev, params, mu: float) -> DiagnosticsRecord:
    u, v, eps = state.u, state.v, params.eps
    n = grid.ndim
    positive_v = bool(np.all(v > 0))
    F = D1 = D2 = D3 = bt = res = NAN
    if positive_v:
        F = energy_F(grid, u, v, mu)
        D1, D2, D3 = dissipation_D(grid, u, v, eps, strict=False)
        bt = boundary_term(grid, v)
        if prev is not None and np.all(prev.v > 0):
            res = energy_residual(grid, prev, state, eps, mu)
    small = NAN
    if params.small_signal is not None:
        p, delta = params.small_signal
        if np.max(v) < delta / 2:
            small = small_signal_functional(grid, u, v, p, delta)
    s = u / (1.0 + eps * u) ** 2
    q = (n + 2) / (n + 1)
    flux_mag = s * np.sqrt(grid.grad_sq(v))
    c = state.cumulative
    return DiagnosticsRecord(
        t=state.t,
        mass=grid.integrate(u),
        v_L1=grid.integrate(np.abs(v)),
        v_L2=math.sqrt(grid.integrate(v * v)),
        v_Linf=float(np.max(np.abs(v))),
        F=F,
        D1=D1,
        D2=D2,
        D3=D3,
        boundary_term=bt,
        int_gradv_sq=c.get("int_gradv_sq", 0.0),
        int_consumption=c.get("int_consumption", 0.0),
        int_u_minus_mu=c.get("int_u_minus_mu", 0.0),
        int_fisher_u=c.get("int_fisher_u", 0.0),
        int_hess_v_sq=c.get("int_hess_v_sq", 0.0),
        int_weighted_gradv=c.get("int_weighted_gradv", 0.0),
        int_dissipation=c.get("int_dissipation", 0.0),
        int_boundary=c.get("int_boundary", 0.0),
        u_dev_L1=grid.integrate(np.abs(u - mu)),
        u_dev_Linf=float(np.max(np.abs(u - mu))),
        u_pow=grid.integrate(u ** ((n + 2) / n)),
        grad_u_pow=grid.integrate(np.sqrt(grid.grad_sq(u)) ** q),
        flux_pow=grid.integrate(flux_mag**q),
        small_signal=small,
        energy_residual=res,
        min_u=float(np.min(u)),
        min_v=float(np.min(v)),
        clipped_mass=state.clipped_mass,
    )


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([repr(float(x)) for x in asdict(r).values()])


# ---------------------------------------------------------------------- #
# trajectory-level analysis
# ---------------------------------------------------------------------- #
GROWTH_QUANTITIES = {
    "u_minus_mu": "int_u_minus_mu",
    "fisher_u": "int_fisher_u",
    "hess_v_sq": "int_hess_v_sq",
    "weighted_gradv": "int_weighted_gradv",
}


@dataclass
class GrowthFit:
    quantity: str
    window: tuple[float, float]
    beta: float
    C: float
    residual: float
    samples: int
    status: str = "ok"


def growth_fit(times, values, window: tuple[float, float], quantity: str = "") -> GrowthFit:
    """Least-squares fit of log Q = log C + beta log T on samples inside ``window``."""
    t = np.asarray(times, dtype=float)
    q = np.asarray(values, dtype=float)
    sel = (t >= window[0]) & (t <= window[1]) & (t > 0)
    if np.count_nonzero(sel) < 10:
        raise ValueError(f"growth window {window} holds {np.count_nonzero(sel)} samples; need >= 10")
    t, q = t[sel], q[sel]
    if float(np.max(np.abs(q))) < 1e-14:
        return GrowthFit(quantity, window, 0.0, 0.0, 0.0, int(t.size), "quantity-zero")
    if np.any(q <= 0):
        keep = q > 0
        if np.count_nonzero(keep) < 10:
            return GrowthFit(quantity, window, 0.0, 0.0, 0.0, int(t.size), "quantity-zero")
        t, q = t[keep], q[keep]
    X = np.log(t)
    Y = np.log(q)
    beta, logC = np.polyfit(X, Y, 1)
    resid = float(np.sqrt(np.mean((Y - (beta * X + logC)) ** 2)))
    return GrowthFit(quantity, window, float(beta), float(math.exp(logC)), resid, int(t.size))


def trajectory_growth_fits(traj, window: tuple[float, float]) -> dict[str, GrowthFit]:
    t = traj.column("t")
    return {name: growth_fit(t, traj.column(col), window, name) for name, col in GROWTH_QUANTITIES.items()}


def first_passage(times, values, threshold: float) -> float | None:
    """First time ``values`` drops to ``threshold`` (log-linear interpolation); None if never."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    hit = np.nonzero(y <= threshold)[0]
    if hit.size == 0:
        return None
    k = int(hit[0])
    if k == 0:
        return float(t[0])
    y0, y1 = y[k - 1], y[k]
    if y0 > 0 and y1 > 0:
        s = (math.log(threshold) - math.log(y0)) / (math.log(y1) - math.log(y0))
    else:
        s = (threshold - y0) / (y1 - y0)
    return float(t[k - 1] + s * (t[k] - t[k - 1]))


def exponential_rate(times, values) -> tuple[float, tuple[float, float]]:
    """Decay rate of ``values`` fitted over their final decade.

    The window is the tail where ``values <= 10 * values[-1]``; when the whole
    series spans less than a decade the second half of the run is used.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    keep = y > 0
    t, y = t[keep], y[keep]
    if y.size < 3:
        return NAN, (NAN, NAN)
    sel = y <= 10.0 * y[-1]
    first = int(np.argmax(sel))
    if not np.all(sel[first:]) or y[0] <= 10.0 * y[-1]:
        first = int(np.searchsorted(t, 0.5 * (t[0] + t[-1])))
    tt, yy = t[first:], y[first:]
    if tt.size < 3:
        tt, yy = t[-3:], y[-3:]
    slope = np.polyfit(tt, np.log(yy), 1)[0]
    return float(-slope), (float(tt[0]), float(tt[-1]))


def convergence_report(traj, mu: float, eps: float, thresholds=(1e-1, 1e-2, 1e-3)) -> dict:
    t = traj.column("t")
    vinf = traj.column("v_Linf")
    udev = traj.column("u_dev_Linf")
    rate, window = exponential_rate(t, vinf)
    expected = mu / (1.0 + eps * mu)

    def passages(y):
        out = {}
        for th in thresholds:
            tp = first_passage(t, y, th)
            out[f"{th:g}"] = tp if tp is not None else "not reached by t_end"
        return out

    return {
        "v_rate": rate,
        "v_rate_expected": expected,
        "v_rate_rel_error": abs(rate - expected) / expected if expected > 0 else NAN,
        "fit_window": list(window),
        "u_dev_Linf_initial": float(udev[0]),
        "u_dev_Linf_final": float(udev[-1]),
        "v_Linf_initial": float(vinf[0]),
        "v_Linf_final": float(vinf[-1]),
        "first_passage_u_dev_Linf": passages(udev),
        "first_passage_v_Linf": passages(vinf),
    }


# ---------------------------------------------------------------------- #
# weak formulation
# ---------------------------------------------------------------------- #
@dataclass
class SeparableTestFunction:
    """phi(x, t) = psi(x) * chi(t) with chi and its derivative given as callables."""

    psi: np.ndarray
    chi: object
    dchi: object

    def value(self, t: float) -> np.ndarray:
        return self.psi * self.chi(t)

    def dt(self, t: float) -> np.ndarray:
        return self.psi * self.dchi(t)


def cosine_cutoff(T: float):
    """chi(t) = cos^2(pi t / (2T)): equals 1 at t = 0 and vanishes with its slope at T."""
    def chi(t):
        return math.cos(0.5 * math.pi * t / T) ** 2

    def dchi(t):
        return -0.5 * math.pi / T * math.sin(math.pi * t / T)

    return chi, dchi


def weak_residual(grid: Grid, snapshots, phi: SeparableTestFunction, eps: float) -> tuple[float, float]:
    """Signed defects of both weak identities along stored snapshots.

    ``snapshots`` is a time-ordered list of ``(t, u, v)`` starting at t = 0;
    space integrals use cell-centered gradients and time integrals the
    trapezoidal rule.  Returns ``(res_u, res_v)`` as LHS - RHS.
    """
    times = np.array([s[0] for s in snapshots])
    T = times[-1]
    scale = float(np.max(np.abs(phi.psi))) or 1.0
    if abs(phi.chi(T)) * scale > 1e-12 * scale:
        raise ValueError(f"test function must vanish at the final time {T:g}")
    if phi.psi.shape != grid.shape:
        raise ValueError("test function does not match the grid")
    if not np.all(phi.psi == 0) and abs(times[0]) > 0:
        raise ValueError("snapshots must start at t = 0")

    gpsi = grid.cell_gradient(phi.psi)
    lhs_u, rhs_u, lhs_v, rhs_v = [], [], [], []
    for t, u, v in snapshots:
        chi, dchi = phi.chi(t), phi.dchi(t)
        gu = grid.cell_gradient(u)
        gv = grid.cell_gradient(v)
        s = (u / (1.0 + eps * u) ** 2)[..., None]
        rate = u / (1.0 + eps * u)
        lhs_u.append(-grid.integrate(u * phi.psi) * dchi)
        rhs_u.append(chi * grid.integrate(np.sum((-gu + s * gv) * gpsi, axis=-1)))
        lhs_v.append(grid.integrate(v * phi.psi) * dchi)
        rhs_v.append(chi * (grid.integrate(np.sum(gv * gpsi, axis=-1)) + grid.integrate(rate * v * phi.psi)))

    _, u0, v0 = snapshots[0]
    chi0 = phi.chi(times[0])
    res_u = np.trapezoid(lhs_u, times) - grid.integrate(u0 * phi.psi) * chi0 - np.trapezoid(rhs_u, times)
    res_v = np.trapezoid(lhs_v, times) + grid.integrate(v0 * phi.psi) * chi0 - np.trapezoid(rhs_v, times)
    return float(res_u), float(res_v)
