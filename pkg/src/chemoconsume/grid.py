"""Structured finite-volume grids and the discrete calculus used by the solver.

Three domain families are supported:

* ``Interval(L)``            -- cells on ``[0, L]``
* ``Rectangle(Lx, Ly)``      -- tensor grid on ``[0, Lx] x [0, Ly]``
* ``Annulus(r0, r1)``        -- uniform polar grid, periodic in theta

Fields are plain numpy arrays of shape ``grid.shape``. Face-valued data is a
tuple with one array per axis holding the *normal* component on that family
of faces (outward along the increasing index direction).  Axis-0 faces include
both boundaries, shape ``(n0 + 1, n1)``; axis-1 faces of a rectangle have
shape ``(n0, n1 + 1)`` and those of an annulus ``(n0, n1)`` with face ``j``
sitting between cell ``j`` and cell ``j + 1 (mod n1)``.

Neumann closure is built in: boundary-face gradients are zero and the
Hessian uses one ghost layer obtained by mirror reflection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Interval",
    "Rectangle",
    "Annulus",
    "BoundarySegment",
    "Grid",
    "make_grid",
]


@dataclass(frozen=True)
class Interval:
    L: float = 1.0

    name = "interval"
    ndim = 1

    def measure(self) -> float:
        return self.L

    def label(self) -> str:
        return f"interval({self.L:g})"


@dataclass(frozen=True)
class Rectangle:
    Lx: float = 1.0
    Ly: float = 1.0

    name = "rectangle"
    ndim = 2

    def measure(self) -> float:
        return self.Lx * self.Ly

    def label(self) -> str:
        return f"rectangle({self.Lx:g};{self.Ly:g})"


@dataclass(frozen=True)
class Annulus:
    r0: float = 1.0
    r1: float = 2.0

    name = "annulus"
    ndim = 2

    def measure(self) -> float:
        return math.pi * (self.r1**2 - self.r0**2)

    def label(self) -> str:
        return f"annulus({self.r0:g};{self.r1:g})"


Geometry = Interval | Rectangle | Annulus


@dataclass
class BoundarySegment:
    """One connected piece of the boundary, e.g. the inner circle.

    ``weights`` are the arc-length (or point) weights of the boundary faces
    and ``normal`` their outward unit normals in Cartesian components, shape
    ``weights.shape + (ndim,)``.  ``axis``/``side`` locate the faces in the
    index space: side 0 is the low-index end of ``axis``.
    """

    name: str
    axis: int
    side: int
    weights: np.ndarray
    normal: np.ndarray
    curvature: float = 0.0


@dataclass
class Grid:
    geometry: Geometry
    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    centers: tuple[np.ndarray, ...]
    volumes: np.ndarray
    face_area: tuple[np.ndarray, ...]
    face_dist: tuple[np.ndarray, ...]
    boundary: list[BoundarySegment] = field(default_factory=list)
    curvature_bound: float = 0.0

    @property
    def ndim(self) -> int:
        return self.geometry.ndim

    @property
    def kind(self) -> str:
        return self.geometry.name

    @property
    def measure(self) -> float:
        return self.geometry.measure()

    @property
    def periodic_axis1(self) -> bool:
        return isinstance(self.geometry, Annulus)

    @property
    def h_min(self) -> float:
        return float(min(np.min(d) for d in self.face_dist))

    @property
    def has_smooth_boundary(self) -> bool:
        return not isinstance(self.geometry, Rectangle)

    @property
    def diameter(self) -> float:
        g = self.geometry
        if isinstance(g, Interval):
            return g.L
        if isinstance(g, Rectangle):
            return math.hypot(g.Lx, g.Ly)
        return 2.0 * g.r1

    def label(self) -> str:
        return self.geometry.label()

    def resolution_label(self) -> str:
        return "x".join(str(n) for n in self.shape)

    def cartesian(self) -> tuple[np.ndarray, ...]:
        """Cartesian coordinates of cell centers as arrays of ``self.shape``."""
        if isinstance(self.geometry, Interval):
            return (self.centers[0],)
        a, b = np.meshgrid(self.centers[0], self.centers[1], indexing="ij")
        if isinstance(self.geometry, Rectangle):
            return a, b
        return a * np.cos(b), a * np.sin(b)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Native coordinates (x | x, y | r, theta) broadcast to ``self.shape``."""
        if self.ndim == 1:
            return (self.centers[0],)
        return tuple(np.meshgrid(self.centers[0], self.centers[1], indexing="ij"))

    # ------------------------------------------------------------------ #
    # first-order calculus
    # ------------------------------------------------------------------ #
    def _neighbor_diff(self, f: np.ndarray, axis: int) -> np.ndarray:
        """f[right] - f[left] on every face of ``axis``; zero on boundary faces."""
        if axis == 1 and self.periodic_axis1:
            return np.roll(f, -1, axis=1) - f
        shape = list(f.shape)
        shape[axis] += 1
        out = np.zeros(shape)
        if axis == 0:
            np.subtract(f[1:], f[:-1], out=out[1:-1])
        else:
            np.subtract(f[:, 1:], f[:, :-1], out=out[:, 1:-1])
        return out

    def gradient(self, f: np.ndarray) -> tuple[np.ndarray, ...]:
        """Normal component of grad f on all faces (zero on the boundary)."""
        return tuple(self._neighbor_diff(f, ax) / self.face_dist[ax] for ax in range(self.ndim))

    def divergence(self, flux: tuple[np.ndarray, ...]) -> np.ndarray:
        """Net outflow of face-normal data per unit cell volume."""
        return self.net_outflow(flux) / self.volumes

    def net_outflow(self, flux: tuple[np.ndarray, ...]) -> np.ndarray:
        """Sum of signed face fluxes times face areas (no volume division).

        Adding ``dt * net_outflow`` to cell masses is exactly conservative:
        every interior face value enters two cells with opposite signs.
        """
        out = np.zeros(self.shape)
        for ax in range(self.ndim):
            q = flux[ax] * self.face_area[ax]
            if ax == 1 and self.periodic_axis1:
                out += q - np.roll(q, 1, axis=1)
            elif ax == 0:
                out += q[1:] - q[:-1]
            else:
                out += q[:, 1:] - q[:, :-1]
        return out

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.divergence(self.gradient(f))

    def face_average(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Arithmetic mean of the two cells sharing each face (boundary: the inner cell)."""
        if axis == 1 and self.periodic_axis1:
            return 0.5 * (f + np.roll(f, -1, axis=1))
        pad = [(0, 0)] * f.ndim
        pad[axis] = (1, 1)
        g = np.pad(f, pad, mode="edge")
        lo = [slice(None)] * f.ndim
        hi = [slice(None)] * f.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        return 0.5 * (g[tuple(lo)] + g[tuple(hi)])

    def faces_to_cells(self, face_data: tuple[np.ndarray, ...]) -> np.ndarray:
        """Average face-normal components onto cells; returns ``shape + (ndim,)``.

        On the annulus the components are (radial, angular) in the local
        orthonormal frame, so Euclidean norms are frame independent.
        """
        comps = []
        for ax in range(self.ndim):
            g = face_data[ax]
            if ax == 1 and self.periodic_axis1:
                comps.append(0.5 * (g + np.roll(g, 1, axis=1)))
            elif ax == 0:
                comps.append(0.5 * (g[1:] + g[:-1]))
            else:
                comps.append(0.5 * (g[:, 1:] + g[:, :-1]))
        return np.stack(comps, axis=-1)

    def cell_gradient(self, f: np.ndarray) -> np.ndarray:
        return self.faces_to_cells(self.gradient(f))

    def grad_sq(self, f: np.ndarray) -> np.ndarray:
        """|grad f|^2 per cell from face gradients averaged to cells."""
        return np.sum(self.cell_gradient(f) ** 2, axis=-1)

    def face_weights(self, axis: int) -> np.ndarray:
        """Dual volume (area * distance) attached to each face of ``axis``."""
        return self.face_area[axis] * self.face_dist[axis]

    def face_integral(self, face_data: tuple[np.ndarray, ...]) -> float:
        """Sum over faces of data times the dual volume of the face."""
        return float(sum(np.sum(face_data[ax] * self.face_weights(ax)) for ax in range(self.ndim)))

    def dirichlet_energy(self, f: np.ndarray) -> float:
        """Discrete integral of |grad f|^2, equal to -<laplacian f, f>."""
        g = self.gradient(f)
        return self.face_integral(tuple(x * x for x in g))

    # ------------------------------------------------------------------ #
    # second derivatives
    # ------------------------------------------------------------------ #
    def _ghost(self, f: np.ndarray) -> np.ndarray:
        """Pad one ghost layer: mirror for Neumann sides, wrap for theta."""
        if self.ndim == 1:
            return np.pad(f, 1, mode="symmetric")
        g = np.pad(f, ((1, 1), (0, 0)), mode="symmetric")
        if self.periodic_axis1:
            return np.pad(g, ((0, 0), (1, 1)), mode="wrap")
        return np.pad(g, ((0, 0), (1, 1)), mode="symmetric")

    def _polar_cache(self):
        cache = self.__dict__.get("_polar")
        if cache is None:
            r, th = self.mesh()
            cache = (r, np.cos(th), np.sin(th))
            self.__dict__["_polar"] = cache
        return cache

    def hessian(self, f: np.ndarray) -> np.ndarray:
        """Cartesian Hessian per cell, shape ``shape + (ndim, ndim)``."""
        g = self._ghost(f)
        if self.ndim == 1:
            h = self.spacing[0]
            fxx = (g[2:] - 2.0 * g[1:-1] + g[:-2]) / h**2
            return fxx[:, None, None]

        h0, h1 = self.spacing
        c = g[1:-1, 1:-1]
        f00 = (g[2:, 1:-1] - 2.0 * c + g[:-2, 1:-1]) / h0**2
        f11 = (g[1:-1, 2:] - 2.0 * c + g[1:-1, :-2]) / h1**2
        f01 = (g[2:, 2:] - g[2:, :-2] - g[:-2, 2:] + g[:-2, :-2]) / (4.0 * h0 * h1)

        H = np.empty(self.shape + (2, 2))
        if isinstance(self.geometry, Rectangle):
            H[..., 0, 0] = f00
            H[..., 1, 1] = f11
            H[..., 0, 1] = H[..., 1, 0] = f01
            return H

        r, cs, sn = self._polar_cache()
        f_r = (g[2:, 1:-1] - g[:-2, 1:-1]) / (2.0 * h0)
        f_t = (g[1:-1, 2:] - g[1:-1, :-2]) / (2.0 * h1)
        # covariant Hessian in the orthonormal (e_r, e_theta) frame
        Hrr = f00
        Hrt = f01 / r - f_t / r**2
        Htt = f_r / r + f11 / r**2
        H[..., 0, 0] = cs * cs * Hrr - 2.0 * cs * sn * Hrt + sn * sn * Htt
        H[..., 1, 1] = sn * sn * Hrr + 2.0 * cs * sn * Hrt + cs * cs * Htt
        H[..., 0, 1] = H[..., 1, 0] = cs * sn * (Hrr - Htt) + (cs * cs - sn * sn) * Hrt
        return H

    def hessian_sq(self, f: np.ndarray) -> np.ndarray:
        """Squared Frobenius norm of the Hessian per cell."""
        return np.sum(self.hessian(f) ** 2, axis=(-2, -1))

    # ------------------------------------------------------------------ #
    # quadrature
    # ------------------------------------------------------------------ #
    def integrate(self, f: np.ndarray | float) -> float:
        return float(np.sum(np.broadcast_to(f, self.shape) * self.volumes))

    def boundary_integrate(self, g: dict[str, np.ndarray]) -> float:
        total = 0.0
        for seg in self.boundary:
            if seg.name in g:
                total += float(np.sum(np.broadcast_to(g[seg.name], seg.weights.shape) * seg.weights))
        return total

    def boundary_trace(self, f: np.ndarray) -> dict[str, np.ndarray]:
        """Value of the boundary-adjacent cell on each boundary face."""
        out = {}
        for seg in self.boundary:
            idx = 0 if seg.side == 0 else -1
            out[seg.name] = np.take(f, idx, axis=seg.axis)
        return out

    def boundary_normal_derivative_of_gradsq(self, f: np.ndarray) -> dict[str, np.ndarray]:
        """Outward normal derivative of |grad f|^2 on every boundary face.

        For a Neumann function the quantity equals minus twice the second
        fundamental form applied to the tangential gradient, so it vanishes
        identically on straight boundary pieces; those return exact zeros.
        On the annulus |grad f|^2 is formed on the boundary face and the two
        radial faces behind it, then differentiated with a one-sided
        three-point stencil (second order).
        """
        out = {}
        if not isinstance(self.geometry, Annulus):
            for seg in self.boundary:
                out[seg.name] = np.zeros(seg.weights.shape)
            return out
        f = np.asarray(f, dtype=float)
        dr, dth = self.spacing
        r0 = self.geometry.r0
        for seg in self.boundary:
            # walk inward from the boundary: rows ordered boundary-first
            rows = f if seg.side == 0 else f[::-1]
            r_face = r0 + dr * np.arange(3) if seg.side == 0 else self.geometry.r1 - dr * np.arange(3)
            trace = (9.0 * rows[0] - rows[1]) / 8.0  # Neumann-consistent boundary value
            faces = [trace, 0.5 * (rows[0] + rows[1]), 0.5 * (rows[1] + rows[2])]
            radial = [np.zeros_like(trace), (rows[1] - rows[0]) / dr, (rows[2] - rows[1]) / dr]
            G = []
            for k in range(3):
                dtheta = (np.roll(faces[k], -1) - np.roll(faces[k], 1)) / (2.0 * dth)
                G.append(radial[k] ** 2 + (dtheta / r_face[k]) ** 2)
            # outward normal derivative is minus the derivative along the inward walk
            out[seg.name] = -(-3.0 * G[0] + 4.0 * G[1] - G[2]) / (2.0 * dr)
        return out

    def neumann_check(self, f: np.ndarray) -> float:
        """Largest boundary-face normal gradient under the ghost construction (always 0)."""
        g = self._ghost(f)
        worst = 0.0
        if self.ndim == 1:
            return float(max(abs(g[1] - g[0]), abs(g[-1] - g[-2])))
        worst = max(np.max(np.abs(g[1] - g[0])), np.max(np.abs(g[-1] - g[-2])))
        if not self.periodic_axis1:
            worst = max(worst, np.max(np.abs(g[:, 1] - g[:, 0])), np.max(np.abs(g[:, -1] - g[:, -2])))
        return float(worst)


def _check_resolution(resolution, ndim) -> tuple[int, ...]:
    if isinstance(resolution, (int, np.integer)):
        resolution = (int(resolution),) * ndim
    resolution = tuple(int(n) for n in resolution)
    if len(resolution) != ndim:
        raise ValueError(f"expected {ndim} resolution entries, got {resolution}")
    if any(n < 4 for n in resolution):
        raise ValueError(f"resolution must be >= 4 per axis, got {resolution}")
    return resolution


def make_grid(geometry: Geometry, resolution) -> Grid:
    """Build a cell-centered grid for ``geometry`` with ``resolution`` cells per axis."""
    if isinstance(geometry, Interval):
        if not geometry.L > 0:
            raise ValueError(f"interval length must be positive, got {geometry.L}")
        (n,) = _check_resolution(resolution, 1)
        h = geometry.L / n
        x = (np.arange(n) + 0.5) * h
        bnd = [
            BoundarySegment("left", 0, 0, np.ones(1), np.array([[-1.0]])),
            BoundarySegment("right", 0, 1, np.ones(1), np.array([[1.0]])),
        ]
        return Grid(
            geometry=geometry,
            shape=(n,),
            spacing=(h,),
            centers=(x,),
            volumes=np.full(n, h),
            face_area=(np.ones(n + 1),),
            face_dist=(np.full(n + 1, h),),
            boundary=bnd,
            curvature_bound=0.0,
        )

    if isinstance(geometry, Rectangle):
        if not (geometry.Lx > 0 and geometry.Ly > 0):
            raise ValueError(f"rectangle sides must be positive, got {geometry}")
        nx, ny = _check_resolution(resolution, 2)
        hx, hy = geometry.Lx / nx, geometry.Ly / ny
        x = (np.arange(nx) + 0.5) * hx
        y = (np.arange(ny) + 0.5) * hy

        def seg(name, axis, side, n_faces, h_tan, normal):
            return BoundarySegment(name, axis, side, np.full(n_faces, h_tan), np.tile(normal, (n_faces, 1)))

        bnd = [
            seg("left", 0, 0, ny, hy, [-1.0, 0.0]),
            seg("right", 0, 1, ny, hy, [1.0, 0.0]),
            seg("bottom", 1, 0, nx, hx, [0.0, -1.0]),
            seg("top", 1, 1, nx, hx, [0.0, 1.0]),
        ]
        return Grid(
            geometry=geometry,
            shape=(nx, ny),
            spacing=(hx, hy),
            centers=(x, y),
            volumes=np.full((nx, ny), hx * hy),
            face_area=(np.full((nx + 1, ny), hy), np.full((nx, ny + 1), hx)),
            face_dist=(np.full((nx + 1, ny), hx), np.full((nx, ny + 1), hy)),
            boundary=bnd,
            curvature_bound=0.0,
        )

    if isinstance(geometry, Annulus):
        r0, r1 = geometry.r0, geometry.r1
        if not r0 > 0:
            raise ValueError(f"inner radius must be positive, got {r0}")
        if not r1 > r0:
            raise ValueError(f"need r1 > r0, got r0={r0}, r1={r1}")
        nr, nt = _check_resolution(resolution, 2)
        dr, dt = (r1 - r0) / nr, 2.0 * math.pi / nt
        r = r0 + (np.arange(nr) + 0.5) * dr
        th = (np.arange(nt) + 0.5) * dt
        r_faces = r0 + np.arange(nr + 1) * dr
        R = np.broadcast_to(r[:, None], (nr, nt))
        normal_in = np.stack([-np.cos(th), -np.sin(th)], axis=-1)
        bnd = [
            BoundarySegment("inner", 0, 0, np.full(nt, r0 * dt), normal_in, curvature=-1.0 / r0),
            BoundarySegment("outer", 0, 1, np.full(nt, r1 * dt), -normal_in, curvature=1.0 / r1),
        ]
        return Grid(
            geometry=geometry,
            shape=(nr, nt),
            spacing=(dr, dt),
            centers=(r, th),
            volumes=R * dr * dt,
            face_area=(np.broadcast_to(r_faces[:, None] * dt, (nr + 1, nt)).copy(), np.full((nr, nt), dr)),
            face_dist=(np.full((nr + 1, nt), dr), R * dt),
            boundary=bnd,
            curvature_bound=1.0 / r0,
        )

    raise TypeError(f"unsupported geometry {geometry!r}")
