"""Cell-centred mesh on (-1, 1) and the degenerate diffusion operator.

The operator is assembled in flux form,

    (Op u)_i = (rho_{i+1/2} (u_{i+1} - u_i) - rho_{i-1/2} (u_i - u_{i-1})) / dx**2,

with rho(x) = rho0 (1 - x**2) evaluated on cell faces.  Because rho vanishes at
x = -1 and x = 1 the two boundary fluxes are identically zero, which is the
discrete form of the natural condition rho u_x = 0 at the poles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class Grid:
    n: int
    rho0: float
    faces: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)
    rho_at_faces: np.ndarray = field(repr=False)

    @property
    def dx(self) -> float:
        return 2.0 / self.n

    @property
    def tag(self) -> tuple:
        return ("grid", self.n, float(self.rho0))

    def rho(self, x):
        return self.rho0 * (1.0 - np.asarray(x) ** 2)

    def nearest_cell(self, x0: float) -> int:
        return int(np.argmin(np.abs(self.centers - x0)))

    def l2(self, v, axis=-1):
        """Discrete L2(I) norm, sqrt(sum dx v**2)."""
        return np.sqrt(self.dx * np.sum(np.asarray(v) ** 2, axis=axis))

    def weighted_gradient_norm(self, v, axis=-1):
        """Discrete ||sqrt(rho) u_x||_L2 using face differences."""
        v = np.moveaxis(np.asarray(v, dtype=float), axis, -1)
        dv = np.diff(v, axis=-1) / self.dx
        rho_in = self.rho_at_faces[1:-1]
        return np.sqrt(self.dx * np.sum(rho_in * dv**2, axis=-1))


def build_grid(n: int, rho0: float = 1.0) -> Grid:
    if int(n) != n or n < 3:
        raise InvalidArgument(f"need n >= 3 cells, got {n}")
    if not rho0 > 0:
        raise InvalidArgument(f"rho0 must be positive, got {rho0}")
    n = int(n)
    faces = np.linspace(-1.0, 1.0, n + 1)
    faces[0], faces[-1] = -1.0, 1.0
    centers = 0.5 * (faces[:-1] + faces[1:])
    rho_f = rho0 * (1.0 - faces**2)
    # exact zeros at the poles regardless of rounding in linspace
    rho_f[0] = rho_f[-1] = 0.0
    for a in (faces, centers, rho_f):
        a.setflags(write=False)
    return Grid(n=n, rho0=float(rho0), faces=faces, centers=centers, rho_at_faces=rho_f)


@dataclass(frozen=True)
class DiffusionOperator:
    """Symmetric tridiagonal matrix stored as three bands."""

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    grid_ref: tuple

    @property
    def n(self) -> int:
        return self.diag.shape[0]

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.sub, -1) + np.diag(self.sup, 1)

    def norm_inf(self) -> float:
        row = np.abs(self.diag).copy()
        row[1:] += np.abs(self.sub)
        row[:-1] += np.abs(self.sup)
        return float(row.max())


def assemble_diffusion(grid: Grid) -> DiffusionOperator:
    inv = 1.0 / grid.dx**2
    rho = grid.rho_at_faces
    off = rho[1:-1] * inv
    diag = -(rho[:-1] + rho[1:]) * inv
    return DiffusionOperator(sub=off.copy(), diag=diag, sup=off.copy(), grid_ref=grid.tag)


def apply_diffusion(op: DiffusionOperator, u) -> np.ndarray:
    """Tridiagonal product along the last axis; leading axes are batch axes."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != op.n:
        raise InvalidArgument(f"state has length {u.shape[-1]}, operator expects {op.n}")
    out = op.diag * u
    out[..., :-1] += op.sup * u[..., 1:]
    out[..., 1:] += op.sub * u[..., :-1]
    return out


class ImplicitSolver:
    """Pre-factored Thomas sweep for (Id - theta*dt*Op) v = rhs.

    The matrix is an M-matrix (positive diagonal, nonpositive off-diagonals,
    diagonal dominance), so elimination without pivoting is stable.
    """

    def __init__(self, op: DiffusionOperator, dt: float, theta: float = 1.0):
        if not dt > 0:
            raise InvalidArgument(f"dt must be positive, got {dt}")
        self.op, self.dt, self.theta = op, float(dt), float(theta)
        h = theta * dt
        a = -h * op.sub
        b = 1.0 - h * op.diag
        c = -h * op.sup
        n = op.n
        cp = np.empty(n - 1)
        denom = np.empty(n)
        denom[0] = b[0]
        cp[0] = c[0] / b[0]
        for i in range(1, n):
            denom[i] = b[i] - a[i - 1] * cp[i - 1]
            if i < n - 1:
                cp[i] = c[i] / denom[i]
        self._a, self._cp, self._denom = a, cp, denom

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        a, cp, denom = self._a, self._cp, self._denom
        n = denom.shape[0]
        if rhs.shape[-1] != n:
            raise InvalidArgument(f"rhs has length {rhs.shape[-1]}, operator expects {n}")
        d = np.moveaxis(rhs, -1, 0).copy()
        d[0] /= denom[0]
        for i in range(1, n):
            d[i] = (d[i] - a[i - 1] * d[i - 1]) / denom[i]
        for i in range(n - 2, -1, -1):
            d[i] -= cp[i] * d[i + 1]
        return np.moveaxis(d, 0, -1)


def solve_implicit(op: DiffusionOperator, rhs, dt: float) -> np.ndarray:
    """Backward-Euler resolvent: solve (Id - dt*Op) v = rhs."""
    return ImplicitSolver(op, dt).solve(rhs)
