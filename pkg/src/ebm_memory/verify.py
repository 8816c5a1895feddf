"""Self-checks runnable from the command line.

Each suite returns a list of :class:`Check` records; a suite passes when
every record does.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import physics
from .grid import apply_diffusion, assemble_diffusion, build_grid
from .memory import MemoryKernel
from .physics import CoalbedoSpec, EmissionSpec, InsolationSpec, MemoryResponseSpec
from .stepper import ModelParams, simulate

ORACLE_RATIO_RANGE = (1.7, 2.5)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def dense_diffusion(grid) -> np.ndarray:
    """Reference matrix assembled face by face, independent of the banded operator."""
    n = grid.n
    A = np.zeros((n, n))
    h2 = grid.dx ** 2
    for i in range(n):
        rl = grid.rho0 * (1.0 - grid.faces[i] ** 2)
        rr = grid.rho0 * (1.0 - grid.faces[i + 1] ** 2)
        if i > 0:
            A[i, i - 1] += rl / h2
            A[i, i] -= rl / h2
        if i < n - 1:
            A[i, i + 1] += rr / h2
            A[i, i] -= rr / h2
    return A


def operator_suite(sizes=(4, 8, 16, 64), n_random: int = 100, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for n in sizes:
        t0 = time.perf_counter()
        grid = build_grid(n, 1.0)
        op = assemble_diffusion(grid)
        D = op.dense()
        scale = op.norm_inf()
        sym = bool(np.array_equal(D, D.T))
        rows = float(np.max(np.abs(D.sum(axis=1))))
        V = rng.standard_normal((n_random, n))
        quad = np.einsum("ij,ij->i", V, apply_diffusion(op, V))
        worst = float(quad.max())
        ok = sym and rows <= 1e-12 * scale and worst <= 1e-12 * scale * float(np.max(np.sum(V * V, 1)))
        detail = f"symmetric={sym} max|row sum|={rows:.1e} max v'Av={worst:.2e}"
        if n <= 8:
            ref = dense_diffusion(grid)
            rel = float(np.max(np.abs(D - ref)) / np.max(np.abs(ref)))
            ok = ok and rel <= 1e-12
            detail += f" dense rel err={rel:.1e}"
        out.append(Check(f"operator n={n}", ok, detail, time.perf_counter() - t0))
    return out


def bounds_suite(T: float = 5.0, n: int = 64, dt: float = 1e-3, slack: float = 0.05) -> list:
    """Sup-norm monitor on a run whose a-priori bound is M = 1."""
    t0 = time.perf_counter()
    grid = build_grid(n, 0.3)
    params = ModelParams(
        InsolationSpec.build("constant", 1.0),
        CoalbedoSpec("sellers_smooth", 0.38, 1.0),
        EmissionSpec.sellers(1.0),
        MemoryResponseSpec(0.0),
        MemoryKernel.cosine(1.0, 0.5),
        grid,
    )
    traj = simulate(params, 0.0, T, dt, bound_slack=slack)
    M = physics.linf_bound(params, 0.0)
    ok = traj.sup_norm_seen <= M * (1.0 + slack)
    detail = f"sup|u|={traj.sup_norm_seen:.8f} M={M:.6g} margin={M * (1 + slack) - traj.sup_norm_seen:.3e}"
    return [Check("sup-norm bound", ok, detail, time.perf_counter() - t0)]


def oracle_params(n: int = 6) -> ModelParams:
    return ModelParams(
        InsolationSpec.build("legendre_p2", 1.0),
        CoalbedoSpec("sellers_smooth", 0.3, 0.7, u_bar=0.5, smoothness_width=1.0),
        EmissionSpec.sellers(1.0),
        MemoryResponseSpec(0.5, 1.0),
        MemoryKernel.cosine(1.0, 0.5),
        build_grid(n, 1.0),
    )


def oracle_u0(s, x):
    return 0.5 + 0.3 * x + 0.2 * s + 0.1 * np.cos(3.0 * x)


def duhamel_reference(params: ModelParams, u0, T: float, h: float, n_quad: int = 4001):
    """Exponential-integrator reference with step h using the dense matrix exponential.

    The history integral is evaluated from u0 by fine trapezoid quadrature, which
    is exact data as long as T stays below the kernel dead zone.
    """
    grid = params.grid
    A = dense_diffusion(grid)
    E = sla.expm(h * A)
    ss = np.linspace(-params.kernel.tau, 0.0, n_quad)
    w = np.full(n_quad, ss[1] - ss[0])
    w[0] = w[-1] = 0.5 * w[0]
    K = w[:, None] * params.kernel(ss[:, None], grid.centers[None, :])
    u = np.asarray(u0(0.0, grid.centers), dtype=float)
    for i in range(int(round(T / h))):
        t = i * h
        H = np.sum(K * u0(t + ss[:, None], grid.centers[None, :]), axis=0)
        u = E @ (u + h * physics.rhs(t, u, H, params))
    return u


def oracle_ratio(dt: float = 0.01, steps: int = 5, refine: int = 256):
    """Error at T = steps*dt for dt and dt/2 against a fine exponential reference."""
    params = oracle_params()
    T = steps * dt
    ref = duhamel_reference(params, oracle_u0, T, dt / refine)
    e1 = float(np.max(np.abs(simulate(params, oracle_u0, T, dt).states[-1] - ref)))
    e2 = float(np.max(np.abs(simulate(params, oracle_u0, T, dt / 2).states[-1] - ref)))
    return e1, e2, e1 / e2


def oracle_suite() -> list:
    t0 = time.perf_counter()
    e1, e2, ratio = oracle_ratio()
    lo, hi = ORACLE_RATIO_RANGE
    ok = lo <= ratio <= hi
    return [Check("mild-solution oracle", ok,
                  f"err(dt)={e1:.3e} err(dt/2)={e2:.3e} ratio={ratio:.3f} in [{lo}, {hi}]",
                  time.perf_counter() - t0)]


SUITES = {"operator": operator_suite, "bounds": bounds_suite, "oracle": oracle_suite}


def run_suites(name: str = "all") -> list:
    names = list(SUITES) if name == "all" else [name]
    checks = []
    for nm in names:
        checks.extend(SUITES[nm]())
    return checks
