"""IMEX time integration of the coupled diffusion + memory system.

One step is

    u+ = (Id - dt*Op)^{-1} (u + dt * rhs(t, u, H(t)))

so the stiff degenerate diffusion is implicit and the bounded reaction and
memory terms are explicit.  With Stefan-Boltzmann emission every run is
checked against the a-priori sup-norm bound from :func:`physics.linf_bound`.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from . import physics
from .errors import BoundViolation, InvalidArgument, InvalidState
from .grid import Grid, ImplicitSolver, apply_diffusion, assemble_diffusion
from .memory import HistoryBuffer, MemoryKernel, eval_history, init_history, push_state
from .physics import CoalbedoSpec, EmissionSpec, InsolationSpec, MemoryResponseSpec

DEFAULT_BOUND_SLACK = 0.05


@dataclass(frozen=True)
class ModelParams:
    insolation: InsolationSpec
    coalbedo: CoalbedoSpec
    emission: EmissionSpec
    memory_response: MemoryResponseSpec
    kernel: MemoryKernel
    grid: Grid

    @cached_property
    def op(self):
        return assemble_diffusion(self.grid)

    @cached_property
    def _q_cache(self):
        q = self.insolation.q_on(self.grid.centers)
        q.setflags(write=False)
        return q

    def q_values(self) -> np.ndarray:
        return self._q_cache

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def describe(self) -> dict:
        c = self.coalbedo
        mr = self.memory_response
        return {
            "grid": {"n": self.grid.n, "rho0": self.grid.rho0},
            "insolation": {**self.insolation.description,
                           "q_bound": self.insolation.q_bound,
                           "r_bound": self.insolation.r_bound},
            "coalbedo": {"kind": c.kind, "a_i": c.a_i, "a_f": c.a_f, "u_bar": c.u_bar,
                         "smoothness_width": c.smoothness_width, "j": c.j},
            "emission": dict(self.emission.description) or {"kind": self.emission.kind},
            "memory_response": {"f_bound": mr.f_bound, "h_scale": mr.h_scale,
                                "custom": mr.f is not None},
            "kernel": {**self.kernel.description, "support_flag": self.kernel.support_flag},
        }

    def digest(self) -> str:
        h = hashlib.sha256(json.dumps(self.describe(), sort_keys=True, default=str).encode())
        # q sampled on the grid distinguishes custom insolation functions
        h.update(np.ascontiguousarray(self.q_values()).tobytes())
        return h.hexdigest()


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    history_0: np.ndarray
    params_digest: str
    sup_norm_seen: float
    dt: float
    grid_n: int
    grid_rho0: float
    stride: int = 1
    bound: Optional[float] = None
    memory: Optional[np.ndarray] = field(default=None, repr=False)
    final_history: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def sample_dt(self) -> float:
        return self.dt * self.stride

    def index_of(self, t: float) -> int:
        i = int(round(t / self.sample_dt))
        if abs(i * self.sample_dt - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= i < len(self.times):
            raise InvalidArgument(f"t = {t} is not a stored sample time")
        return i


def _as_fraction(v: float) -> Fraction:
    return Fraction(v).limit_denominator(10**6)


def select_dt(tau: float, delta: float, T: float, target_dt: float) -> float:
    """Largest dt <= target_dt that divides tau, T and (if positive) delta."""
    upper = min(tau, delta) if delta > 0 else tau
    if not 0 < target_dt <= upper * (1 + 1e-12):
        raise InvalidArgument(f"target_dt must lie in (0, {upper}], got {target_dt}")
    fr = [_as_fraction(tau), _as_fraction(T)]
    if delta > 0:
        fr.append(_as_fraction(delta))
    if any(f <= 0 for f in fr):
        raise InvalidArgument("tau and T must be positive")
    den = 1
    for f in fr:
        den = den * f.denominator // math.gcd(den, f.denominator)
    num = 0
    for f in fr:
        num = math.gcd(num, f.numerator * (den // f.denominator))
    g = Fraction(num, den)
    k = math.ceil(g / _as_fraction(target_dt))
    dt = g / k
    if dt < _as_fraction(target_dt) / 10:
        raise InvalidArgument(
            f"no commensurable dt within a factor 10 of {target_dt} for tau={tau}, delta={delta}, T={T}"
        )
    return float(dt)


def _as_history(u0) -> Callable:
    if callable(u0):
        return u0
    c = float(u0)
    return lambda s, x: c + 0.0 * np.asarray(x)


def step(u, t, buf: HistoryBuffer, params: ModelParams, dt: float, solver=None,
         q_values=None, theta: float = 1.0):
    """One IMEX step from t to t + dt; the caller pushes the result into ``buf``."""
    if abs(buf.head_time - t) > 1e-9 * max(1.0, abs(t)):
        raise InvalidState(f"history head at {buf.head_time}, stepping from {t}")
    if solver is None:
        solver = ImplicitSolver(params.op, dt, theta)
    H = eval_history(buf, params.kernel, params.grid)
    F = physics.rhs(t, u, H, params, q_values)
    if theta == 1.0:
        return solver.solve(u + dt * F)
    explicit = (1.0 - theta) * dt * apply_diffusion(params.op, u)
    return solver.solve(u + explicit + dt * F)


def simulate(params: ModelParams, u0, T: float, target_dt: float, *,
             bound_slack: float = DEFAULT_BOUND_SLACK, stride: int = 1,
             record_memory: bool = False, q_values=None, check_bound: bool = True,
             theta: float = 1.0) -> Trajectory:
    """Integrate over [0, T] from the initial history u0(s, x), s in [-tau, 0].

    ``q_values`` replaces q on the grid and may carry leading batch axes, in
    which case every batch member is advanced in lockstep.
    """
    if params.coalbedo.kind == physics.BUDYKO_GRAPH:
        raise InvalidArgument("budyko_graph coalbedo is set-valued; use budyko.solve_budyko")
    if stride < 1:
        raise InvalidArgument("stride must be >= 1")
    kernel, grid = params.kernel, params.grid
    delta = kernel.delta if kernel.support_flag else 0.0
    dt = select_dt(kernel.tau, delta, T, target_dt)
    nsteps = int(round(T / dt))
    q = params.q_values() if q_values is None else np.asarray(q_values, dtype=float)
    batch = q.shape[:-1]
    u0 = _as_history(u0)
    buf = init_history(u0, grid, dt, kernel.tau, delta, batch_shape=batch)
    history_0 = buf.ordered()
    u = buf.newest().copy()

    bound = None
    if params.emission.kind == "sellers":
        bound = physics.linf_bound(params.replace(insolation=_bounded(params.insolation, q)),
                                   float(np.max(np.abs(u))))
    limit = bound * (1.0 + bound_slack) if (bound is not None and check_bound) else None

    solver = ImplicitSolver(params.op, dt, theta)
    states = [u.copy()]
    memory = []
    sup = float(np.max(np.abs(u)))
    for k in range(nsteps):
        t = k * dt
        H = eval_history(buf, kernel, grid)
        if record_memory and k % stride == 0:
            memory.append(H)
        F = physics.rhs(t, u, H, params, q)
        if theta == 1.0:
            u = solver.solve(u + dt * F)
        else:
            u = solver.solve(u + (1.0 - theta) * dt * apply_diffusion(params.op, u) + dt * F)
        push_state(buf, u, (k + 1) * dt)
        umax = float(np.max(np.abs(u)))
        if not math.isfinite(umax):
            raise InvalidState(f"non-finite state at t = {(k + 1) * dt}")
        if limit is not None and umax > limit:
            idx = np.unravel_index(np.argmax(np.abs(u)), u.shape)
            raise BoundViolation((k + 1) * dt, float(grid.centers[idx[-1]]), umax, bound)
        sup = max(sup, umax)
        if (k + 1) % stride == 0:
            states.append(u.copy())
    if record_memory and nsteps % stride == 0:
        memory.append(eval_history(buf, kernel, grid))

    states = np.array(states)
    times = np.arange(states.shape[0]) * dt * stride
    return Trajectory(
        times=times, states=states, history_0=history_0, params_digest=params.digest(),
        sup_norm_seen=float(np.max(np.abs(states))) if stride == 1 else sup,
        dt=dt, grid_n=grid.n, grid_rho0=grid.rho0, stride=stride, bound=bound,
        memory=np.array(memory) if record_memory else None,
        final_history=buf.ordered(),
    )


def _bounded(ins: InsolationSpec, q) -> InsolationSpec:
    """Insolation spec whose q_bound also covers an override vector."""
    qb = max(ins.q_bound, float(np.max(np.abs(q))))
    if qb == ins.q_bound:
        return ins
    return InsolationSpec(ins.q, ins.r, qb, ins.r_bound, ins.r_prime_bound, ins.description)


def time_derivative(traj: Trajectory, i: int) -> np.ndarray:
    """u_t at sample i: centred inside, one-sided at the two ends."""
    last = len(traj.times) - 1
    if not 0 <= i <= last or last < 1:
        raise InvalidArgument(f"time index {i} outside [0, {last}]")
    h = traj.sample_dt
    S = traj.states
    if i == 0:
        return (S[1] - S[0]) / h
    if i == last:
        return (S[last] - S[last - 1]) / h
    return (S[i + 1] - S[i - 1]) / (2.0 * h)


def time_derivatives(traj: Trajectory) -> np.ndarray:
    """u_t at every stored sample (same conventions as :func:`time_derivative`)."""
    S = traj.states
    h = traj.sample_dt
    out = np.empty_like(S)
    out[1:-1] = (S[2:] - S[:-2]) / (2.0 * h)
    out[0] = (S[1] - S[0]) / h
    out[-1] = (S[-1] - S[-2]) / h
    return out


def v_norm(grid: Grid, u) -> np.ndarray:
    """Diagnostic discrete V-norm ||u||_L2 + ||sqrt(rho) u_x||_L2 (no bound asserted)."""
    return grid.l2(u) + grid.weighted_gradient_norm(u)
