"""Delayed-state storage and the memory integral

    H(t, x) = int_{-tau}^{0} k(s, x) u(t + s, x) ds

evaluated by composite trapezoid quadrature on the step-aligned history.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import InvalidArgument, InvalidState, ParseError
from .grid import Grid

KernelFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MemoryKernel:
    """Memory weight k(s, x) on [-tau, 0] x [-1, 1].

    ``profile`` is the kernel on its support and ``profile_ds`` its derivative
    in s.  When ``support_flag`` is set the kernel is forced to zero on the
    closed dead zone [-delta, 0]; ``profile`` evaluated at -delta then gives
    the left limit used by :func:`history_time_derivative`.
    """

    tau: float
    delta: float
    profile: KernelFn = field(repr=False)
    profile_ds: KernelFn = field(repr=False)
    support_flag: bool = True
    kind: str = "custom"
    description: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.tau > 0:
            raise InvalidArgument(f"tau must be positive, got {self.tau}")
        if not 0 <= self.delta < self.tau:
            raise InvalidArgument(f"need 0 <= delta < tau, got delta={self.delta}, tau={self.tau}")
        if self.support_flag and self.delta == 0:
            raise InvalidArgument("support_flag requires delta > 0")

    def __call__(self, s, x):
        s = np.asarray(s, dtype=float)
        x = np.asarray(x, dtype=float)
        val = np.broadcast_to(self.profile(s, x), np.broadcast_shapes(s.shape, x.shape))
        if self.support_flag:
            val = np.where(s >= -self.delta, 0.0, val)
        return np.array(val, dtype=float)

    def ds(self, s, x):
        s = np.asarray(s, dtype=float)
        x = np.asarray(x, dtype=float)
        val = np.broadcast_to(self.profile_ds(s, x), np.broadcast_shapes(s.shape, x.shape))
        return np.array(val, dtype=float)

    # built-in closed forms ---------------------------------------------

    @classmethod
    def constant(cls, tau, delta, level=1.0, support_flag=None):
        support_flag = delta > 0 if support_flag is None else support_flag
        return cls(
            tau, delta,
            profile=lambda s, x: level + 0.0 * s * x,
            profile_ds=lambda s, x: 0.0 * s * x,
            support_flag=support_flag, kind="constant",
            description={"kind": "constant", "tau": tau, "delta": delta, "level": level},
        )

    @classmethod
    def hat(cls, tau, delta, level=1.0, support_flag=None):
        """Triangle peaking at the middle of [-tau, -delta], zero at both ends."""
        support_flag = delta > 0 if support_flag is None else support_flag
        mid = -(tau + delta) / 2.0
        half = (tau - delta) / 2.0

        def prof(s, x):
            return level * np.clip(1.0 - np.abs(s - mid) / half, 0.0, None) + 0.0 * x

        def prof_ds(s, x):
            inside = np.abs(s - mid) < half
            return np.where(inside, -level * np.sign(s - mid) / half, 0.0) + 0.0 * x

        return cls(tau, delta, prof, prof_ds, support_flag, "hat",
                   {"kind": "hat", "tau": tau, "delta": delta, "level": level})

    @classmethod
    def cosine(cls, tau, delta, level=1.0, support_flag=None):
        """C1 taper level*sin^2(pi (s+tau)/(tau-delta)); vanishes with its slope at both ends."""
        support_flag = delta > 0 if support_flag is None else support_flag
        width = tau - delta
        w = math.pi / width

        def prof(s, x):
            inside = (s >= -tau) & (s <= -delta)
            return np.where(inside, level * np.sin(w * (s + tau)) ** 2, 0.0) + 0.0 * x

        def prof_ds(s, x):
            inside = (s >= -tau) & (s <= -delta)
            return np.where(inside, level * w * np.sin(2 * w * (s + tau)), 0.0) + 0.0 * x

        return cls(tau, delta, prof, prof_ds, support_flag, "cosine",
                   {"kind": "cosine", "tau": tau, "delta": delta, "level": level})

    @classmethod
    def from_table(cls, s_nodes, x_nodes, values, tau=None, delta=0.0, support_flag=None):
        """Bilinear interpolation of a rectangular (s, x) lattice."""
        s_nodes = np.asarray(s_nodes, dtype=float)
        x_nodes = np.asarray(x_nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != (s_nodes.size, x_nodes.size):
            raise InvalidArgument("kernel table shape does not match its lattice")
        if np.any(np.diff(s_nodes) <= 0) or np.any(np.diff(x_nodes) <= 0):
            raise InvalidArgument("kernel lattice must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("kernel table contains non-finite values")
        tau = -s_nodes[0] if tau is None else tau
        if s_nodes[0] > -tau + 1e-12 or s_nodes[-1] < -1e-12:
            raise InvalidArgument("kernel table must cover s in [-tau, 0]")
        if x_nodes[0] > -1 + 1e-12 or x_nodes[-1] < 1 - 1e-12:
            raise InvalidArgument("kernel table must cover x in [-1, 1]")
        support_flag = delta > 0 if support_flag is None else support_flag
        if support_flag:
            dead = s_nodes >= -delta
            if np.any(values[dead] != 0.0):
                raise InvalidArgument(
                    f"kernel table is nonzero inside the dead zone [-{delta}, 0]"
                )
        interp = RegularGridInterpolator((s_nodes, x_nodes), values)
        dvals = np.gradient(values, s_nodes, axis=0)
        dinterp = RegularGridInterpolator((s_nodes, x_nodes), dvals)

        def _ev(f, s, x):
            s, x = np.broadcast_arrays(np.asarray(s, float), np.asarray(x, float))
            pts = np.stack([np.clip(s, s_nodes[0], s_nodes[-1]),
                            np.clip(x, x_nodes[0], x_nodes[-1])], axis=-1)
            return f(pts.reshape(-1, 2)).reshape(s.shape)

        return cls(tau, delta,
                   profile=lambda s, x: _ev(interp, s, x),
                   profile_ds=lambda s, x: _ev(dinterp, s, x),
                   support_flag=support_flag, kind="table",
                   description={"kind": "table", "tau": tau, "delta": delta,
                                "shape": list(values.shape),
                                "checksum": float(np.sum(values))})


def load_kernel_csv(path, tau=None, delta=0.0, support_flag=None) -> MemoryKernel:
    """Read a kernel table with columns s, x, k on a complete rectangular lattice."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["s", "x", "k"]:
            raise ParseError("expected header 's,x,k'", line=1, path=path)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 3:
                raise ParseError(f"expected 3 fields, got {len(rec)}", line=lineno, path=path)
            try:
                rows.append(tuple(float(v) for v in rec))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
    if not rows:
        raise ParseError("kernel table is empty", path=path)
    arr = np.array(rows)
    s_nodes = np.unique(arr[:, 0])
    x_nodes = np.unique(arr[:, 1])
    if len(rows) != s_nodes.size * x_nodes.size:
        raise ParseError(
            f"lattice incomplete: {len(rows)} rows for {s_nodes.size} x {x_nodes.size} nodes",
            path=path,
        )
    table = np.full((s_nodes.size, x_nodes.size), np.nan)
    si = np.searchsorted(s_nodes, arr[:, 0])
    xi = np.searchsorted(x_nodes, arr[:, 1])
    table[si, xi] = arr[:, 2]
    if np.isnan(table).any():
        raise ParseError("lattice has duplicate or missing (s, x) pairs", path=path)
    return MemoryKernel.from_table(s_nodes, x_nodes, table, tau=tau, delta=delta,
                                   support_flag=support_flag)


def _steps(length: float, dt: float, what: str) -> int:
    m = round(length / dt)
    if m < 1 or abs(m * dt - length) > 1e-9 * max(1.0, length):
        raise InvalidArgument(f"{what}/dt = {length / dt!r} is not an integer")
    return int(m)


class HistoryBuffer:
    """Ring buffer of m+1 states at times head_time - tau, ..., head_time.

    Each state is written twice, at ring positions i and i + m + 1, so the
    window oldest..newest is always one contiguous slice.  States may carry
    leading batch axes; the last axis is always space.
    """

    def __init__(self, dt: float, tau: float, state_shape, delta: float = 0.0):
        self.dt = float(dt)
        self.tau = float(tau)
        self.m = _steps(tau, dt, "tau")
        self.m_delta = _steps(delta, dt, "delta") if delta > 0 else 0
        self._store = np.zeros((2 * (self.m + 1), *state_shape))
        self._newest = self.m
        self.filled = 0
        self.head_step = 0
        self._weights = {}

    @property
    def head_time(self) -> float:
        return self.head_step * self.dt

    def is_full(self) -> bool:
        return self.filled >= self.m + 1

    def slot_times(self) -> np.ndarray:
        return self.head_time + (np.arange(self.m + 1) - self.m) * self.dt

    def window(self) -> np.ndarray:
        """Read-only view of the slots, oldest to newest."""
        start = self._newest + 1
        view = self._store[start:start + self.m + 1]
        view.flags.writeable = False
        return view

    def ordered(self) -> np.ndarray:
        """Slots oldest to newest (a copy)."""
        return self.window().copy()

    def slot(self, j: int) -> np.ndarray:
        """State at time head_time - tau + j*dt."""
        return self._store[self._newest + 1 + j]

    def newest(self) -> np.ndarray:
        return self._store[self._newest]

    def _write(self, pos: int, u) -> None:
        self._store[pos] = u
        self._store[pos + self.m + 1] = u

    def copy(self) -> "HistoryBuffer":
        new = object.__new__(HistoryBuffer)
        new.__dict__.update(self.__dict__)
        new._store = self._store.copy()
        return new

    def quadrature_weights(self, kernel: MemoryKernel, grid: Grid):
        """(active slot indices j, trapezoid weight times k(s_j, x_i))."""
        key = (id(kernel), grid.tag)
        cached = self._weights.get(key)
        if cached is not None and cached[0] is kernel:
            return cached[1], cached[2]
        if abs(kernel.tau - self.tau) > 1e-12 * self.tau:
            raise InvalidArgument("kernel tau does not match the buffer span")
        s = -self.tau + np.arange(self.m + 1) * self.dt
        w = np.full(self.m + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        active = np.arange(self.m + 1)
        if kernel.support_flag:
            # slots inside the closed dead zone carry k = 0 and are skipped
            active = active[s < -kernel.delta - 1e-12 * self.tau]
        W = w[active, None] * kernel(s[active, None], grid.centers[None, :])
        self._weights[key] = (kernel, active, W)
        return active, W


def init_history(u0, grid: Grid, dt: float, tau: float, delta: float = 0.0,
                 batch_shape=()) -> HistoryBuffer:
    """Fill a buffer from the initial history u0(s, x) on [-tau, 0]."""
    buf = HistoryBuffer(dt, tau, (*batch_shape, grid.n), delta=delta)
    s = -tau + np.arange(buf.m + 1) * buf.dt
    shape = buf._store.shape[1:]
    for j, sj in enumerate(s):
        buf._write(j, np.broadcast_to(np.asarray(u0(sj, grid.centers), dtype=float), shape))
    buf._newest = buf.m
    buf.filled = buf.m + 1
    buf.head_step = 0
    return buf


def push_state(buf: HistoryBuffer, u, t: float) -> HistoryBuffer:
    expected = (buf.head_step + 1) * buf.dt
    if abs(t - expected) > 1e-9 * max(1.0, abs(expected)):
        raise InvalidArgument(f"non-contiguous push: t = {t!r}, expected {expected!r}")
    buf._newest = (buf._newest + 1) % (buf.m + 1)
    buf._write(buf._newest, u)
    buf.head_step += 1
    buf.filled = min(buf.filled + 1, buf.m + 1)
    return buf


def eval_history(buf: HistoryBuffer, kernel: MemoryKernel, grid: Grid) -> np.ndarray:
    if not buf.is_full():
        raise InvalidState(f"history holds {buf.filled} of {buf.m + 1} slots")
    active, W = buf.quadrature_weights(kernel, grid)
    if active.size == 0:
        return np.zeros(buf._store.shape[1:])
    # active slots are a leading run j = 0..J-1 of the window
    S = buf.window()[: active.size]
    if S.ndim == 2:
        return np.einsum("jn,jn->n", W, S)
    return np.einsum("jn,j...n->...n", W, S)


def history_time_derivative(buf: HistoryBuffer, kernel: MemoryKernel, grid: Grid) -> np.ndarray:
    """dH/dt while the memory only sees the initial history (0 <= t < delta).

    Differentiating H(t) = int_{t-tau}^{t-delta} k(s-t, x) u0(s, x) ds gives

        k(-delta^-, x) u0(t-delta, x) - k(-tau, x) u0(t-tau, x)
            - int_{-tau}^{-delta} dk/ds(s, x) u0(t+s, x) ds.
    """
    if not kernel.support_flag:
        raise InvalidState("H_t formula needs a kernel with a dead zone")
    if not buf.head_time < kernel.delta - 1e-12:
        raise InvalidState(f"head_time {buf.head_time} >= delta {kernel.delta}; memory no longer frozen")
    if not buf.is_full():
        raise InvalidState("history buffer not full")
    x = grid.centers
    jd = buf.m - buf.m_delta
    s = -buf.tau + np.arange(jd + 1) * buf.dt
    u_tau = buf.slot(0)
    u_delta = buf.slot(jd)
    k_tau = kernel.profile(np.array(-buf.tau), x)
    k_delta = kernel.profile(np.array(-kernel.delta), x)
    dk = kernel.ds(s[:, None], x[None, :])
    w = np.full(jd + 1, buf.dt)
    w[0] = w[-1] = 0.5 * buf.dt
    S = buf.window()[: jd + 1]
    integral = np.einsum("jn,j...n->...n", w[:, None] * dk, S)
    return k_delta * u_delta - k_tau * u_tau - integral
