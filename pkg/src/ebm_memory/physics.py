"""Pointwise model terms: forcing, coalbedo, emission, memory response.

Temperatures are in degrees C on the same scale as the ice threshold
u_bar = -10; everything else is nondimensional.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgument, ParseError, Unsupported

SELLERS_SMOOTH = "sellers_smooth"
BUDYKO_GRAPH = "budyko_graph"
BUDYKO_REGULARIZED = "budyko_regularized"


# -- insolation ---------------------------------------------------------------

def _const_r(value):
    return lambda t: value


@dataclass(frozen=True)
class InsolationSpec:
    """Incoming flux Q(t, x) = r(t) q(x)."""

    q: Callable = field(repr=False)
    r: Callable = field(repr=False)
    q_bound: float
    r_bound: float
    r_prime_bound: float = 0.0
    description: dict = field(default_factory=dict, compare=False)

    def q_on(self, x) -> np.ndarray:
        return np.asarray(self.q(np.asarray(x, dtype=float)), dtype=float) + 0.0 * np.asarray(x)

    def with_q(self, q, q_bound=None, label="custom"):
        """Same seasonal factor, different insolation function."""
        if q_bound is None:
            xs = np.linspace(-1, 1, 2001)
            q_bound = float(np.max(np.abs(q(xs))))
        desc = dict(self.description)
        desc["q"] = label
        return InsolationSpec(q, self.r, q_bound, self.r_bound, self.r_prime_bound, desc)

    @classmethod
    def build(cls, q_kind="constant", scale=1.0, r_kind="constant", r_mean=1.0,
              r_amplitude=0.0, r_period=1.0, table=None):
        if q_kind == "constant":
            q = lambda x: scale + 0.0 * x
            q_bound = abs(scale)
        elif q_kind == "legendre_p2":
            q = lambda x: scale * (1.0 - 0.482 * 0.5 * (3.0 * x**2 - 1.0))
            q_bound = abs(scale) * max(1.241, 1.0 - 0.482)
        elif q_kind == "table":
            xs, qs = table
            xs = np.asarray(xs, float)
            qs = np.asarray(qs, float) * scale
            q = lambda x: np.interp(x, xs, qs)
            q_bound = float(np.max(np.abs(qs)))
        else:
            raise InvalidArgument(f"unknown insolation preset {q_kind!r}")
        if r_kind == "constant":
            r = _const_r(r_mean)
            r_bound, r_prime = abs(r_mean), 0.0
        elif r_kind == "seasonal":
            w = 2 * math.pi / r_period
            r = lambda t: r_mean + r_amplitude * math.sin(w * t)
            r_bound = abs(r_mean) + abs(r_amplitude)
            r_prime = abs(r_amplitude) * w
        else:
            raise InvalidArgument(f"unknown seasonal factor {r_kind!r}")
        desc = {"q": q_kind, "scale": scale, "r": r_kind, "r_mean": r_mean,
                "r_amplitude": r_amplitude, "r_period": r_period}
        if table is not None:
            desc["table_checksum"] = float(np.sum(table[1]))
        return cls(q, r, q_bound, r_bound, r_prime, desc)


def load_insolation_csv(path):
    """Read an (x, q) table; returns the two columns as arrays."""
    xs, qs = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["x", "q"]:
            raise ParseError("expected header 'x,q'", line=1, path=path)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                x, q = (float(v) for v in rec)
            except ValueError:
                raise ParseError(f"bad row {rec!r}", line=lineno, path=path) from None
            xs.append(x)
            qs.append(q)
    xs = np.array(xs)
    if xs.size < 2 or np.any(np.diff(xs) <= 0):
        raise ParseError("x column must be strictly increasing with >= 2 rows", path=path)
    if xs[0] > -1 or xs[-1] < 1:
        raise ParseError("table must cover [-1, 1]", path=path)
    return xs, np.array(qs)


# -- coalbedo -------------------------------------------------------------------

def _smoothstep5(z):
    """C2 quintic ramp: 0 for z <= -1, 1 for z >= 1."""
    y = np.clip((np.asarray(z, dtype=float) + 1.0) / 2.0, 0.0, 1.0)
    return y**3 * (10.0 + y * (-15.0 + 6.0 * y))


def _smoothstep5_prime(z):
    y = (np.asarray(z, dtype=float) + 1.0) / 2.0
    inside = (y > 0) & (y < 1)
    return np.where(inside, 15.0 * y**2 * (1.0 - y) ** 2, 0.0)


def _smoothstep3(z):
    """C1 cubic Hermite ramp: 0 for z <= -1, 1 for z >= 1."""
    y = np.clip((np.asarray(z, dtype=float) + 1.0) / 2.0, 0.0, 1.0)
    return y * y * (3.0 - 2.0 * y)


def _smoothstep3_prime(z):
    y = (np.asarray(z, dtype=float) + 1.0) / 2.0
    inside = (y > 0) & (y < 1)
    return np.where(inside, 3.0 * y * (1.0 - y), 0.0)


@dataclass(frozen=True)
class CoalbedoSpec:
    kind: str = SELLERS_SMOOTH
    a_i: float = 0.38
    a_f: float = 0.68
    u_bar: float = -10.0
    smoothness_width: float = 10.0
    j: Optional[int] = None

    def __post_init__(self):
        if not self.a_i < self.a_f:
            raise InvalidArgument(f"need a_i < a_f, got a_i={self.a_i}, a_f={self.a_f}")
        if self.kind not in (SELLERS_SMOOTH, BUDYKO_GRAPH, BUDYKO_REGULARIZED):
            raise InvalidArgument(f"unknown coalbedo kind {self.kind!r}")
        if self.kind == SELLERS_SMOOTH and not self.smoothness_width > 0:
            raise InvalidArgument("smoothness_width must be positive")
        if self.kind == BUDYKO_REGULARIZED and (self.j is None or self.j < 1):
            raise InvalidArgument("budyko_regularized needs an integer j >= 1")

    def regularized(self, j: int) -> "CoalbedoSpec":
        return CoalbedoSpec(BUDYKO_REGULARIZED, self.a_i, self.a_f, self.u_bar,
                            self.smoothness_width, int(j))

    @property
    def bound(self) -> float:
        return max(abs(self.a_i), abs(self.a_f))

    def __call__(self, u):
        """Vectorised single-valued evaluation (not defined for the graph)."""
        jump = self.a_f - self.a_i
        if self.kind == SELLERS_SMOOTH:
            return self.a_i + jump * _smoothstep5((u - self.u_bar) / self.smoothness_width)
        if self.kind == BUDYKO_REGULARIZED:
            return self.a_i + jump * _smoothstep3((u - self.u_bar) * self.j)
        raise InvalidArgument("budyko_graph is set-valued; use coalbedo() or the budyko module")

    def derivative(self, u):
        jump = self.a_f - self.a_i
        if self.kind == SELLERS_SMOOTH:
            w = self.smoothness_width
            return jump * _smoothstep5_prime((u - self.u_bar) / w) / w
        if self.kind == BUDYKO_REGULARIZED:
            return jump * self.j * _smoothstep3_prime((u - self.u_bar) * self.j)
        raise InvalidArgument("budyko_graph has no derivative")

    def branch(self, u):
        """Graph branch values; NaN marks the threshold where the graph is an interval."""
        u = np.asarray(u, dtype=float)
        return np.where(u < self.u_bar, self.a_i, np.where(u > self.u_bar, self.a_f, np.nan))


def coalbedo(spec: CoalbedoSpec, u: float):
    """Scalar coalbedo; the Budyko graph returns the tuple (a_i, a_f) at u = u_bar."""
    if spec.kind == BUDYKO_GRAPH:
        if u < spec.u_bar:
            return spec.a_i
        if u > spec.u_bar:
            return spec.a_f
        return (spec.a_i, spec.a_f)
    return float(spec(u))


# -- emission -----------------------------------------------------------------

@dataclass(frozen=True)
class EmissionSpec:
    kind: str = "sellers"
    epsilon: Optional[Callable] = field(default=None, repr=False)
    epsilon1: float = 1.0
    a: float = 0.0
    b: float = 0.0
    description: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in ("sellers", "budyko"):
            raise InvalidArgument(f"unknown emission kind {self.kind!r}")
        if self.kind == "sellers" and not self.epsilon1 > 0:
            raise InvalidArgument("epsilon1 must be positive")

    @classmethod
    def sellers(cls, epsilon1=1.0):
        return cls("sellers", lambda u: epsilon1 + 0.0 * u, epsilon1,
                   description={"kind": "sellers", "epsilon": "constant", "epsilon1": epsilon1})

    @classmethod
    def sellers_logistic(cls, epsilon1=0.6, epsilon2=1.0, u_c=0.0, width=5.0):
        """Emissivity rising smoothly from epsilon1 (cold) to epsilon2 (warm)."""
        if not epsilon2 >= epsilon1 > 0:
            raise InvalidArgument("need epsilon2 >= epsilon1 > 0")
        eps = lambda u: epsilon1 + (epsilon2 - epsilon1) / (1.0 + np.exp(-(u - u_c) / width))
        return cls("sellers", eps, epsilon1,
                   description={"kind": "sellers", "epsilon": "logistic", "epsilon1": epsilon1,
                                "epsilon2": epsilon2, "u_c": u_c, "width": width})

    @classmethod
    def budyko(cls, a, b):
        return cls("budyko", None, 1.0, a, b,
                   description={"kind": "budyko", "a": a, "b": b})

    def __call__(self, u):
        if self.kind == "sellers":
            u = np.asarray(u, dtype=float)
            return self.epsilon(u) * np.abs(u) ** 3 * u
        return self.a + self.b * np.asarray(u, dtype=float)


def emitted(spec: EmissionSpec, u):
    out = spec(u)
    return float(out) if np.ndim(out) == 0 else out


# -- memory response ------------------------------------------------------------

@dataclass(frozen=True)
class MemoryResponseSpec:
    """f(h) = f_bound * tanh(h / h_scale) unless a custom f is given."""

    f_bound: float = 0.0
    h_scale: float = 1.0
    f: Optional[Callable] = field(default=None, repr=False)
    f_lip: Optional[float] = None

    def __post_init__(self):
        if self.f_bound < 0:
            raise InvalidArgument("f_bound must be nonnegative")
        if not self.h_scale > 0:
            raise InvalidArgument("h_scale must be positive")

    def __call__(self, h):
        if self.f is not None:
            return np.asarray(self.f(np.asarray(h, dtype=float)), dtype=float)
        h = np.asarray(h, dtype=float)
        if self.f_bound == 0.0:
            return np.zeros_like(h)
        return self.f_bound * np.tanh(h / self.h_scale)

    @property
    def lipschitz(self) -> float:
        if self.f_lip is not None:
            return self.f_lip
        return self.f_bound / self.h_scale


# -- assembled right-hand side -------------------------------------------------------

def rhs(t, u, H, params, q_values=None):
    """r(t) q(x) beta(u) - R_e(u) + f(H), componentwise on the grid.

    ``q_values`` overrides q on the cell centres; it may carry batch axes.
    """
    if params.coalbedo.kind == BUDYKO_GRAPH:
        raise InvalidArgument("budyko_graph coalbedo is set-valued; use the budyko module")
    u = np.asarray(u, dtype=float)
    H = np.asarray(H, dtype=float)
    n = params.grid.n
    if u.shape[-1] != n or H.shape[-1] != n:
        raise InvalidArgument(f"state/history length mismatch with grid of {n} cells")
    q = params.q_values() if q_values is None else q_values
    return params.insolation.r(t) * q * params.coalbedo(u) - params.emission(u) \
        + params.memory_response(H)


def linf_bound(params, u0_sup: float) -> float:
    """max(|u0(0)|_inf, ((|q| |r| |beta| + |f|) / eps1)^(1/4))."""
    if params.emission.kind != "sellers":
        raise Unsupported("the L-infinity bound needs Stefan-Boltzmann (sellers) emission")
    ins = params.insolation
    m1 = ((ins.q_bound * ins.r_bound * params.coalbedo.bound + params.memory_response.f_bound)
          / params.emission.epsilon1) ** 0.25
    return max(float(u0_sup), m1)
