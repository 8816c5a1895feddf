"""Set-valued Budyko dynamics by coalbedo regularization.

The graph beta is replaced by C1 ramps beta_j of width 2/j, each regularized
problem is integrated as a Sellers-type run, and the sequence u_j is tested
for a Cauchy limit in max_t ||.||_L2.  The returned u_inf is the limit of the
regularization; the differential inclusion may admit other solutions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import physics
from .errors import InvalidArgument, NoConvergence
from .stepper import ModelParams, Trajectory, simulate

DEFAULT_J_SCHEDULE = tuple(2**k for k in range(2, 11))
DEFAULT_BAND_TOL = 1e-3
DEFAULT_VALUE_TOL = 1e-6

AI_BRANCH = "ai_branch"
AF_BRANCH = "af_branch"
INTERVAL = "interval"
ZERO_FORCING = "zero_forcing"
VIOLATION = "violation"


@dataclass
class InclusionReport:
    counts: dict
    violations: list
    band_tol: float
    value_tol: float
    b_min: float = np.nan
    b_max: float = np.nan
    labels: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "n_violations": len(self.violations),
            "violations": [dict(v) for v in self.violations],
            "band_tol": self.band_tol,
            "value_tol": self.value_tol,
            "B_range": [self.b_min, self.b_max],
        }


@dataclass
class BudykoSolution:
    trajectory: Trajectory
    gamma: np.ndarray
    j_final: int
    cauchy_gap: float
    j_values: list
    gaps: list
    sup_norms: list
    inclusion_report: Optional[InclusionReport] = None

    @property
    def memory(self) -> np.ndarray:
        return self.trajectory.memory

    @property
    def bounded(self) -> bool:
        return all(s <= 2.0 * self.sup_norms[0] for s in self.sup_norms)


def _check_params(params: ModelParams):
    if params.coalbedo.kind != physics.BUDYKO_GRAPH:
        raise InvalidArgument("solve_budyko expects a budyko_graph coalbedo")
    if params.emission.kind != "budyko":
        raise InvalidArgument("solve_budyko expects affine (budyko) emission a + b u")


def selection(traj: Trajectory, params: ModelParams, coalbedo) -> np.ndarray:
    """gamma(t, x) = r(t) q(x) beta_j(u) - (a + b u) + f(H) along a trajectory."""
    r = np.array([params.insolation.r(t) for t in traj.times])
    q = params.q_values()
    u = traj.states
    return (r[:, None] * q[None, :] * coalbedo(u) - params.emission(u)
            + params.memory_response(traj.memory))


def solve_budyko(params: ModelParams, u0, T: float, target_dt: float,
                 j_schedule: Sequence[int] = DEFAULT_J_SCHEDULE, tol: float = 1e-2, *,
                 band_tol: Optional[float] = None, value_tol: float = DEFAULT_VALUE_TOL,
                 stop_early: bool = True) -> BudykoSolution:
    """Regularize, integrate for each j, stop at the first Cauchy gap <= tol.

    ``band_tol`` defaults to max(1e-3, 1/j_final): beta_j is only pinned to
    the branch values outside [u_bar - 1/j, u_bar + 1/j].
    """
    _check_params(params)
    js = [int(j) for j in j_schedule]
    if len(js) < 2 or any(b <= a for a, b in zip(js, js[1:])) or js[0] < 1:
        raise InvalidArgument("j_schedule must be >= 2 strictly increasing positive integers")

    grid = params.grid
    prev = None
    gaps, sup_norms, done = [], [], []
    converged_at = None
    for j in js:
        pj = params.replace(coalbedo=params.coalbedo.regularized(j))
        traj = simulate(pj, u0, T, target_dt, record_memory=True)
        sup_norms.append(traj.sup_norm_seen)
        done.append((j, traj, pj))
        if prev is not None:
            gap = float(np.max(grid.l2(traj.states - prev.states)))
            gaps.append(gap)
            if gap <= tol and converged_at is None:
                converged_at = len(done) - 1
                if stop_early:
                    break
        prev = traj

    if converged_at is None:
        raise NoConvergence(
            f"Cauchy gap never fell below {tol} over j = {js}", history=gaps
        )
    idx = len(done) - 1 if not stop_early else converged_at
    j_final, traj, pj = done[idx]
    gamma = selection(traj, pj, pj.coalbedo)
    sol = BudykoSolution(
        trajectory=traj, gamma=gamma, j_final=j_final, cauchy_gap=gaps[idx - 1],
        j_values=[d[0] for d in done], gaps=gaps, sup_norms=sup_norms,
    )
    if band_tol is None:
        band_tol = max(DEFAULT_BAND_TOL, 1.0 / j_final)
    sol.inclusion_report = verify_inclusion(sol, params, band_tol, value_tol)
    return sol


def verify_inclusion(solution: BudykoSolution, params: ModelParams,
                     band_tol: float = DEFAULT_BAND_TOL,
                     value_tol: float = DEFAULT_VALUE_TOL) -> InclusionReport:
    """Check gamma + (a + b u) - f(H) in r q beta(u) pointwise."""
    traj = solution.trajectory
    u = traj.states
    H = solution.memory
    cb = params.coalbedo
    r = np.array([params.insolation.r(t) for t in traj.times])
    rq = r[:, None] * params.q_values()[None, :]
    lhs = solution.gamma + params.emission(u) - params.memory_response(H)

    forced = rq != 0
    B = np.where(forced, lhs / np.where(forced, rq, 1.0), np.nan)
    cold = forced & (u < cb.u_bar - band_tol)
    warm = forced & (u > cb.u_bar + band_tol)
    mid = forced & ~cold & ~warm

    bad = np.zeros(u.shape, dtype=bool)
    bad |= cold & (np.abs(B - cb.a_i) > value_tol)
    bad |= warm & (np.abs(B - cb.a_f) > value_tol)
    bad |= mid & ((B < cb.a_i - value_tol) | (B > cb.a_f + value_tol))
    bad |= ~forced & (np.abs(lhs) > value_tol)

    labels = np.empty(u.shape, dtype=object)
    labels[cold] = AI_BRANCH
    labels[warm] = AF_BRANCH
    labels[mid] = INTERVAL
    labels[~forced] = ZERO_FORCING
    labels[bad] = VIOLATION

    counts = {k: int(np.sum(labels == k))
              for k in (AI_BRANCH, AF_BRANCH, INTERVAL, ZERO_FORCING, VIOLATION)}
    x = np.asarray(params.grid.centers)
    violations = [
        {"t": float(traj.times[ti]), "x": float(x[xi]),
         "B": None if np.isnan(B[ti, xi]) else float(B[ti, xi]),
         "u": float(u[ti, xi])}
        for ti, xi in zip(*np.nonzero(bad))
    ]
    finite = B[forced]
    return InclusionReport(
        counts=counts, violations=violations, band_tol=band_tol, value_tol=value_tol,
        b_min=float(finite.min()) if finite.size else np.nan,
        b_max=float(finite.max()) if finite.size else np.nan,
        labels=labels,
    )
