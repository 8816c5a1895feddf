"""Recovering the insolation function q(x) from partial state observations.

While t < delta the memory term only sees the initial history, so the
equation is affine in q with known coefficient r(t) beta(u).  Two
reconstructions are provided: a pointwise algebraic inversion of the
discrete equation, and a least-squares fit to localized u_t data plus a
full snapshot at T'.  Two experiments probe identifiability: a pointwise
discrepancy test (q != q~ must show up at x0) and an empirical Lipschitz
stability ratio.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DivisionUnstable, InvalidArgument, NoConvergence
from .grid import apply_diffusion
from .stepper import ModelParams, Trajectory, simulate, time_derivative

log = logging.getLogger(__name__)

DIVISION_FLOOR = 1e-10


# -- admissible insolation functions -------------------------------------------------

@dataclass(frozen=True)
class AdmissibleSetSpec:
    """Piecewise-polynomial q on [-1, 1].

    ``coefficients[j]`` holds the polynomial on [p_j, p_{j+1}) in increasing
    powers of x; the last piece is closed at x = 1.
    """

    breakpoints: tuple
    coefficients: tuple
    q_bound: Optional[float] = None
    u0_bound: Optional[float] = None

    def __post_init__(self):
        p = np.asarray(self.breakpoints, dtype=float)
        if p.size < 2 or p[0] != -1.0 or p[-1] != 1.0 or np.any(np.diff(p) <= 0):
            raise InvalidArgument("breakpoints must increase from -1 to 1")
        if len(self.coefficients) != p.size - 1:
            raise InvalidArgument("need one coefficient list per piece")
        object.__setattr__(self, "breakpoints", tuple(float(v) for v in p))
        object.__setattr__(self, "coefficients",
                           tuple(tuple(float(c) for c in cs) for cs in self.coefficients))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = np.asarray(self.breakpoints)
        piece = np.clip(np.searchsorted(p, x, side="right") - 1, 0, len(self.coefficients) - 1)
        out = np.zeros_like(x)
        for j, cs in enumerate(self.coefficients):
            sel = piece == j
            if np.any(sel):
                out[sel] = np.polynomial.polynomial.polyval(x[sel], cs)
        return out

    def jumps(self) -> np.ndarray:
        """Left-limit minus right-value at each interior breakpoint."""
        out = []
        for j, pj in enumerate(self.breakpoints[1:-1], start=1):
            left = np.polynomial.polynomial.polyval(pj, self.coefficients[j - 1])
            right = np.polynomial.polynomial.polyval(pj, self.coefficients[j])
            out.append(left - right)
        return np.array(out)

    def is_continuous(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.jumps()) <= tol))

    def sup(self) -> float:
        return float(np.max(np.abs(self(np.linspace(-1, 1, 4001)))))

    def plus(self, other: "AdmissibleSetSpec") -> "AdmissibleSetSpec":
        bps = sorted(set(self.breakpoints) | set(other.breakpoints))
        coeffs = []
        for lo, hi in zip(bps, bps[1:]):
            mid = 0.5 * (lo + hi)
            a = self.coefficients[_piece(self.breakpoints, mid)]
            b = other.coefficients[_piece(other.breakpoints, mid)]
            coeffs.append(tuple(np.polynomial.polynomial.polyadd(a, b)))
        return AdmissibleSetSpec(tuple(bps), tuple(coeffs))

    @classmethod
    def constant(cls, c):
        return cls((-1.0, 1.0), ((c,),))

    @classmethod
    def bump(cls, height, lo, hi):
        """C1 bump height*16 (x-lo)^2 (hi-x)^2 / (hi-lo)^4 on [lo, hi], zero outside."""
        poly = np.polynomial.polynomial
        core = poly.polymul(poly.polypow((-lo, 1.0), 2), poly.polypow((hi, -1.0), 2))
        core = core * 16.0 * height / (hi - lo) ** 4
        return cls((-1.0, lo, hi, 1.0), ((0.0,), tuple(core), (0.0,)))


def _piece(breakpoints, x):
    return min(int(np.searchsorted(breakpoints, x, side="right")) - 1, len(breakpoints) - 2)


def evaluate_piecewise_analytic(spec: AdmissibleSetSpec, x: float) -> float:
    if not -1.0 <= x <= 1.0:
        raise InvalidArgument(f"x = {x} outside [-1, 1]")
    j = _piece(spec.breakpoints, x)
    return float(np.polynomial.polynomial.polyval(x, spec.coefficients[j]))


# -- data containers -----------------------------------------------------------------------

@dataclass
class ObservationSet:
    kind: str
    samples: dict
    window: dict
    noise_level: float = 0.0
    seed: Optional[int] = None
    dt: Optional[float] = None
    T: Optional[float] = None
    exploratory: bool = False


@dataclass
class ReconstructionResult:
    q_hat: np.ndarray
    x: np.ndarray
    rel_l2_error: float
    residual_norm: float
    regularization_weight: float = 0.0
    q_true: Optional[np.ndarray] = None
    iterations: int = 0
    objective_history: list = field(default_factory=list)
    exploratory: bool = False


def _rel_l2(q_hat, q_true, grid) -> float:
    if q_true is None:
        return float("nan")
    den = grid.l2(q_true)
    num = grid.l2(np.asarray(q_hat) - q_true)
    return float(num / den) if den > 0 else float(num)


def add_noise(traj: Trajectory, sigma: float, seed: int = 0) -> Trajectory:
    """Copy of ``traj`` with i.i.d. uniform [-sigma, sigma] noise on the states."""
    rng = np.random.default_rng(seed)
    noisy = traj.states + rng.uniform(-sigma, sigma, size=traj.states.shape) if sigma > 0 \
        else traj.states.copy()
    return replace(traj, states=noisy, sup_norm_seen=float(np.max(np.abs(noisy))))


def frozen_history(history_0: np.ndarray, params: ModelParams, dt: float, step_index: int):
    """H at t = step_index*dt computed from the initial history alone (t < delta)."""
    kernel, grid = params.kernel, params.grid
    m = history_0.shape[0] - 1
    s = -kernel.tau + np.arange(m + 1) * dt
    active = np.nonzero(s < -kernel.delta - 1e-12 * kernel.tau)[0]
    if step_index + active.max(initial=-1) > m:
        raise InvalidArgument("requested time reaches past the frozen-memory window")
    w = np.full(m + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    W = w[active, None] * kernel(s[active, None], grid.centers[None, :])
    return np.sum(W * history_0[step_index + active], axis=0)


# -- direct reconstruction -----------------------------------------------------------------

def reconstruct_q_direct(traj: Trajectory, params_known: ModelParams, t_eval: float, *,
                         q_true=None, floor: float = DIVISION_FLOOR) -> ReconstructionResult:
    """q = (u_t - Op u + R_e(u) - f(H)) / (r beta(u)) at a single time t_eval < delta."""
    kernel = params_known.kernel
    if not kernel.support_flag:
        raise InvalidArgument("direct reconstruction needs a kernel with a dead zone")
    if not 0 < t_eval < kernel.delta:
        raise InvalidArgument(f"t_eval = {t_eval} must lie in (0, delta = {kernel.delta})")
    grid = params_known.grid
    i = traj.index_of(t_eval)
    u = traj.states[i]
    u_t = time_derivative(traj, i)
    H = frozen_history(traj.history_0, params_known, traj.dt, i * traj.stride)
    denom = params_known.insolation.r(t_eval) * params_known.coalbedo(u)
    weak = np.nonzero(np.abs(denom) < floor)[0]
    if weak.size:
        raise DivisionUnstable(weak.tolist(), floor)
    num = (u_t - apply_diffusion(params_known.op, u) + params_known.emission(u)
           - params_known.memory_response(H))
    q_hat = num / denom
    if q_true is not None:
        q_true = np.asarray(q_true(grid.centers) if callable(q_true) else q_true, dtype=float)
    return ReconstructionResult(q_hat=q_hat, x=grid.centers.copy(),
                                rel_l2_error=_rel_l2(q_hat, q_true, grid),
                                residual_norm=0.0, q_true=q_true)


# -- localized observations and least squares ---------------------------------------------

def _time_weights(times, t0, T):
    """Trapezoid weights for samples inside [t0, T]."""
    sel = np.nonzero((times >= t0 - 1e-12) & (times <= T + 1e-12))[0]
    w = np.zeros(times.size)
    if sel.size >= 2:
        h = np.diff(times[sel])
        w[sel[:-1]] += 0.5 * h
        w[sel[1:]] += 0.5 * h
    return sel, w[sel]


def _features(states, times, op, window):
    """(u_t on window, u(T'), Op u(T')) from a (time, ..., n) state array."""
    h = times[1] - times[0]
    ut = np.empty_like(states)
    ut[1:-1] = (states[2:] - states[:-2]) / (2.0 * h)
    ut[0] = (states[1] - states[0]) / h
    ut[-1] = (states[-1] - states[-2]) / h
    ti = window["time_idx"]
    ci = window["cell_idx"]
    snap = states[window["snap_idx"]]
    return ut[ti][..., ci], snap, apply_diffusion(op, snap)


def _window(times, grid, t0, T_prime, T, a, b, delta, allow_late=False):
    if not (-1 < a < b < 1):
        raise InvalidArgument(f"need -1 < a < b < 1, got ({a}, {b})")
    if not 0 <= t0 < T_prime < T:
        raise InvalidArgument(f"need 0 <= t0 < T' < T, got {t0}, {T_prime}, {T}")
    if not T_prime < delta:
        raise InvalidArgument(f"T' = {T_prime} must be below delta = {delta}")
    if T >= delta and not allow_late:
        raise InvalidArgument(f"T = {T} >= delta = {delta}; pass allow_late=True for exploratory runs")
    h = times[1] - times[0]
    time_idx, tw = _time_weights(times, t0, T)
    cell_idx = np.nonzero((grid.centers > a) & (grid.centers < b))[0]
    snap_idx = int(round(T_prime / h))
    if abs(snap_idx * h - T_prime) > 1e-9:
        raise InvalidArgument(f"T' = {T_prime} is not a sample time (dt = {h})")
    return {"t0": t0, "T_prime": T_prime, "T": T, "a": a, "b": b,
            "time_idx": time_idx, "time_w": tw, "cell_idx": cell_idx, "snap_idx": snap_idx}


def observe_localized(traj: Trajectory, params: ModelParams, t0: float, T_prime: float,
                      a: float, b: float, noise_level: float = 0.0, seed: int = 0,
                      allow_late: bool = False) -> ObservationSet:
    """u_t on (t0, T) x (a, b) and the snapshot u(T'), Op u(T') from noisy u samples."""
    noisy = add_noise(traj, noise_level, seed)
    T = float(traj.times[-1])
    win = _window(traj.times, params.grid, t0, T_prime, T, a, b,
                  params.kernel.delta, allow_late)
    ut, snap, asnap = _features(noisy.states, traj.times, params.op, win)
    return ObservationSet(
        kind="localized+snapshot",
        samples={"u_t": ut, "u_snap": snap, "Au_snap": asnap,
                 "t": traj.times[win["time_idx"]], "x": params.grid.centers[win["cell_idx"]]},
        window=win, noise_level=noise_level, seed=seed, dt=traj.sample_dt, T=T,
        exploratory=T >= params.kernel.delta,
    )


class _LeastSquaresProblem:
    def __init__(self, obs: ObservationSet, params: ModelParams, u0, reg_weight: float):
        self.obs, self.params, self.u0, self.reg = obs, params, u0, reg_weight
        self.grid = params.grid
        win = obs.window
        dx = self.grid.dx
        self.w_t = np.sqrt(win["time_w"][:, None] * dx)
        self.w_x = np.sqrt(dx)
        self.n_forward = 0

    def residuals(self, Q):
        """Residual vectors for a batch of q vectors, shape (B, n) -> (B, m)."""
        Q = np.atleast_2d(Q)
        traj = simulate(self.params, self.u0, self.obs.T, self.obs.dt, q_values=Q,
                        check_bound=False)
        self.n_forward += Q.shape[0]
        ut, snap, asnap = _features(traj.states, traj.times, self.params.op, self.obs.window)
        s = self.obs.samples
        r_t = (self.w_t[:, None, :] * (ut - s["u_t"][:, None, :]))
        r_t = np.moveaxis(r_t, 1, 0).reshape(Q.shape[0], -1)
        parts = [r_t, self.w_x * (snap - s["u_snap"]), self.w_x * (asnap - s["Au_snap"])]
        if self.reg > 0:
            parts.append(np.sqrt(self.reg * self.grid.dx) * Q)
        return np.concatenate(parts, axis=1)

    def jacobian(self, q, r0=None, step=1e-4):
        """Forward-difference Jacobian: one batched solve of n+1 perturbed runs."""
        n = q.size
        h = step * np.maximum(1.0, np.abs(q))
        Q = np.vstack([q[None, :], q[None, :] + np.diag(h)])
        R = self.residuals(Q)
        return R[0], (R[1:] - R[0]).T / h


def reconstruct_q_leastsq(obs: ObservationSet, params_known: ModelParams, u0,
                          reg_weight: float = 0.0, *, q_init=None, q_true=None,
                          max_iters: int = 500, method: str = "gauss_newton",
                          gtol: float = 1e-10, ftol: float = 1e-12, fd_step: float = 1e-4,
                          armijo_c: float = 1e-4, backtrack: float = 0.5,
                          ) -> ReconstructionResult:
    """Minimise the localized-data misfit over q on the grid.

    Search directions come from a finite-difference Jacobian of the residual
    (n + 1 forward solves per iteration).  ``method="gradient"`` takes the
    steepest-descent direction; ``"gauss_newton"`` solves the normal
    equations for the direction.  Both use the same Armijo backtracking.
    """
    if reg_weight < 0:
        raise InvalidArgument("reg_weight must be nonnegative")
    if method not in ("gauss_newton", "gradient"):
        raise InvalidArgument(f"unknown method {method!r}")
    grid = params_known.grid
    prob = _LeastSquaresProblem(obs, params_known, u0, reg_weight)
    if q_init is None:
        q = np.full(grid.n, float(np.mean(params_known.q_values())))
    else:
        q = np.asarray(q_init(grid.centers) if callable(q_init) else q_init, dtype=float).copy()

    r, Jm = prob.jacobian(q, step=fd_step)
    f = float(r @ r)
    g = 2.0 * Jm.T @ r
    g0 = float(np.linalg.norm(g))
    history = [f]
    alpha_prev = None
    it = 0
    for it in range(1, max_iters + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol * max(g0, 1e-300) or f == 0.0:
            break
        if method == "gauss_newton":
            JtJ = Jm.T @ Jm
            lam = 1e-12 * np.trace(JtJ) / grid.n
            d = -np.linalg.solve(JtJ + lam * np.eye(grid.n), Jm.T @ r)
            alpha = 1.0
        else:
            d = -g
            alpha = alpha_prev * 2.0 if alpha_prev else 1.0 / max(gnorm, 1e-300)
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -float(g @ g)
        accepted = False
        for _ in range(60):
            trial = q + alpha * d
            r_trial = prob.residuals(trial)[0]
            f_trial = float(r_trial @ r_trial)
            if f_trial <= f + armijo_c * alpha * slope:
                accepted = True
                break
            alpha *= backtrack
        if not accepted:
            log.debug("line search failed at iteration %d", it)
            break
        alpha_prev = alpha
        q = trial
        r, Jm = prob.jacobian(q, step=fd_step)
        f_old, f = f, float(r @ r)
        g = 2.0 * Jm.T @ r
        history.append(f)
        if f_old - f <= ftol * f_old:
            break

    gnorm = float(np.linalg.norm(g))
    if g0 > 0 and gnorm > 1e-3 * g0 and f > 1e-28:
        raise NoConvergence(
            f"gradient norm {gnorm:.3e} not reduced by 1e-3 from {g0:.3e} in {it} iterations",
            history=history,
        )
    if q_true is not None:
        q_true = np.asarray(q_true(grid.centers) if callable(q_true) else q_true, dtype=float)
    return ReconstructionResult(
        q_hat=q, x=grid.centers.copy(), rel_l2_error=_rel_l2(q, q_true, grid),
        residual_norm=float(np.sqrt(f)), regularization_weight=reg_weight, q_true=q_true,
        iterations=it, objective_history=history, exploratory=obs.exploratory,
    )


# -- identifiability experiments ---------------------------------------------------------

def _q_vector(q, grid):
    if callable(q):
        return np.asarray(q(grid.centers), dtype=float)
    return np.asarray(q, dtype=float)


@dataclass
class UniquenessReport:
    max_discrepancy: float
    q_equal: bool
    x0: float
    x0_requested: float
    times: np.ndarray
    du: np.ndarray
    dux: np.ndarray
    first_sign: int = 0
    memory_identical: bool = True

    def verdict(self) -> str:
        if self.q_equal:
            return f"q == q~: discrepancy at x0={self.x0:.4g} is {self.max_discrepancy:.3e}"
        if self.max_discrepancy > 0:
            return (f"q != q~ detected at x0={self.x0:.4g}: "
                    f"max discrepancy {self.max_discrepancy:.3e}")
        return f"q != q~ NOT detected at x0={self.x0:.4g}"


def uniqueness_experiment(params: ModelParams, q: AdmissibleSetSpec, q_tilde: AdmissibleSetSpec,
                          u0: Callable, x0: float, T: float, target_dt: float,
                          tol: float = 1e-12) -> UniquenessReport:
    """Simulate with q and q~ from the same history and compare u, u_x at x0."""
    if not -1 < x0 < 1:
        raise InvalidArgument(f"x0 = {x0} outside (-1, 1)")
    if not callable(u0):
        raise InvalidArgument("u0 must be a closed-form function of (s, x)")
    if not T < params.kernel.delta or not params.kernel.support_flag:
        raise InvalidArgument("the pointwise experiment needs T < delta and a dead-zone kernel")
    grid = params.grid
    qa, qb = _q_vector(q, grid), _q_vector(q_tilde, grid)
    if np.any(params.insolation.r(0.0) <= 0):
        raise InvalidArgument("r must be positive")
    ta = simulate(params, u0, T, target_dt, q_values=qa, record_memory=True)
    tb = simulate(params, u0, T, target_dt, q_values=qb, record_memory=True)
    i = grid.nearest_cell(x0)
    i = min(max(i, 1), grid.n - 2)
    v = ta.states - tb.states
    du = v[:, i]
    dux = (v[:, i + 1] - v[:, i - 1]) / (2.0 * grid.dx)
    inner = slice(1, len(ta.times) - 1)
    disc = np.abs(du[inner]) + np.abs(dux[inner])
    nz = np.nonzero(du[1:])[0]
    first_sign = int(np.sign(du[1 + nz[0]])) if nz.size else 0
    if callable(q) and callable(q_tilde):
        xs = np.linspace(-1, 1, 4001)
        q_gap = float(np.max(np.abs(np.asarray(q(xs)) - np.asarray(q_tilde(xs)))))
    else:
        q_gap = float(np.max(np.abs(qa - qb)))
    return UniquenessReport(
        max_discrepancy=float(disc.max()) if disc.size else 0.0, q_equal=q_gap <= tol,
        x0=float(grid.centers[i]), x0_requested=float(x0), times=ta.times, du=du, dux=dux,
        first_sign=first_sign, memory_identical=bool(np.array_equal(ta.memory, tb.memory)),
    )


@dataclass
class StabilityReport:
    ratio: float
    numerator: float
    snapshot_term: float
    ut_term: float
    history_term: float
    identical_inputs: bool = False

    @property
    def denominator(self) -> float:
        return self.snapshot_term + self.ut_term + self.history_term


def history_distance(grid, h0, h0_tilde) -> float:
    """max over history slots of ||v||_L2 + ||sqrt(rho) v_x||_L2."""
    v = np.asarray(h0) - np.asarray(h0_tilde)
    return float(np.max(grid.l2(v) + grid.weighted_gradient_norm(v)))


def stability_ratio(params: ModelParams, q, q_tilde, u0, u0_tilde, *, t0: float,
                    T_prime: float, T: float, a: float, b: float,
                    target_dt: float) -> StabilityReport:
    """||q - q~||^2 over the right-hand side data norms of the stability estimate."""
    kernel = params.kernel
    if not kernel.support_flag:
        raise InvalidArgument("stability experiment needs a dead-zone kernel")
    if not 0 < T_prime < kernel.delta:
        raise InvalidArgument(f"need 0 < T' < delta, got T' = {T_prime}")
    grid = params.grid
    qa, qb = _q_vector(q, grid), _q_vector(q_tilde, grid)
    ta = simulate(params, u0, T, target_dt, q_values=qa)
    tb = simulate(params, u0_tilde, T, target_dt, q_values=qb)
    win = _window(ta.times, grid, t0, T_prime, T, a, b, kernel.delta, allow_late=True)
    ut_a, snap_a, as_a = _features(ta.states, ta.times, params.op, win)
    ut_b, snap_b, as_b = _features(tb.states, tb.times, params.op, win)
    num = float(grid.l2(qa - qb) ** 2)
    snap_term = float((grid.l2(snap_a - snap_b) + grid.l2(as_a - as_b)) ** 2)
    ut_term = float(np.sum(win["time_w"][:, None] * grid.dx * (ut_a - ut_b) ** 2))
    hist_term = history_distance(grid, ta.history_0, tb.history_0) ** 2
    den = snap_term + ut_term + hist_term
    if den == 0.0:
        ratio = 0.0 if num == 0.0 else float("inf")
        return StabilityReport(ratio, num, snap_term, ut_term, hist_term, identical_inputs=num == 0.0)
    return StabilityReport(num / den, num, snap_term, ut_term, hist_term)


def stability_sweep(params: ModelParams, q, perturbation, amplitudes: Sequence[float], u0,
                    **window) -> list:
    """Ratios for q~ = q + amp * perturbation over a list of amplitudes."""
    grid = params.grid
    qa = _q_vector(q, grid)
    dq = _q_vector(perturbation, grid)
    return [stability_ratio(params, qa, qa + amp * dq, u0, u0, **window) for amp in amplitudes]
