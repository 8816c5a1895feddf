import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from ebm_memory.errors import BoundViolation, InvalidArgument, InvalidState
from ebm_memory.grid import build_grid
from ebm_memory.memory import MemoryKernel, init_history, push_state
from ebm_memory.physics import CoalbedoSpec, EmissionSpec, InsolationSpec, MemoryResponseSpec
from ebm_memory.stepper import (ModelParams, select_dt, simulate, step, time_derivative,
                                time_derivatives, v_norm)

from conftest import sellers_params


def brute_dt(tau, delta, T, target):
    """Largest T/k <= target that also divides tau and delta."""
    tau, delta, T, target = (Fraction(v).limit_denominator(10**6) for v in (tau, delta, T, target))
    k = 1
    while True:
        dt = T / k
        if dt <= target and (tau / dt).denominator == 1 and (delta / dt).denominator == 1:
            return dt
        k += 1


@settings(max_examples=200, deadline=None)
@given(tn=st.integers(1, 24), td=st.integers(1, 12), dn=st.integers(0, 23),
       Tn=st.integers(1, 36), Td=st.integers(1, 12), target_k=st.integers(2, 40))
def test_select_dt_matches_brute_force(tn, td, dn, Tn, Td, target_k):
    tau = tn / td
    delta = tau * dn / 24
    T = Tn / Td
    target = min(tau, delta if delta > 0 else tau) / target_k * 1.37
    try:
        dt = select_dt(tau, delta, T, target)
    except InvalidArgument:
        # only allowed when no admissible dt lies within a factor 10 of the target
        assert brute_dt(tau, delta, T, target) < Fraction(target).limit_denominator(10**6) / 10
        return
    assert dt == pytest.approx(float(brute_dt(tau, delta, T, target)), rel=1e-12)


def test_select_dt_twelfths():
    assert select_dt(1.0, 0.5, 1.0, 1.0 / 12) == pytest.approx(1.0 / 12, rel=1e-15)
    assert select_dt(1.0, 0.5, 5.0, 1e-3) == pytest.approx(1e-3, rel=1e-15)
    assert select_dt(1.0, 0.0, 0.7, 0.3) == pytest.approx(0.1)


@pytest.mark.parametrize("tau, delta, T, target", [
    (1.0, 0.5, 1.0, 0.6),                 # above delta
    (1.0, 0.0, 1.0, 0.0),                 # not positive
    (1.0, 0.5, 1.0 + 1.0 / 99991, 1e-3),  # nearest commensurable dt far below target
])
def test_select_dt_rejects(tau, delta, T, target):
    with pytest.raises(InvalidArgument):
        select_dt(tau, delta, T, target)


def uniform_params(n=8, q=1.0, emission=None, f_bound=0.0):
    return ModelParams(
        InsolationSpec.build("constant", q),
        CoalbedoSpec("sellers_smooth", 0.38, 0.68, u_bar=0.7, smoothness_width=0.5),
        emission or EmissionSpec.sellers(1.0),
        MemoryResponseSpec(f_bound, 1.0),
        MemoryKernel.cosine(1.0, 0.5),
        build_grid(n, 0.5),
    )


def test_uniform_state_relaxes_to_energy_balance_root():
    p = uniform_params()
    root = brentq(lambda u: float(p.coalbedo(u)) - u**4, 0.0, 2.0)
    traj = simulate(p, 0.3, 20.0, 0.01)
    np.testing.assert_allclose(traj.states[-1], root, atol=1e-10)
    assert np.ptp(traj.states[-1]) < 1e-12


def test_affine_decay_first_order():
    p = uniform_params(q=0.0, emission=EmissionSpec.budyko(0.5, 2.0))
    exact = (1.0 + 0.25) * math.exp(-2.0) - 0.25
    errs = [abs(simulate(p, 1.0, 1.0, dt).states[-1, 0] - exact) for dt in (0.01, 0.005, 0.0025)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    np.testing.assert_allclose(ratios, 2.0, atol=0.05)


def test_step_matches_simulate():
    p = sellers_params(n=10, f_bound=0.3)
    u0 = lambda s, x: 0.5 + 0.2 * np.cos(x) + 0.1 * s
    traj = simulate(p, u0, 0.05, 0.01)
    buf = init_history(u0, p.grid, 0.01, 1.0, 0.5)
    u = buf.newest().copy()
    for k in range(5):
        u = step(u, k * 0.01, buf, p, 0.01)
        push_state(buf, u, (k + 1) * 0.01)
        np.testing.assert_allclose(u, traj.states[k + 1], rtol=0, atol=1e-15)
    with pytest.raises(InvalidState):
        step(u, 0.0, buf, p, 0.01)


def test_batched_q_matches_individual_runs():
    p = sellers_params(n=12, f_bound=0.2)
    Q = np.stack([p.q_values(), 0.8 * p.q_values(), np.ones(12)])
    u0 = lambda s, x: 0.6 + 0.1 * x
    batch = simulate(p, u0, 0.2, 0.01, q_values=Q, record_memory=True)
    for b in range(3):
        single = simulate(p, u0, 0.2, 0.01, q_values=Q[b], record_memory=True)
        np.testing.assert_allclose(batch.states[:, b], single.states, rtol=0, atol=1e-14)
        np.testing.assert_allclose(batch.memory[:, b], single.memory, rtol=0, atol=1e-14)


def test_stride_and_memory_shapes():
    p = sellers_params(n=6)
    traj = simulate(p, 0.5, 0.1, 0.01, stride=2, record_memory=True)
    assert traj.states.shape == (6, 6)
    assert traj.memory.shape == traj.states.shape
    np.testing.assert_allclose(traj.times, np.arange(6) * 0.02)
    assert traj.index_of(0.04) == 2
    with pytest.raises(InvalidArgument):
        traj.index_of(0.03)


def test_runs_are_deterministic():
    p = sellers_params(n=16, f_bound=0.3)
    a = simulate(p, lambda s, x: 0.5 + 0.3 * x, 0.3, 0.01)
    b = simulate(p, lambda s, x: 0.5 + 0.3 * x, 0.3, 0.01)
    assert np.array_equal(a.states, b.states) and a.params_digest == b.params_digest


def test_digest_tracks_parameters():
    p = sellers_params(n=16)
    assert p.digest() != p.replace(grid=build_grid(17, 0.3)).digest()
    assert p.digest() != p.replace(memory_response=MemoryResponseSpec(0.1)).digest()


def test_bound_monitor_raises_when_limit_is_too_tight():
    p = uniform_params(n=8)
    with pytest.raises(BoundViolation):
        simulate(p, 0.0, 2.0, 0.01, bound_slack=-0.5)


def test_graph_coalbedo_rejected():
    p = sellers_params().replace(coalbedo=CoalbedoSpec("budyko_graph", 0.38, 0.68))
    with pytest.raises(InvalidArgument):
        simulate(p, 0.0, 0.1, 0.01)


def test_crank_nicolson_runs_and_stays_close():
    p = sellers_params(n=16)
    a = simulate(p, lambda s, x: 0.5 + 0.3 * x, 0.2, 0.005)
    b = simulate(p, lambda s, x: 0.5 + 0.3 * x, 0.2, 0.005, theta=0.5)
    assert np.max(np.abs(a.states[-1] - b.states[-1])) < 1e-2


def test_time_derivatives_consistent():
    p = sellers_params(n=8)
    traj = simulate(p, lambda s, x: 0.4 + 0.1 * x, 0.1, 0.01)
    D = time_derivatives(traj)
    for i in (0, 4, len(traj.times) - 1):
        np.testing.assert_array_equal(D[i], time_derivative(traj, i))
    with pytest.raises(InvalidArgument):
        time_derivative(traj, len(traj.times))


def test_v_norm_of_constant():
    g = build_grid(8, 1.0)
    assert v_norm(g, np.full(8, 2.0)) == pytest.approx(2.0 * math.sqrt(2.0))
