import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ebm_memory.errors import DivisionUnstable, InvalidArgument, NoConvergence
from ebm_memory.inverse import (AdmissibleSetSpec, add_noise, evaluate_piecewise_analytic,
                                frozen_history, history_distance, observe_localized,
                                reconstruct_q_direct, reconstruct_q_leastsq, stability_ratio,
                                stability_sweep, uniqueness_experiment)
from ebm_memory.memory import MemoryKernel
from ebm_memory.physics import InsolationSpec
from ebm_memory.stepper import simulate

from conftest import inverse_params, inverse_u0


# -- admissible set --------------------------------------------------------------------

def test_single_piece_evaluation():
    spec = AdmissibleSetSpec((-1.0, 1.0), ((1.0, 1.0),))
    assert evaluate_piecewise_analytic(spec, 0.5) == 1.5
    assert evaluate_piecewise_analytic(spec, 1.0) == 2.0


def test_breakpoint_takes_right_piece():
    spec = AdmissibleSetSpec((-1.0, 0.0, 1.0), ((1.0,), (2.0,)))
    assert evaluate_piecewise_analytic(spec, 0.0) == 2.0
    assert spec(np.array([0.0]))[0] == 2.0
    assert not spec.is_continuous()
    np.testing.assert_allclose(spec.jumps(), [-1.0])


def test_continuous_pieces():
    spec = AdmissibleSetSpec((-1.0, 0.0, 1.0), ((1.0, 1.0), (1.0, -1.0)))
    assert spec.is_continuous()
    assert evaluate_piecewise_analytic(spec, -1e-15) == pytest.approx(
        evaluate_piecewise_analytic(spec, 0.0))


def test_outside_interval_and_bad_specs():
    spec = AdmissibleSetSpec.constant(1.0)
    with pytest.raises(InvalidArgument):
        evaluate_piecewise_analytic(spec, 1.5)
    with pytest.raises(InvalidArgument):
        AdmissibleSetSpec((-1.0, 0.5), ((1.0,),))
    with pytest.raises(InvalidArgument):
        AdmissibleSetSpec((-1.0, 0.0, 1.0), ((1.0,),))


def test_bump_is_c1_and_supported():
    b = AdmissibleSetSpec.bump(0.3, 0.2, 0.6)
    assert b.is_continuous(1e-14)
    assert b(np.array([0.4]))[0] == pytest.approx(0.3)
    assert np.all(b(np.array([-0.5, 0.1, 0.7])) == 0.0)
    x = np.array([0.2, 0.6])
    slope = (b(x + 1e-7) - b(x - 1e-7)) / 2e-7
    np.testing.assert_allclose(slope, 0.0, atol=1e-5)  # O(h) from the one-sided curvature


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-3, 3), h=st.floats(-1, 1), x=st.floats(-1, 1))
def test_plus_adds_pointwise(c, h, x):
    a = AdmissibleSetSpec((-1.0, 0.0, 1.0), ((c, 1.0), (c, -1.0)))
    b = AdmissibleSetSpec.bump(h, -0.3, 0.5)
    s = a.plus(b)
    assert evaluate_piecewise_analytic(s, x) == pytest.approx(
        evaluate_piecewise_analytic(a, x) + evaluate_piecewise_analytic(b, x), abs=1e-12)


# -- data -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small():
    params = inverse_params(32)
    traj = simulate(params, inverse_u0, 0.2, 1e-3, record_memory=True)
    return params, traj


def test_noise_is_seeded_and_bounded(small):
    _, traj = small
    a = add_noise(traj, 1e-3, seed=7)
    b = add_noise(traj, 1e-3, seed=7)
    assert np.array_equal(a.states, b.states)
    assert np.max(np.abs(a.states - traj.states)) <= 1e-3
    assert np.array_equal(add_noise(traj, 0.0).states, traj.states)


def test_frozen_history_matches_recorded_memory(small):
    params, traj = small
    for i in (0, 50, 200):
        np.testing.assert_allclose(frozen_history(traj.history_0, params, traj.dt, i),
                                   traj.memory[i], rtol=1e-13, atol=1e-15)


# -- direct reconstruction -----------------------------------------------------------------

def test_direct_reconstruction_noiseless(small):
    params, traj = small
    res = reconstruct_q_direct(traj, params, 0.1, q_true=params.q_values())
    assert res.rel_l2_error < 1e-2
    assert res.q_hat.shape == (32,)


def test_direct_rejects_bad_times(small):
    params, traj = small
    with pytest.raises(InvalidArgument):
        reconstruct_q_direct(traj, params, 0.6)
    no_dead_zone = params.replace(kernel=MemoryKernel.cosine(1.0, 0.0))
    with pytest.raises(InvalidArgument):
        reconstruct_q_direct(traj, no_dead_zone, 0.1)


def test_direct_division_floor(small):
    params, traj = small
    dark = params.replace(insolation=InsolationSpec.build("legendre_p2", 1.0, r_mean=0.0))
    with pytest.raises(DivisionUnstable):
        reconstruct_q_direct(traj, dark, 0.1)


# -- least squares ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny():
    params = inverse_params(12)
    traj = simulate(params, inverse_u0, 0.1, 2e-3)
    obs = observe_localized(traj, params, 0.02, 0.05, -0.5, 0.5)
    return params, traj, obs


def test_observation_window(tiny):
    params, traj, obs = tiny
    assert obs.samples["u_t"].shape == (len(obs.window["time_idx"]), len(obs.window["cell_idx"]))
    assert np.all(np.abs(obs.samples["x"]) < 0.5)
    assert not obs.exploratory
    assert obs.window["time_w"].sum() == pytest.approx(0.1 - 0.02)


def test_observation_window_rejections(tiny):
    params, traj, _ = tiny
    with pytest.raises(InvalidArgument):
        observe_localized(traj, params, 0.02, 0.05, 0.5, -0.5)
    with pytest.raises(InvalidArgument):
        observe_localized(traj, params, 0.06, 0.05, -0.5, 0.5)
    late = simulate(params, inverse_u0, 0.6, 2e-3)
    with pytest.raises(InvalidArgument, match="allow_late"):
        observe_localized(late, params, 0.02, 0.05, -0.5, 0.5)
    assert observe_localized(late, params, 0.02, 0.05, -0.5, 0.5, allow_late=True).exploratory


def test_leastsq_recovers_q(tiny):
    params, _, obs = tiny
    res = reconstruct_q_leastsq(obs, params, inverse_u0, q_true=params.q_values())
    assert res.rel_l2_error < 1e-6
    assert np.all(np.diff(res.objective_history) <= 0)


def test_gradient_descent_decreases_objective(tiny):
    params, _, obs = tiny
    try:
        res = reconstruct_q_leastsq(obs, params, inverse_u0, method="gradient", max_iters=8)
        hist = res.objective_history
    except NoConvergence as exc:
        hist = exc.history
    assert len(hist) >= 2 and np.all(np.diff(hist) <= 0) and hist[-1] < hist[0]


def test_leastsq_argument_checks(tiny):
    params, _, obs = tiny
    with pytest.raises(InvalidArgument):
        reconstruct_q_leastsq(obs, params, inverse_u0, reg_weight=-1.0)
    with pytest.raises(InvalidArgument):
        reconstruct_q_leastsq(obs, params, inverse_u0, method="newton")


# -- identifiability experiments ----------------------------------------------------------

def test_uniqueness_identical_q_gives_exact_zero():
    params = inverse_params(16)
    q = AdmissibleSetSpec.constant(1.0)
    rep = uniqueness_experiment(params, q, q, inverse_u0, 0.0, 0.1, 1e-3)
    assert rep.max_discrepancy == 0.0 and rep.q_equal and rep.memory_identical


def test_uniqueness_detects_bump_and_sign():
    params = inverse_params(16)
    q = AdmissibleSetSpec.constant(1.0)
    rep = uniqueness_experiment(params, q, q.plus(AdmissibleSetSpec.constant(0.05)),
                                inverse_u0, 0.0, 0.1, 1e-3)
    assert rep.max_discrepancy > 1e-6 and not rep.q_equal
    assert rep.first_sign == -1  # u - u~ with q~ > q
    assert rep.memory_identical
    assert rep.x0 == params.grid.centers[params.grid.nearest_cell(0.0)]
    assert "detected" in rep.verdict()


def test_uniqueness_rejects_bad_inputs():
    params = inverse_params(16)
    q = AdmissibleSetSpec.constant(1.0)
    with pytest.raises(InvalidArgument):
        uniqueness_experiment(params, q, q, inverse_u0, 1.0, 0.1, 1e-3)
    with pytest.raises(InvalidArgument):
        uniqueness_experiment(params, q, q, inverse_u0, 0.0, 0.6, 1e-3)
    with pytest.raises(InvalidArgument):
        uniqueness_experiment(params, q, q, 0.5, 0.0, 0.1, 1e-3)


WINDOW = dict(t0=0.02, T_prime=0.05, T=0.1, a=-0.5, b=0.5, target_dt=2e-3)


def test_stability_identical_inputs():
    params = inverse_params(12)
    q = params.q_values()
    rep = stability_ratio(params, q, q, inverse_u0, inverse_u0, **WINDOW)
    assert rep.ratio == 0.0 and rep.identical_inputs


def test_stability_history_change_only():
    params = inverse_params(12)
    q = params.q_values()
    shifted = lambda s, x: inverse_u0(s, x) + 0.01
    rep = stability_ratio(params, q, q, inverse_u0, shifted, **WINDOW)
    assert rep.numerator == 0.0 and rep.ratio == 0.0 and rep.history_term > 0


def test_stability_sweep_finite():
    params = inverse_params(12)
    reps = stability_sweep(params, params.q_values(), AdmissibleSetSpec.bump(1.0, 0.2, 0.6),
                           [1e-3, 1e-2, 1e-1], inverse_u0, **WINDOW)
    ratios = np.array([r.ratio for r in reps])
    assert np.all(np.isfinite(ratios)) and ratios.max() <= 10 * np.median(ratios)


def test_history_distance_uses_both_norms():
    params = inverse_params(8)
    h = np.zeros((3, 8))
    g = h.copy()
    g[1] = np.linspace(0, 1, 8)
    d = history_distance(params.grid, h, g)
    assert d == pytest.approx(params.grid.l2(g[1]) + params.grid.weighted_gradient_norm(g[1]))
