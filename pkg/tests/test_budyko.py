import numpy as np
import pytest

from ebm_memory import io
from ebm_memory.budyko import VIOLATION, solve_budyko, verify_inclusion
from ebm_memory.errors import InvalidArgument, NoConvergence
from ebm_memory.physics import CoalbedoSpec, EmissionSpec


@pytest.fixture(scope="module")
def preset():
    sc = io.load_preset("budyko")
    return sc.build_params(), sc.build_u0()


@pytest.fixture(scope="module")
def short_solution(preset):
    params, u0 = preset
    return solve_budyko(params, u0, 0.5, 1e-3, [4, 8, 16, 32, 64], tol=0.5, stop_early=False,
                        value_tol=1e-4)


def test_profile_crosses_threshold(preset):
    params, u0 = preset
    u = u0(0.0, params.grid.centers)
    assert u.min() < params.coalbedo.u_bar < u.max()


def test_solution_fields(short_solution):
    sol = short_solution
    assert sol.j_values == [4, 8, 16, 32, 64] and sol.j_final == 64
    assert len(sol.gaps) == 4 and sol.cauchy_gap == sol.gaps[-1]
    assert sol.gamma.shape == sol.trajectory.states.shape == sol.memory.shape
    assert sol.bounded


def test_gaps_shrink(short_solution):
    assert np.all(np.diff(short_solution.gaps) < 0)


def test_selection_satisfies_inclusion(short_solution):
    rep = short_solution.inclusion_report
    assert rep.ok, rep.violations[:3]
    assert rep.counts["ai_branch"] > 0 and rep.counts["af_branch"] > 0
    assert 0.38 - 1e-4 <= rep.b_min and rep.b_max <= 0.68 + 1e-4
    assert rep.band_tol == pytest.approx(1 / 64)


def test_tampered_selection_is_flagged(preset, short_solution):
    params, _ = preset
    sol = short_solution
    orig = sol.gamma.copy()
    try:
        sol.gamma[3, 5] += 1.0
        rep = verify_inclusion(sol, params, band_tol=1 / 64, value_tol=1e-4)
        assert rep.counts[VIOLATION] == 1
        assert rep.violations[0]["t"] == pytest.approx(sol.trajectory.times[3])
        assert rep.labels[3, 5] == VIOLATION
        assert rep.to_dict()["n_violations"] == 1
    finally:
        sol.gamma[:] = orig


def test_stop_early_returns_first_converged(preset):
    params, u0 = preset
    sol = solve_budyko(params, u0, 0.1, 1e-3, [4, 8, 16, 32], tol=1.0)
    assert sol.j_values == [4, 8] and sol.j_final == 8


def test_no_convergence_reports_history(preset):
    params, u0 = preset
    with pytest.raises(NoConvergence) as info:
        solve_budyko(params, u0, 0.5, 1e-3, [4, 8, 16], tol=1e-12)
    assert len(info.value.history) == 2


@pytest.mark.parametrize("change", [
    {"coalbedo": CoalbedoSpec("sellers_smooth", 0.38, 0.68)},
    {"emission": EmissionSpec.sellers(1.0)},
])
def test_rejects_non_budyko_models(preset, change):
    params, u0 = preset
    with pytest.raises(InvalidArgument):
        solve_budyko(params.replace(**change), u0, 0.1, 1e-3)


def test_rejects_bad_schedule(preset):
    params, u0 = preset
    with pytest.raises(InvalidArgument):
        solve_budyko(params, u0, 0.1, 1e-3, [8, 4])


def test_gaps_vanish_before_any_cell_nears_threshold(preset):
    params, u0 = preset
    sol = solve_budyko(params, u0, 0.1, 1e-3, [4, 8, 16], tol=1.0, stop_early=False)
    assert sol.gaps == [0.0, 0.0]
