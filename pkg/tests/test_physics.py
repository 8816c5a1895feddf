import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ebm_memory import physics
from ebm_memory.errors import InvalidArgument, ParseError, Unsupported
from ebm_memory.physics import (CoalbedoSpec, EmissionSpec, InsolationSpec, MemoryResponseSpec,
                                coalbedo, emitted, linf_bound, load_insolation_csv)

from conftest import sellers_params


def test_legendre_profile_values_and_bound():
    ins = InsolationSpec.build("legendre_p2", 2.0)
    assert ins.q_on(0.0) == pytest.approx(2.0 * 1.241)
    assert ins.q_on(1.0) == pytest.approx(2.0 * 0.518)
    xs = np.linspace(-1, 1, 1001)
    assert ins.q_on(xs).max() <= ins.q_bound + 1e-12


def test_seasonal_factor_bounds():
    ins = InsolationSpec.build("constant", 1.0, "seasonal", 1.0, 0.2, 0.5)
    ts = np.linspace(0, 1, 401)
    r = np.array([ins.r(t) for t in ts])
    assert np.abs(r).max() <= ins.r_bound + 1e-12
    assert np.abs(np.diff(r) / np.diff(ts)).max() <= ins.r_prime_bound * (1 + 1e-3)


def test_unknown_insolation_kind():
    with pytest.raises(InvalidArgument):
        InsolationSpec.build("sinusoid")


def test_load_insolation_csv(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text("x,q\n-1,1\n0,2\n1,1\n")
    xs, qs = load_insolation_csv(p)
    ins = InsolationSpec.build("table", 1.0, table=(xs, qs))
    assert ins.q_on(0.5) == pytest.approx(1.5)
    p.write_text("x,q\n-1,1\n0,two\n")
    with pytest.raises(ParseError, match=":3:"):
        load_insolation_csv(p)
    p.write_text("x,q\n-0.5,1\n1,1\n")
    with pytest.raises(ParseError, match="cover"):
        load_insolation_csv(p)


def test_sellers_coalbedo_limits_and_monotone():
    cb = CoalbedoSpec("sellers_smooth", 0.3, 0.7, u_bar=0.0, smoothness_width=2.0)
    assert cb(-2.0) == pytest.approx(0.3) and cb(2.0) == pytest.approx(0.7)
    assert 0.3 < cb(-1.0) < 0.5 < cb(1.0) < 0.7
    assert cb(0.0) == pytest.approx(0.5)
    u = np.linspace(-3, 3, 601)
    assert np.all(np.diff(cb(u)) >= 0)
    fd = (cb(u + 1e-6) - cb(u - 1e-6)) / 2e-6
    np.testing.assert_allclose(cb.derivative(u), fd, atol=1e-7)


@pytest.mark.parametrize("j", [1, 4, 64])
def test_regularized_coalbedo_width(j):
    cb = CoalbedoSpec("budyko_graph", 0.38, 0.68, -10.0).regularized(j)
    assert cb(-10.0 - 1.0 / j) == pytest.approx(0.38)
    assert cb(-10.0 + 1.0 / j) == pytest.approx(0.68)
    assert cb(-10.0) == pytest.approx(0.53)
    u = np.linspace(-12, -8, 801)
    assert np.all((cb(u) >= 0.38 - 1e-15) & (cb(u) <= 0.68 + 1e-15))


def test_budyko_graph_is_set_valued():
    cb = CoalbedoSpec("budyko_graph", 0.38, 0.68, -10.0)
    assert coalbedo(cb, -11.0) == 0.38
    assert coalbedo(cb, -9.0) == 0.68
    assert coalbedo(cb, -10.0) == (0.38, 0.68)
    with pytest.raises(InvalidArgument):
        cb(np.array([0.0]))


@pytest.mark.parametrize("a_i, a_f", [(0.5, 0.5), (0.7, 0.3)])
def test_coalbedo_requires_ordered_branches(a_i, a_f):
    with pytest.raises(InvalidArgument):
        CoalbedoSpec("sellers_smooth", a_i, a_f)


def test_emission_laws():
    e = EmissionSpec.sellers(0.5)
    assert emitted(e, -2.0) == pytest.approx(-8.0)
    assert emitted(e, 2.0) == pytest.approx(8.0)
    b = EmissionSpec.budyko(2.0, 3.0)
    np.testing.assert_allclose(b(np.array([0.0, 1.0])), [2.0, 5.0])
    lg = EmissionSpec.sellers_logistic(0.6, 1.0, 0.0, 1.0)
    eps = lg.epsilon(np.array([-50.0, 0.0, 50.0]))
    np.testing.assert_allclose(eps, [0.6, 0.8, 1.0], atol=1e-12)
    with pytest.raises(InvalidArgument):
        EmissionSpec.sellers_logistic(1.0, 0.5)
    with pytest.raises(InvalidArgument):
        EmissionSpec.sellers(0.0)


@settings(max_examples=50, deadline=None)
@given(h=st.floats(-1e6, 1e6), f_bound=st.floats(0, 10), scale=st.floats(0.01, 100))
def test_memory_response_bounded_and_lipschitz(h, f_bound, scale):
    f = MemoryResponseSpec(f_bound, scale)
    assert abs(float(f(h))) <= f_bound + 1e-12
    assert abs(float(f(h + 1e-3)) - float(f(h))) <= f.lipschitz * 1e-3 * (1 + 1e-9) + 1e-15


def test_rhs_components():
    p = sellers_params(n=8, f_bound=0.2)
    u = np.linspace(0.2, 1.0, 8)
    H = np.full(8, 0.5)
    expected = p.q_values() * p.coalbedo(u) - u**4 + 0.2 * np.tanh(0.5)
    np.testing.assert_allclose(physics.rhs(0.0, u, H, p), expected, rtol=1e-14)
    with pytest.raises(InvalidArgument):
        physics.rhs(0.0, u[:5], H, p)


def test_linf_bound_formula():
    p = sellers_params(n=8, f_bound=0.3)
    M = ((1.241 * 1.0 * 0.68 + 0.3) / 1.0) ** 0.25
    assert linf_bound(p, 0.1) == pytest.approx(M)
    assert linf_bound(p, 5.0) == 5.0
    with pytest.raises(Unsupported):
        linf_bound(p.replace(emission=EmissionSpec.budyko(1.0, 1.0)), 0.0)
