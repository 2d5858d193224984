import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from hawkes_queue import hawkes_core as hc
from hawkes_queue.errors import ConfigError, OrderCapExceeded, StableProcess, UnstableProcess
from hawkes_queue.hawkes_core import (HawkesParams, autocov_count, general_moment_ode,
                                      lambda_inf, moment_system, steady_state,
                                      transient_moments, unstable_means)

stable = st.builds(
    lambda ls, b, frac, l0: HawkesParams(ls, frac * b, b, l0),
    st.floats(0.1, 3.0), st.floats(0.3, 3.0), st.floats(0.0, 0.9), st.floats(0.0, 5.0))


def test_params_validation():
    with pytest.raises(ConfigError):
        HawkesParams(0, 0.5, 1)
    with pytest.raises(ConfigError):
        HawkesParams(1, -0.1, 1)
    with pytest.raises(ConfigError):
        HawkesParams(1, 0.5, 1, -1)
    p = HawkesParams(2, 0.5, 1)
    assert p.initial_intensity == 2.0
    assert p.is_stable() and not HawkesParams(1, 1, 1).is_stable()


@pytest.mark.parametrize("args, expected", [((1, 0.6, 1), 2.5), ((1, 0, 1), 1.0), ((1, 0.75, 1), 4.0)])
def test_lambda_inf(args, expected):
    assert lambda_inf(HawkesParams(*args)) == pytest.approx(expected, rel=1e-14)


def test_lambda_inf_unstable():
    with pytest.raises(UnstableProcess):
        lambda_inf(HawkesParams(1, 1, 1))


def test_transient_at_zero():
    m = transient_moments(HawkesParams(1.3, 0.4, 0.9, 2.2), 0.0)
    assert m.as_tuple() == pytest.approx((2.2, 0, 0, 0, 0), abs=1e-14)


def test_transient_poisson():
    m = transient_moments(HawkesParams(1, 0, 1, 1), 7.0)
    assert m.mean_count == pytest.approx(7, rel=1e-13)
    assert m.var_count == pytest.approx(7, rel=1e-13)


def test_transient_against_frozen_ode():
    # frozen from DOP853 integration of the moment system (rtol 1e-10)
    ode = (3.7537450041135756, 28.9850199835457, 3.9610866403046483,
           233.7595444550434, 20.827923629491693)
    m = transient_moments(HawkesParams(1, 0.75, 1, 1), 10.0)
    assert m.as_tuple() == pytest.approx(ode, rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(stable, st.floats(0.05, 8.0))
def test_transient_matches_moment_ode(p, t):
    m = transient_moments(p, t)
    e1, e01 = general_moment_ode(p, 1, 0, t), general_moment_ode(p, 0, 1, t)
    var_l = general_moment_ode(p, 2, 0, t) - e1**2
    var_n = general_moment_ode(p, 0, 2, t) - e01**2
    cov = general_moment_ode(p, 1, 1, t) - e1 * e01
    scale = 1 + abs(m.var_count)
    assert m.mean_intensity == pytest.approx(e1, rel=1e-8, abs=1e-8)
    assert m.mean_count == pytest.approx(e01, rel=1e-8, abs=1e-8)
    assert abs(m.var_intensity - var_l) < 1e-7 * (1 + abs(var_l))
    assert abs(m.var_count - var_n) < 1e-7 * scale
    assert abs(m.cov_intensity_count - cov) < 1e-7 * (1 + abs(cov))
    assert m.var_intensity >= -1e-12 and m.var_count >= -1e-12


def test_steady_state_examples():
    assert steady_state(HawkesParams(1, 0, 1)) == pytest.approx((1, 0, 0))
    # the third value follows the closed form a li/g + a^2 li/(2 g^2) = 3.75 + 2.8125
    assert steady_state(HawkesParams(1, 0.75, 1.25)) == pytest.approx((2.5, 1.40625, 6.5625), rel=1e-14)
    assert steady_state(HawkesParams(2, 1, 2)) == pytest.approx((4, 2, 6), rel=1e-14)


@pytest.mark.parametrize("args", [(1, 0.75, 1.25), (2, 1, 2), (0.5, 0.2, 0.7, 3.0)])
def test_steady_state_is_transient_limit(args):
    p = HawkesParams(*args)
    m = transient_moments(p, 200.0)
    assert (m.mean_intensity, m.var_intensity, m.cov_intensity_count) == pytest.approx(
        steady_state(p), rel=1e-10)


def test_unstable_means_examples():
    assert unstable_means(HawkesParams(1, 1, 1, 1), 2.0) == pytest.approx((3, 4), rel=1e-14)
    assert unstable_means(HawkesParams(1, 1, 1, 0.7), 0.0) == pytest.approx((0.7, 0))
    e = np.e
    assert unstable_means(HawkesParams(1, 2, 1, 0), 1.0) == pytest.approx((e - 1, e - 2), rel=1e-13)
    with pytest.raises(StableProcess):
        unstable_means(HawkesParams(1, 0.5, 1), 1.0)


@pytest.mark.parametrize("a", [1.0 + 1e-7, 1.0 + 1e-3, 1.5, 3.0])
def test_unstable_means_match_moment_ode(a):
    p = HawkesParams(0.8, a, 1.0, 0.3)
    ml, mn = unstable_means(p, 2.0)
    assert ml == pytest.approx(general_moment_ode(p, 1, 0, 2.0), rel=1e-8)
    assert mn == pytest.approx(general_moment_ode(p, 0, 1, 2.0), rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(stable, st.floats(0.1, 10.0))
def test_autocov_boundaries(p, t):
    assert autocov_count(p, t, t) == pytest.approx(0.0, abs=1e-9 * (1 + t**2))
    var = transient_moments(p, t).var_count
    assert autocov_count(p, t, 0.0) == pytest.approx(var, rel=1e-10, abs=1e-12)
    assert autocov_count(p, t, t + 1) == 0.0


def test_autocov_frozen():
    # frozen closed-form value; acceptance criterion 8 checks it against simulation
    assert autocov_count(HawkesParams(1, 0.75, 1.25), 10.0, 5.0) == pytest.approx(45.20544477100941, rel=1e-12)


def test_general_moment_ode_examples():
    p = HawkesParams(1.7, 0.4, 1.1, 0.6)
    assert general_moment_ode(p, 1, 0, 3.0) == pytest.approx(transient_moments(p, 3.0).mean_intensity, rel=1e-8)
    q = HawkesParams(2.0, 0.0, 1.0)
    t = 3.0
    assert general_moment_ode(q, 0, 2, t) == pytest.approx(2 * t + (2 * t) ** 2, rel=1e-9)
    assert general_moment_ode(HawkesParams(1, 0.5, 1), 2, 1, 5.0) == pytest.approx(44.48849540350328, rel=1e-8)
    with pytest.raises(OrderCapExceeded):
        general_moment_ode(p, 3, 2, 1.0)
    with pytest.raises(ConfigError):
        general_moment_ode(p, -1, 0, 1.0)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_moment_system_matches_generator(order):
    """Rebuild each row symbolically by applying the Hawkes generator to lam^m N^l."""
    lam, n, a, b, ls = sp.symbols("lam N a b ls")
    vals = {a: sp.Rational(3, 5), b: sp.Rational(7, 4), ls: sp.Rational(5, 3)}
    p = HawkesParams(5 / 3, 3 / 5, 7 / 4)
    idx, A, y0 = moment_system(p, order)
    for r, (m, l) in enumerate(idx):
        f = lam**m * n**l
        gen = b * (ls - lam) * sp.diff(f, lam) + lam * (f.subs({lam: lam + a, n: n + 1}, simultaneous=True) - f)
        poly = sp.Poly(sp.expand(gen.subs(vals)), lam, n)
        expected = np.zeros(len(idx))
        for (i, j), coef in poly.terms():
            expected[idx.index((i, j))] = float(coef)
        assert np.allclose(A[r], expected, atol=1e-13), (m, l)
    assert y0[idx.index((0, 0))] == 1.0


def test_near_singular_gap():
    from hawkes_queue.errors import NearSingularGap
    with pytest.raises(NearSingularGap):
        transient_moments(HawkesParams(1, 1 - 1e-10, 1), 1.0)
    assert hc.GAP_TOL > 0
