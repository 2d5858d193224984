import warnings

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from hypothesis import given, settings, strategies as st

from hawkes_queue import queue_moments as qm
from hawkes_queue.acceptance import random_instance
from hawkes_queue.errors import FallbackWarning, StableProcess, UnstableProcess
from hawkes_queue.hawkes_core import HawkesParams, transient_moments
from hawkes_queue.phase_type import erlang, exponential, hyperexp, new

S_COX = np.array([[-4, 3, 0, 0, 0], [0, -2, 1, 0, 0], [0, 0, -3, 2, 0],
                  [0, 0, 0, -5, 4], [0, 0, 0, 0, -1.0]])
COX = new(S_COX, np.eye(5)[0])
TH = [0.15, 0.4, 0.45]


def assert_triple(a, b, tol=1e-7):
    for x, y in zip(a, b):
        x, y = np.asarray(x), np.asarray(y)
        assert np.max(np.abs(x - y) / np.maximum(1.0, np.abs(y))) < tol


def test_zero_time():
    m = qm.QueueModel(HawkesParams(1, 0.75, 1), COX)
    E, c, X, how = qm.moments(m, 0.0)
    assert not E.any() and not c.any() and not X.any()
    assert not qm.mean_vector(m, 0).any() and not qm.cov_matrix(m, 0).any()


def test_mean_long_run_exponential():
    m = qm.QueueModel(HawkesParams(1, 0.5, 0.75), exponential(1.0))
    assert qm.mean_vector(m, 200.0).sum() == pytest.approx(3.0, rel=1e-12)


def test_coxian_mean_frozen():
    # frozen from ode_reference (rtol 1e-11)
    m = qm.QueueModel(HawkesParams(1, 0.75, 1), COX)
    ref = [0.77079616, 1.10705968, 0.35710045, 0.13982712, 0.4791974]
    assert np.allclose(qm.mean_vector(m, 5.0), ref, atol=1e-8)


def test_no_excitation_means_no_covariance():
    m = qm.QueueModel(HawkesParams(1.5, 0.0, 1.3), COX)
    for t in (0.5, 3.0, 12.0):
        assert np.allclose(qm.cov_lambda_q(m, t), 0, atol=1e-13)


def test_poisson_limit():
    m = qm.QueueModel(HawkesParams(2.0, 0.0, 1.0), exponential(0.7))
    ss = qm.steady_state(m)
    assert ss.cov_qq[0, 0] / ss.mean_q[0] == pytest.approx(1.0, abs=1e-12)
    X = qm.cov_matrix(m, 80.0)
    assert X[0, 0] / qm.mean_vector(m, 80.0)[0] == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.5, 2.0, 10.0]))
def test_closed_forms_match_ode(seed, t):
    m = random_instance(np.random.default_rng(seed))
    E, c, X, how = qm.moments(m, t)
    assert how == "closed"
    assert_triple((E, c, X), qm.ode_reference(m, t))
    assert np.allclose(X, X.T)
    assert np.all(np.diag(X) >= -1e-10)


@pytest.mark.parametrize("p, d, t", [
    (HawkesParams(1, 0.5, 0.75), erlang(3, 1.0), 10.0),
    (HawkesParams(1, 0.75, 1.25), erlang(3, 1 / 6), 10.0),       # n mu = beta - alpha
    (HawkesParams(0.7, 0.2, 1.1, 2.0), erlang(4, 0.225), 3.0),   # n mu = beta - alpha
    (HawkesParams(2, 0.5, 1.0), hyperexp(TH, [1, 4, 6]), 6.0),
    (HawkesParams(2, 1.0, 2.0), hyperexp(TH, [1, 4, 6]), 4.0),    # mu_1 = beta - alpha
    (HawkesParams(1, 1.0, 3.0), hyperexp(TH, [1, 4, 6]), 5.0),    # 2 mu_1 = beta - alpha
    (HawkesParams(1, 0.25, 0.75), hyperexp([0.3, 0.7], [0.5, 2.0]), 5.0),
])
def test_family_forms_match_ode(p, d, t):
    m = qm.QueueModel(p, d)
    f = qm.erlang_moments if d.family == "erlang" else qm.hyperexp_moments
    assert_triple(f(m, t), qm.ode_reference(m, t))


def test_singular_erlang_routes_to_family_form():
    m = qm.QueueModel(HawkesParams(1, 0.75, 1.25), erlang(3, 1 / 6))
    with warnings.catch_warnings():
        warnings.simplefilter("error", FallbackWarning)
        E, c, X, how = qm.moments(m, 7.0)
    assert how == "erlang"
    assert_triple((E, c, X), qm.ode_reference(m, 7.0))


def test_unprinted_hyper_split_falls_back():
    # mu_i + mu_j = beta - alpha is not covered by a printed case
    m = qm.QueueModel(HawkesParams(1, 1.0, 4.0), hyperexp([0.5, 0.5], [1.0, 2.0]))
    with pytest.warns(FallbackWarning):
        got = qm.hyperexp_moments(m, 3.0)
    assert_triple(got, qm.ode_reference(m, 3.0))


def test_printed_erlang_singular_branch_is_wrong():
    m = qm.QueueModel(HawkesParams(1, 0.75, 1.25), erlang(3, 1 / 6))
    ref = qm.ode_reference(m, 10.0)[2]
    fixed = qm._erlang_singular(m, 3, 1 / 6, 10.0)[2]
    printed = qm._erlang_singular(m, 3, 1 / 6, 10.0, printed=True)[2]
    assert np.abs(fixed - ref).max() < 1e-7
    assert np.abs(printed - ref).max() > 1e-2


def test_printed_hyper_regular_branch_is_wrong():
    # lambda_0 != lambda_inf / 2 so the misprinted exponential term is live
    m = qm.QueueModel(HawkesParams(2, 0.5, 1.0, 6.0), hyperexp(TH, [1, 4, 6]))
    ref = qm.ode_reference(m, 6.0)[2]
    printed = qm.hyperexp_moments(m, 6.0, printed=True)[2]
    assert np.abs(qm.hyperexp_moments(m, 6.0)[2] - ref).max() < 1e-7
    assert np.abs(printed - ref).max() > 1e-2


def test_total_mean_matches_count_identity_exponential():
    # d/dt E[Q] = E[lambda] - mu E[Q] integrates the Hawkes mean intensity
    p = HawkesParams(1.2, 0.4, 0.9, 3.0)
    m = qm.QueueModel(p, exponential(0.6))
    sol = solve_ivp(lambda t, y: [transient_moments(p, t).mean_intensity - 0.6 * y[0]], (0, 4.0), [0.0],
                    rtol=1e-12, atol=1e-13)
    assert qm.mean_vector(m, 4.0)[0] == pytest.approx(sol.y[0, -1], rel=1e-9)


def test_steady_state_matches_long_horizon():
    m = qm.QueueModel(HawkesParams(1, 0.75, 1), COX)
    ss = qm.steady_state(m)
    E, c, X = qm.ode_reference(m, 50 / 0.25)
    assert_triple(ss, (E, c, X), tol=1e-5)


def test_steady_state_identity_exponential():
    for mu in (0.3, 1.0, 2.5):
        p = HawkesParams(1.1, 0.6, 1.4)
        ss = qm.steady_state(qm.QueueModel(p, exponential(mu)))
        V, Q, C = ss.cov_qq[0, 0], ss.mean_q[0], ss.cov_lq[0]
        assert V == pytest.approx(Q + C / mu, rel=1e-12)


def test_steady_state_unstable():
    with pytest.raises(UnstableProcess):
        qm.steady_state(qm.QueueModel(HawkesParams(1, 2, 1), exponential(1.0)))


@pytest.mark.parametrize("a, d", [(2.0, exponential(1.0)), (1.0, exponential(1.0)), (1.0, COX), (1.5, erlang(2, 0.8))])
def test_unstable_mean_matches_ode(a, d):
    m = qm.QueueModel(HawkesParams(1, a, 1, 0), d)
    assert np.allclose(qm.unstable_mean(m, 1.0), qm.ode_reference(m, 1.0)[0], rtol=1e-9, atol=1e-11)
    assert not qm.unstable_mean(m, 0.0).any()


def test_unstable_mean_frozen_and_errors():
    m = qm.QueueModel(HawkesParams(1, 2, 1, 0), exponential(1.0))
    assert qm.unstable_mean(m, 1.0)[0] == pytest.approx(0.54308063, abs=1e-8)
    with pytest.raises(StableProcess):
        qm.unstable_mean(qm.QueueModel(HawkesParams(1, 0.5, 1), exponential(1.0)), 1.0)


def test_printed_critical_unstable_mean_is_wrong():
    m = qm.QueueModel(HawkesParams(1, 1, 1, 0.5), COX)
    ref = qm.ode_reference(m, 2.0)[0]
    assert np.abs(qm._unstable_mean_critical_printed(m, 2.0) - ref).max() > 1e-2


def _autocov_brute(m, t, tau):
    """Integrate E[Q_s Q_u^T], E[lambda_s Q_u^T] from s = u = t - tau to t."""
    p = m.arrivals
    n = m.n
    A = m.service.S.T
    th = m.service.theta
    u = t - tau
    E, c, X = qm.ode_reference(m, u)
    El = transient_moments(p, u).mean_intensity
    y0 = np.concatenate([(X + np.outer(E, E)).ravel(), c + El * E])

    def f(_, y):
        W = y[:n * n].reshape(n, n)
        z = y[n * n:]
        dW = A @ W + np.outer(th, z)
        dz = p.decay * p.baseline * E - p.gap * z
        return np.concatenate([dW.ravel(), dz])

    y = solve_ivp(f, (u, t), y0, method="DOP853", rtol=1e-11, atol=1e-12).y[:, -1]
    return y[:n * n].reshape(n, n) - np.outer(qm.ode_reference(m, t)[0], E)


@pytest.mark.parametrize("p, d, t, tau", [
    (HawkesParams(1, 0.75, 1.25), exponential(1.0), 10.0, 5.0),
    (HawkesParams(1, 0.75, 1), COX, 6.0, 2.5),
    (HawkesParams(2, 1.0, 2.0), hyperexp(TH, [1, 4, 6]), 4.0, 1.0),   # A + g I singular
    (HawkesParams(1, 0.5, 0.75), erlang(3, 1.0), 8.0, 3.0),
])
def test_autocov_q_matches_brute_force(p, d, t, tau):
    m = qm.QueueModel(p, d)
    got = qm.autocov_q(m, t, tau)
    ref = _autocov_brute(m, t, tau)
    assert np.allclose(got, ref, rtol=1e-7, atol=1e-9)


def test_autocov_q_boundaries():
    m = qm.QueueModel(HawkesParams(1, 0.75, 1), COX)
    assert np.allclose(qm.autocov_q(m, 4.0, 0.0), qm.cov_matrix(m, 4.0), atol=1e-12)
    assert np.allclose(qm.autocov_q(m, 4.0, 4.0), 0, atol=1e-12)
    assert not qm.autocov_q(m, 3.0, 4.0).any()


@pytest.mark.parametrize("args, frozen", [((1, 0.75, 1.25), 0.32335542369134984), ((1, 1, 2), 0.07316707748813345)])
def test_minf_autocov(args, frozen):
    p = HawkesParams(*args)
    val = qm.minf_autocov(p, 1.0, 10.0, 5.0)
    assert val == pytest.approx(frozen, rel=1e-10)
    assert val == pytest.approx(qm.autocov_q(qm.QueueModel(p, exponential(1.0)), 10.0, 5.0)[0, 0], rel=1e-9)
    var = qm.hyperexp_moments(qm.QueueModel(p, exponential(1.0)), 10.0)[2][0, 0]
    assert qm.minf_autocov(p, 1.0, 10.0, 0.0) == pytest.approx(var, rel=1e-12)


def test_minf_printed_branches():
    # regular branch is exact as printed; the mu = beta - alpha branch is not
    p = HawkesParams(1, 0.75, 1.25)
    m = qm.QueueModel(p, exponential(1.0))
    assert qm._minf_autocov_printed(m, 10.0, 5.0) == pytest.approx(qm.minf_autocov(p, 1.0, 10.0, 5.0), rel=1e-9)
    # mu = 1 would hide the misplaced power of mu
    p2 = HawkesParams(1, 0.5, 1.0, 3.0)
    m2 = qm.QueueModel(p2, exponential(0.5))
    exact = qm.minf_autocov(p2, 0.5, 6.0, 2.0)
    assert exact == pytest.approx(_autocov_brute(m2, 6.0, 2.0)[0, 0], rel=1e-8)
    assert abs(qm._minf_autocov_printed(m2, 6.0, 2.0) - exact) > 1e-3


def test_explicit_form_final_factor():
    m = qm.QueueModel(HawkesParams(1, 0.75, 1), COX)
    ref = qm.autocov_q(m, 6.0, 2.5)
    assert np.allclose(qm._autocov_q_explicit(m, 6.0, 2.5, printed=False), ref, rtol=1e-7, atol=1e-9)
    assert np.abs(qm._autocov_q_explicit(m, 6.0, 2.5, printed=True) - ref).max() > 1e-3


def test_moment_curve_flags():
    m = qm.QueueModel(HawkesParams(1, 0.75, 1.25), erlang(3, 1 / 6))
    curve = qm.moment_curve(m, [0.0, 1.0, 5.0])
    assert curve.flags == ["", "erlang", "erlang"]
    assert curve.cov_qq.shape == (3, 3, 3)
    assert np.allclose(curve.cov_qq, np.transpose(curve.cov_qq, (0, 2, 1)))
