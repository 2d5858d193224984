import numpy as np
import pytest
from scipy.integrate import quad
from hypothesis import given, settings, strategies as st

from hawkes_queue import det_queue as dq, queue_moments as qm, simulate
from hawkes_queue.errors import ConfigError, UnstableProcess
from hawkes_queue.hawkes_core import HawkesParams, transient_moments
from hawkes_queue.phase_type import exponential

FIG = HawkesParams(1, 0.75, 1.25)


def test_mean_examples():
    m = dq.DetQueueModel(FIG, 5.0)
    assert dq.mean(m, 0.0) == 0.0
    assert dq.mean(m, 200.0) == pytest.approx(12.5, rel=1e-12)
    pois = dq.DetQueueModel(HawkesParams(1.5, 0.0, 1.0), 2.0)
    for t in (0.5, 2.0, 7.0):
        assert dq.mean(pois, t) == pytest.approx(1.5 * min(t, 2.0), rel=1e-13)


@pytest.mark.parametrize("t", [1.0, 5.0, 9.0])
def test_mean_is_window_integral_of_intensity(t):
    p = HawkesParams(0.8, 0.5, 1.1, 2.5)
    D = 3.0
    ref = quad(lambda s: transient_moments(p, s).mean_intensity, max(0.0, t - D), t, epsabs=1e-13)[0]
    assert dq.mean(dq.DetQueueModel(p, D), t) == pytest.approx(ref, rel=1e-11)


def test_variance_branches():
    m = dq.DetQueueModel(FIG, 5.0)
    assert dq.variance(m, 0.0) == pytest.approx(0.0, abs=1e-14)
    assert dq.variance(m, 3.0) == pytest.approx(transient_moments(FIG, 3.0).var_count, rel=1e-12)
    pois = dq.DetQueueModel(HawkesParams(1.5, 0.0, 1.0), 2.0)
    assert dq.variance(pois, 6.0) == pytest.approx(dq.mean(pois, 6.0), rel=1e-10)


def test_variance_frozen_and_simulated():
    p = HawkesParams(1, 1, 2)
    m = dq.DetQueueModel(p, 1.0)
    v = dq.variance(m, 10.0)
    assert v == pytest.approx(4.207068197376088, rel=1e-12)
    data = simulate.run_replications(p, simulate.Deterministic(1.0), 10.0, [10.0], 20_000, seed=3)
    est = simulate.evaluate(data, simulate.Statistic("var_q", t=10.0))
    assert abs(est.z(v)) < 3


def test_autocov_branches():
    m = dq.DetQueueModel(FIG, 5.0)
    assert dq.autocov(m, 4.0, 4.0) == 0.0
    assert dq.autocov(m, 3.0, 6.0) == 0.0
    assert dq.autocov(m, 8.0, 0.0) == dq.variance(m, 8.0)
    with pytest.raises(ConfigError):
        dq.autocov(m, 8.0, -1.0)


def test_autocov_simulated():
    m = dq.DetQueueModel(FIG, 5.0)
    val = dq.autocov(m, 10.0, 2.0)
    data = simulate.run_replications(FIG, simulate.Deterministic(5.0), 10.0, [8.0, 10.0], 20_000, seed=4)
    est = simulate.evaluate(data, simulate.Statistic("autocov", t=10.0, tau=2.0))
    assert abs(est.z(val)) < 3


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 15.0), st.floats(0.01, 15.0))
def test_autocov_continuous_in_lag(t, tau):
    # every branch boundary must join continuously
    m = dq.DetQueueModel(HawkesParams(1, 0.6, 1.0, 2.0), 4.0)
    h = 1e-7
    if tau + h < t:
        assert dq.autocov(m, t, tau + h) == pytest.approx(dq.autocov(m, t, tau - h), abs=1e-4)


def test_steady_variances():
    p = HawkesParams(1, 1, 2)
    m = dq.DetQueueModel(p, 1.0)
    assert dq.variance(m, 120.0) == pytest.approx(dq.steady_variance_D(p, 1.0), rel=1e-10)
    ss = qm.steady_state(qm.QueueModel(p, exponential(1.0)))
    assert dq.steady_variance_M(p, 1.0) == pytest.approx(ss.cov_qq[0, 0], rel=1e-12)
    assert dq.variance_gap_DM(p, 1.0) == pytest.approx(0.707276647028654, rel=1e-12)
    assert dq.variance_gap_DM(p, 1.0) == pytest.approx(
        dq.steady_variance_D(p, 1.0) - dq.steady_variance_M(p, 1.0), rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.01, 0.99), st.floats(0.05, 10.0))
def test_gap_positive(b, frac, D):
    p = HawkesParams(1.0, frac * b, b)
    assert dq.variance_gap_DM(p, D) > 0


def test_gap_vanishes_without_excitation():
    assert dq.variance_gap_DM(HawkesParams(1, 0.0, 1), 2.0) == 0.0
    assert dq.variance_gap_DM(HawkesParams(1, 1e-6, 1), 2.0) < 1e-5


def test_upsilon_small_x():
    x = np.array([1e-4, 1e-2, 1.0])
    # series 2x^3/3 - x^4/4 + O(x^5)
    assert dq.upsilon(x[1:2])[0] == pytest.approx(2 * x[1] ** 3 / 3 - x[1] ** 4 / 4, rel=1e-4, abs=0)
    assert dq.upsilon(x[:1])[0] > 0
    assert np.all(np.diff(dq.upsilon(x)) > 0)


def test_errors():
    with pytest.raises(ConfigError):
        dq.DetQueueModel(FIG, 0.0)
    with pytest.raises(UnstableProcess):
        dq.mean(dq.DetQueueModel(HawkesParams(1, 2, 1), 1.0), 1.0)
