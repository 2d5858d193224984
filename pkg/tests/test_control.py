import numpy as np
import pytest

from hawkes_queue import control as ct
from hawkes_queue.acceptance import club_problems
from hawkes_queue.errors import ConfigError, DegenerateObjective, NoConvergence
from hawkes_queue.hawkes_core import HawkesParams

P = HawkesParams(5.0, 0.5, 1.0)


def problem(**kw):
    base = dict(arrivals=P, mu_I=1.0, r_O=100.0, r_I=100.0, c=100.0, k=8.0, w=150.0, horizon=10.0,
                grid_points=401)
    base.update(kw)
    return ct.ControlProblem(**base)


@pytest.fixture(scope="module")
def left_solution():
    left, _ = club_problems()
    return left, ct.solve(left)


def test_optimal_rate_examples():
    prob = problem()
    assert ct.optimal_rate(1.0, 0.0, 0.0, prob) == pytest.approx(3.4, rel=1e-15)
    assert ct.optimal_rate(0.0, 5.0, -2.0, prob) == 0.0
    assert ct.optimal_rate(1.0, 0.0, 0.0, problem(w=1e12)) < 1e-8
    # clamped at zero when the numerator is negative
    assert ct.optimal_rate(1.0, 1e4, 0.0, prob) == 0.0
    with pytest.raises(DegenerateObjective):
        ct.optimal_rate(1.0, 0.0, 0.0, problem(w=0.0, c=0.0))


def test_optimal_rate_maximizes_hamiltonian():
    prob = problem()
    q, g1, g2 = 2.3, 15.0, 40.0
    mu = ct.optimal_rate(q, g1, g2, prob)
    H = lambda u: (prob.r_O * u * q - prob.c * (u * q - prob.k) ** 2 - prob.w * u**2
                   + g1 * (-u * q) + g2 * (u * q))
    grid = np.linspace(0, 10, 20001)
    assert H(mu) >= H(grid).max() - 1e-9


def test_objective_pure_penalty():
    prob = problem(r_I=0.0)
    val = ct.objective(prob, np.zeros(prob.grid_points))
    assert val == pytest.approx(-prob.c * prob.k**2 * prob.horizon, rel=1e-13)
    with pytest.raises(ConfigError):
        ct.objective(prob, np.zeros(3))


def test_zero_rewards_give_zero_rate():
    sol = ct.solve(problem(r_O=0.0, r_I=0.0, k=0.0))
    assert sol.converged
    assert np.abs(sol.mu_star).max() < 1e-12


def test_forward_matches_exact_states():
    # a constant rate makes the state equations linear; solve them exactly with an augmented exponential
    prob = problem(grid_points=2001)
    u = 0.7
    x = ct.forward(prob, np.full(prob.grid_points, u))
    a, b, ls, mi = P.jump, P.decay, P.baseline, prob.mu_I
    A = np.array([[-u, 0, 1, 0], [u, -mi, 0, 0], [0, 0, a - b, b * ls], [0, 0, 0, 0]])
    from scipy.linalg import expm
    y = expm(A * prob.horizon) @ np.array([0, 0, P.initial_intensity, 1.0])
    assert np.allclose(x[-1], y[:3], rtol=1e-10)


def test_adjoint_gives_objective_gradient():
    # directional derivative of J equals the integral of dH/dmu along the direction
    prob = problem(grid_points=2001)
    t = prob.grid
    mu = 1.0 + 0.5 * np.sin(t)
    x = ct.forward(prob, mu)
    g = ct.backward(prob, mu, x)
    phi = np.cos(0.7 * t) * np.exp(-0.1 * t)
    eps = 1e-4
    fd = (ct.objective(prob, mu + eps * phi) - ct.objective(prob, mu - eps * phi)) / (2 * eps)
    pred = np.trapezoid(ct.hamiltonian_gradient(prob, mu, x, g) * phi, t)
    assert fd == pytest.approx(pred, rel=1e-5)


def test_left_solution_properties(left_solution):
    prob, sol = left_solution
    assert sol.converged
    assert sol.stationarity < 1e-6
    assert np.all(sol.mu_star >= 0)
    assert np.all(sol.states >= -1e-12)
    assert np.allclose(sol.adjoints[-1], 0)
    hist = np.array(sol.history)
    assert np.all(np.diff(hist) >= -1e-9 * np.abs(hist[1:]))
    assert sol.objective == pytest.approx(ct.objective(prob, sol.mu_star), rel=1e-12)


def test_left_solution_local_optimality(left_solution):
    prob, sol = left_solution
    rng = np.random.default_rng(0)
    for _ in range(20):
        pert = np.maximum(sol.mu_star + 0.05 * rng.normal(size=sol.mu_star.size), 0.0)
        assert ct.objective(prob, pert) <= sol.objective


def test_right_scenario_peak_ratio(left_solution):
    _, right = club_problems()
    R = ct.solve(right)
    ratio = R.mu_star.max() / left_solution[1].mu_star.max()
    assert R.converged
    assert 1.4 <= ratio <= 2.6


def test_heavier_rate_penalty_lowers_rate():
    a = ct.solve(problem())
    b = ct.solve(problem(w=300.0))
    assert b.mu_star.max() < a.mu_star.max()
    assert b.objective < a.objective


def test_no_convergence_flag():
    prob = problem()
    sol = ct.solve(prob, max_iters=2)
    assert not sol.converged and sol.iterations == 2
    with pytest.raises(NoConvergence):
        ct.solve(prob, max_iters=2, raise_on_failure=True)


def test_problem_validation():
    with pytest.raises(ConfigError):
        problem(horizon=0.0)
    with pytest.raises(ConfigError):
        problem(grid_points=1)
    with pytest.raises(ConfigError):
        problem(w=-1.0)
    with pytest.raises(DegenerateObjective):
        ct.solve(problem(w=0.0, c=0.0))
