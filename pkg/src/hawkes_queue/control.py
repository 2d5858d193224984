"""Admission-rate control for a two-stage (outside / inside) club queue.

States x = (E[Q_O], E[Q_I], E[lambda]) follow the mean ODEs

    x1' = x3 - mu x1
    x2' = mu x1 - mu_I x2
    x3' = beta (lambda* - x3) + alpha x3

and the running payoff is
    zeta = r_O mu x1 + r_I x2 - c (mu x1 - k)^2 - w mu^2.

With H = zeta + g1 x1' + g2 x2' + g3 x3' the adjoints solve g' = -dH/dx,
g(T) = 0:

    g1' = -(r_O mu - 2c (mu x1 - k) mu - g1 mu + g2 mu)
    g2' = -(r_I - mu_I g2)
    g3' = -(g1 + (alpha - beta) g3)

and dH/dmu = 0 gives the pointwise rate in optimal_rate. The forward-backward
sweep alternates RK4 passes with a relaxed control update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateObjective, NoConvergence
from .hawkes_core import HawkesParams


@dataclass(frozen=True)
class ControlProblem:
    arrivals: HawkesParams
    mu_I: float
    r_O: float
    r_I: float
    c: float
    k: float
    w: float
    horizon: float
    grid_points: int = 1001
    q_O0: float = 0.0
    q_I0: float = 0.0

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be at least 2")
        if self.w < 0 or self.c < 0:
            raise ConfigError("penalties c and w must be nonnegative")
        if not self.mu_I > 0:
            raise ConfigError("mu_I must be positive")

    @property
    def grid(self):
        return np.linspace(0.0, self.horizon, self.grid_points)


@dataclass
class ControlSolution:
    grid: np.ndarray
    mu_star: np.ndarray
    states: np.ndarray      # columns E[Q_O], E[Q_I], E[lambda]
    adjoints: np.ndarray    # columns gamma1, gamma2, gamma3
    objective: float
    converged: bool
    iterations: int
    stationarity: float = np.nan
    history: list = field(default_factory=list)


def optimal_rate(q_O, gamma1, gamma2, prob: ControlProblem):
    """Maximizer of H over mu >= 0 at one time point (vectorized)."""
    q_O = np.asarray(q_O, dtype=float)
    den = 2 * prob.w + 2 * prob.c * q_O**2
    num = (prob.r_O + 2 * prob.c * prob.k - np.asarray(gamma1) + np.asarray(gamma2)) * q_O
    if np.any(den == 0):
        if prob.w == 0 and prob.c == 0:
            raise DegenerateObjective("w = c = 0: the payoff is linear in mu")
        # c > 0, w = 0 and an empty outside queue: mu is irrelevant there
        den = np.where(den == 0, 1.0, den)
    return np.maximum(0.0, num / den)


def _mid(v):
    return 0.5 * (v[1:] + v[:-1])


def forward(prob: ControlProblem, mu):
    p = prob.arrivals
    t = prob.grid
    h = t[1] - t[0]
    mu = np.asarray(mu, dtype=float)
    mm = _mid(mu)
    a, b, ls, mi = p.jump, p.decay, p.baseline, prob.mu_I

    def f(x, u):
        return np.array([x[2] - u * x[0], u * x[0] - mi * x[1], b * (ls - x[2]) + a * x[2]])

    x = np.empty((len(t), 3))
    x[0] = (prob.q_O0, prob.q_I0, p.initial_intensity)
    for i in range(len(t) - 1):
        y = x[i]
        k1 = f(y, mu[i])
        k2 = f(y + h / 2 * k1, mm[i])
        k3 = f(y + h / 2 * k2, mm[i])
        k4 = f(y + h * k3, mu[i + 1])
        x[i + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def backward(prob: ControlProblem, mu, x):
    p = prob.arrivals
    t = prob.grid
    h = t[1] - t[0]
    mu = np.asarray(mu, dtype=float)
    mm = _mid(mu)
    xm = _mid(x[:, 0])
    a, b, mi = p.jump, p.decay, prob.mu_I
    rO, rI, c, k = prob.r_O, prob.r_I, prob.c, prob.k

    def f(g, u, x1):
        return np.array([
            -(rO * u - 2 * c * (u * x1 - k) * u - g[0] * u + g[1] * u),
            -(rI - mi * g[1]),
            -(g[0] + (a - b) * g[2]),
        ])

    n = len(t)
    g = np.zeros((n, 3))
    for i in range(n - 1, 0, -1):
        y = g[i]
        k1 = f(y, mu[i], x[i, 0])
        k2 = f(y - h / 2 * k1, mm[i - 1], xm[i - 1])
        k3 = f(y - h / 2 * k2, mm[i - 1], xm[i - 1])
        k4 = f(y - h * k3, mu[i - 1], x[i - 1, 0])
        g[i - 1] = y - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return g


def _payoff(prob, mu, x):
    q = x[:, 0]
    return (prob.r_O * mu * q + prob.r_I * x[:, 1] - prob.c * (mu * q - prob.k) ** 2
            - prob.w * mu**2)


def objective(prob: ControlProblem, mu_path) -> float:
    """Trapezoidal integral of the running payoff along the induced states."""
    mu = np.asarray(mu_path, dtype=float)
    if mu.shape != (prob.grid_points,):
        raise ConfigError(f"mu_path must have {prob.grid_points} grid values")
    x = forward(prob, mu)
    return float(np.trapezoid(_payoff(prob, mu, x), prob.grid))


def hamiltonian_gradient(prob: ControlProblem, mu, x, g):
    """dH/dmu on the grid."""
    q = x[:, 0]
    return ((prob.r_O + 2 * prob.c * prob.k - g[:, 0] + g[:, 1]) * q
            - (2 * prob.c * q**2 + 2 * prob.w) * mu)


def stationarity_residual(prob: ControlProblem, mu, x, g) -> float:
    """Largest KKT violation: |dH/dmu| where mu > 0, max(dH/dmu, 0) where mu = 0."""
    d = hamiltonian_gradient(prob, mu, x, g)
    viol = np.where(mu > 0, np.abs(d), np.maximum(d, 0.0))
    return float(viol.max())


def solve(prob: ControlProblem, max_iters=500, tol=1e-12, omega=0.5, mu0=None,
          depth=5, raise_on_failure=False) -> ControlSolution:
    """Forward-backward sweep.

    Each sweep maps mu to optimal_rate along the current states and adjoints.
    The update is the relaxed step mu + omega (target - mu), with omega halved
    whenever the objective would decrease; an Anderson-mixed candidate built
    from the last ``depth`` sweeps is tried first and kept only when it does
    not lower the objective. Stops when mu is a fixed point to relative
    tolerance ``tol``.
    """
    if prob.w == 0 and prob.c == 0:
        raise DegenerateObjective("w = c = 0: the payoff is linear in mu")
    t = prob.grid
    mu = np.zeros(len(t)) if mu0 is None else np.asarray(mu0, dtype=float).copy()
    x = forward(prob, mu)
    J = float(np.trapezoid(_payoff(prob, mu, x), t))
    slack = lambda v: 1e-9 * max(1.0, abs(v))
    history = [J]
    converged = False
    it = 0
    w_rel = omega
    mus, res = [], []
    for it in range(1, max_iters + 1):
        g = backward(prob, mu, x)
        target = optimal_rate(x[:, 0], g[:, 0], g[:, 1], prob)
        step = target - mu
        if np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(mu))):
            converged = True
            break
        mus.append(mu)
        res.append(step)
        mus, res = mus[-(depth + 1):], res[-(depth + 1):]
        accepted = False
        if depth > 0 and len(res) > 1:
            dR = np.diff(np.array(res), axis=0).T
            dM = np.diff(np.array(mus), axis=0).T
            coef, *_ = np.linalg.lstsq(dR, step, rcond=None)
            cand = np.maximum(0.0, target - (dM + dR) @ coef)
            xc = forward(prob, cand)
            Jc = float(np.trapezoid(_payoff(prob, cand, xc), t))
            if np.all(np.isfinite(xc)) and Jc >= J - slack(J):
                accepted = True
            else:
                mus, res = mus[-1:], res[-1:]
        if not accepted:
            while True:
                cand = mu + w_rel * step
                xc = forward(prob, cand)
                Jc = float(np.trapezoid(_payoff(prob, cand, xc), t))
                if Jc >= J - slack(J) or w_rel < 1e-6:
                    break
                w_rel /= 2
        mu, x, J = cand, xc, Jc
        history.append(J)
    g = backward(prob, mu, x)
    sol = ControlSolution(t, mu, x, g, J, converged, it,
                          stationarity_residual(prob, mu, x, g), history)
    if not converged and raise_on_failure:
        raise NoConvergence(f"no fixed point after {max_iters} sweeps")
    return sol
