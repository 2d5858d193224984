"""Cumulant and moment generating functions of (lambda_t, Q_t).

G(delta, t) = log E[exp(delta_0 lambda_t + sum_i delta_i Q_{t,i})] reduces along
characteristics to one scalar ODE for h. With u = t - z the ODE runs forward:

    dh/du = -(1 - e^{alpha h} theta^T (v + r(u)) + beta h),   h(0) = delta_0
    dr/du = S r,                                               r(0) = e^{delta} - 1

and G = beta lambda* int_0^t h + lambda_0 h(u = t). The integral is carried as an
extra state so that one adaptive solve gives everything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import CgfBlowup, ConfigError
from .queue_moments import QueueModel

BLOWUP = 1e6
_EXP_CAP = 700.0


@dataclass(frozen=True)
class CgfQuery:
    delta: np.ndarray
    t: float

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.delta, dtype=float))
        if not np.all(np.isfinite(d)):
            raise ConfigError("delta must be finite")
        if not self.t >= 0:
            raise ConfigError("t must be nonnegative")
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "t", float(self.t))


def _rhs(m: QueueModel):
    p = m.arrivals
    S = m.service.S
    theta = m.service.theta
    a, b = p.jump, p.decay
    n = m.n

    def f(_, y):
        h = y[0]
        r = y[2:2 + n]
        e = np.exp(min(a * h, _EXP_CAP))
        dh = -(1.0 - e * (1.0 + theta @ r) + b * h)
        return np.concatenate(([dh, h], S @ r))

    return f


def cgf(m: QueueModel, q: CgfQuery, rtol=1e-10, atol=1e-12) -> float:
    p = m.arrivals
    n = m.n
    if q.delta.shape != (n + 1,):
        raise ConfigError(f"delta must have length {n + 1}")
    if q.t == 0 or not q.delta.any():
        return float(q.delta[0] * p.initial_intensity)
    y0 = np.concatenate(([q.delta[0], 0.0], np.expm1(q.delta[1:])))

    def blow(_, y):
        return min(BLOWUP - abs(y[0]), _EXP_CAP - p.jump * y[0])

    blow.terminal = True
    sol = solve_ivp(_rhs(m), (0.0, q.t), y0, method="DOP853", rtol=rtol, atol=atol,
                    events=blow)
    if sol.status != 0 or not np.all(np.isfinite(sol.y[:, -1])):
        tb = float(sol.t_events[0][0]) if sol.t_events[0].size else float(sol.t[-1])
        # report in the original time variable z = t - u
        raise CgfBlowup(f"h left the finite domain at z = {q.t - tb:.6g}", q.t - tb)
    h_end, integral = sol.y[0, -1], sol.y[1, -1]
    return float(p.decay * p.baseline * integral + p.initial_intensity * h_end)


def mgf(m: QueueModel, q: CgfQuery) -> float:
    return float(np.exp(cgf(m, q)))


def pde_rhs_coefficients(m: QueueModel, delta):
    """Coefficients multiplying dG/d delta_0 .. dG/d delta_n in the CGF PDE and
    the free term delta_0 beta lambda*."""
    p = m.arrivals
    S = m.service.S
    theta = m.service.theta
    exit_rates = m.service.exit_rates
    n = m.n
    d0, d = delta[0], np.asarray(delta[1:])
    c = np.zeros(n + 1)
    c[0] = theta @ np.expm1(p.jump * d0 + d) - d0 * p.decay
    for i in range(n):
        s = exit_rates[i] * np.expm1(-d[i])
        for k in range(n):
            if k != i:
                s += S[i, k] * np.expm1(d[k] - d[i])
        c[i + 1] = s
    return d0 * p.decay * p.baseline, c


def cgf_pde_residual(m: QueueModel, q: CgfQuery, h_grid=1e-3) -> float:
    """dG/dt minus the PDE right-hand side, by central differences."""
    d = q.delta
    t = q.t
    h = h_grid
    G = lambda dd, tt: cgf(m, CgfQuery(dd, tt))
    if t - h < 0:
        dGdt = (G(d, t + h) - G(d, t)) / h
    else:
        dGdt = (G(d, t + h) - G(d, t - h)) / (2 * h)
    grad = np.zeros(len(d))
    for i in range(len(d)):
        e = np.zeros(len(d))
        e[i] = h
        grad[i] = (G(d + e, t) - G(d - e, t)) / (2 * h)
    free, c = pde_rhs_coefficients(m, d)
    return float(dGdt - free - c @ grad)
