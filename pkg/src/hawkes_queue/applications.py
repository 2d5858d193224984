"""Impact of one extra click on a web page.

N^ is the arrival process with one extra event at time 0 (initial intensity
raised by alpha, N^_0 = 1). Users stay an exponential(mu) time on the page
and earn m per unit time while there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import UnstableProcess, ConfigError
from .hawkes_core import HawkesParams, lambda_inf

CASE_TOL = 1e-8


@dataclass(frozen=True)
class ClickImpactQuery:
    arrivals: HawkesParams
    mu: float
    m: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigError("mu must be positive")
        if not self.m >= 0:
            raise ConfigError("m must be nonnegative")
        if not self.T >= 0:
            raise ConfigError("T must be nonnegative")


def _stable(p: HawkesParams):
    if not p.is_stable():
        raise UnstableProcess(f"jump {p.jump} >= decay {p.decay}")
    return p.gap


def count_gap(p: HawkesParams, t) -> float:
    """E[N^_t] - E[N_t] = beta/g - (alpha/g) e^{-g t}."""
    g = _stable(p)
    return p.decay / g - p.jump / g * np.exp(-g * t)


def count_gap_limit(p: HawkesParams) -> float:
    return p.decay / _stable(p)


def _mean_q(p, mu, t):
    g = p.gap
    li = lambda_inf(p)
    l0 = p.initial_intensity
    return li / mu * -np.expm1(-mu * t) + (l0 - li) / (mu - g) * (np.exp(-g * t) - np.exp(-mu * t))


def _dwell_quad(p, mu, T):
    # E[Q_t] for mu = g: li/mu (1 - e^{-mu t}) + (l0 - li) t e^{-mu t}
    li = lambda_inf(p)
    l0 = p.initial_intensity
    f = lambda t: li / mu * -np.expm1(-mu * t) + (l0 - li) * t * np.exp(-mu * t)
    val, _ = quad(f, 0.0, T, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def dwell_time(q: ClickImpactQuery) -> float:
    """sigma(T): integral of E[Q_t] over [0, T] for an initially empty queue."""
    p = q.arrivals
    g = _stable(p)
    mu, T = q.mu, q.T
    if T == 0:
        return 0.0
    if abs(mu - g) < CASE_TOL * max(1.0, mu):
        return _dwell_quad(p, mu, T)
    li = lambda_inf(p)
    l0 = p.initial_intensity
    first = li / mu * (T + np.expm1(-mu * T) / mu)
    second = (l0 - li) / (mu - g) * (-np.expm1(-g * T) / g + np.expm1(-mu * T) / mu)
    return float(first + second)


def revenue(q: ClickImpactQuery) -> float:
    """A(T) = m sigma(T)."""
    return q.m * dwell_time(q)


def revenue_gap(q: ClickImpactQuery) -> float:
    """A^(T) - A(T): the extra visitor's own dwell plus the excess of the queue
    fed by the raised initial intensity."""
    p = q.arrivals
    g = _stable(p)
    mu, T, m, a = q.mu, q.T, q.m, p.jump
    own = -np.expm1(-mu * T) / mu
    if abs(mu - g) < CASE_TOL * max(1.0, mu):
        # limit mu -> g of the difference quotient below
        excess = a * (-np.expm1(-g * T) - g * T * np.exp(-g * T)) / g**2
    else:
        excess = a / (mu - g) * (-np.expm1(-g * T) / g + np.expm1(-mu * T) / mu)
    return float(m * (own + excess))


def revenue_gap_limit(q: ClickImpactQuery) -> float:
    """Limit of revenue_gap as T grows: (m/mu) beta/(beta - alpha)."""
    g = _stable(q.arrivals)
    return q.m / q.mu * q.arrivals.decay / g


def revenue_gap_expanded(q: ClickImpactQuery) -> float:
    """Same quantity written as constant minus two decaying exponentials."""
    p = q.arrivals
    g = _stable(p)
    mu, T, m, a, b = q.mu, q.T, q.m, p.jump, p.decay
    return float(revenue_gap_limit(q)
                 - m * a * np.exp(-g * T) / (g * (mu - g))
                 - m * (mu - b) * np.exp(-mu * T) / (mu * (mu - g)))
