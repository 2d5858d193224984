"""Hawkes/D/infinity queue: every customer stays exactly D time units.

Q_t = N_t - N_{t-D}, so every moment is a combination of the count
auto-covariance C(t, tau) = Cov[N_t, N_{t-tau}].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnstableProcess, ConfigError
from .hawkes_core import HawkesParams, autocov_count, lambda_inf


@dataclass(frozen=True)
class DetQueueModel:
    arrivals: HawkesParams
    service_length: float

    def __post_init__(self):
        object.__setattr__(self, "service_length", float(self.service_length))
        if not self.service_length > 0:
            raise ConfigError("service length D must be positive")


def _check(m: DetQueueModel):
    p = m.arrivals
    if not p.is_stable():
        raise UnstableProcess(f"jump {p.jump} >= decay {p.decay}")
    return p, m.service_length


def mean(m: DetQueueModel, t) -> float:
    p, D = _check(m)
    li = lambda_inf(p)
    g = p.gap
    l0 = p.initial_intensity
    if t <= D:
        return li * t + (l0 - li) / g * (1 - np.exp(-g * t))
    return li * D + (l0 - li) / g * (np.exp(-g * (t - D)) - np.exp(-g * t))


def variance(m: DetQueueModel, t) -> float:
    p, D = _check(m)
    C = lambda a, b: autocov_count(p, a, b)
    if t <= D:
        return C(t, 0.0)
    return C(t, 0.0) + C(t - D, 0.0) - 2 * C(t, D)


def autocov(m: DetQueueModel, t, tau) -> float:
    """Cov[Q_t, Q_{t - tau}], 0 when t <= tau."""
    p, D = _check(m)
    C = lambda a, b: autocov_count(p, a, b)
    if tau < 0:
        raise ConfigError("lag must be nonnegative")
    if tau == 0:
        return variance(m, t)
    if t <= tau:
        return 0.0
    if tau >= D:
        if t <= tau + D:
            return C(t, tau) - C(t - D, tau - D)
        return C(t, tau) + C(t - D, tau) - C(t, tau + D) - C(t - D, tau - D)
    if t <= D:
        return C(t, tau)
    if t <= tau + D:
        return C(t, tau) - C(t - tau, D - tau)
    return C(t, tau) + C(t - D, tau) - C(t, tau + D) - C(t - tau, D - tau)


def steady_variance_D(p: HawkesParams, D) -> float:
    li = lambda_inf(p)
    a, b, g = p.jump, p.decay, p.gap
    k = 2 * a * b - a**2
    return li * D * (1 + k / g**2) - li * (1 - np.exp(-g * D)) * k / g**3


def steady_variance_M(p: HawkesParams, mu) -> float:
    li = lambda_inf(p)
    a, b, g = p.jump, p.decay, p.gap
    return li / mu * (1 + (2 * a * b - a**2) / (2 * g * (mu + g)))


def upsilon(x):
    """x^2 - 2(1 - e^{-x}) + 2x e^{-x}; positive and increasing for x > 0."""
    x = np.asarray(x, dtype=float)
    return x**2 + 2 * np.expm1(-x) + 2 * x * np.exp(-x)


def variance_gap_DM(p: HawkesParams, D) -> float:
    """Steady-state Var(D-service) - Var(exponential service) with mean 1/mu = D.

    Evaluated in the factored form (lambda_inf/mu)(2ab - a^2)/g^2 * Upsilon(g/mu)
    * mu^2 / (2 g (mu + g)), which keeps the sign exact for small gaps.
    """
    if not p.is_stable():
        raise UnstableProcess(f"jump {p.jump} >= decay {p.decay}")
    if not D > 0:
        raise ConfigError("D must be positive")
    li = lambda_inf(p)
    a, b, g = p.jump, p.decay, p.gap
    mu = 1.0 / D
    x = g / mu
    return li / mu * (2 * a * b - a**2) / g**2 * float(upsilon(x)) * mu**2 / (2 * (mu + g) * g)
