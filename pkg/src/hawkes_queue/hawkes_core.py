"""Hawkes process with exponential kernel: parameters and closed-form moments.

Dynamics: d lambda = beta (lambda* - lambda) dt + alpha dN, with N_0 = 0.
All transient formulas below assume the counting process starts at zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.integrate import solve_ivp

from .errors import UnstableProcess, StableProcess, NearSingularGap, OrderCapExceeded, ConfigError

GAP_TOL = 1e-8
ORDER_CAP = 4


@dataclass(frozen=True)
class HawkesParams:
    """Baseline lambda*, jump alpha, decay beta and initial intensity lambda_0.

    ``initial_intensity`` defaults to the baseline.
    """

    baseline: float
    jump: float
    decay: float
    initial_intensity: float | None = None

    def __post_init__(self):
        for name in ("baseline", "jump", "decay"):
            object.__setattr__(self, name, float(getattr(self, name)))
        lam0 = self.baseline if self.initial_intensity is None else float(self.initial_intensity)
        object.__setattr__(self, "initial_intensity", lam0)
        if not (self.baseline > 0 and self.decay > 0):
            raise ConfigError("baseline and decay must be positive")
        if not (self.jump >= 0 and lam0 >= 0):
            raise ConfigError("jump and initial intensity must be nonnegative")
        if not all(np.isfinite([self.baseline, self.jump, self.decay, lam0])):
            raise ConfigError("parameters must be finite")

    def is_stable(self) -> bool:
        return self.jump < self.decay

    @property
    def gap(self) -> float:
        return self.decay - self.jump

    def replace(self, **kw) -> "HawkesParams":
        d = dict(baseline=self.baseline, jump=self.jump, decay=self.decay,
                 initial_intensity=self.initial_intensity)
        d.update(kw)
        return HawkesParams(**d)


@dataclass(frozen=True)
class HawkesMoments:
    t: float
    mean_intensity: float
    mean_count: float
    var_intensity: float
    var_count: float
    cov_intensity_count: float

    def as_tuple(self):
        return (self.mean_intensity, self.mean_count, self.var_intensity,
                self.var_count, self.cov_intensity_count)


def _stable_gap(p: HawkesParams) -> float:
    if not p.is_stable():
        raise UnstableProcess(f"jump {p.jump} >= decay {p.decay}")
    g = p.gap
    if g < GAP_TOL:
        raise NearSingularGap(f"decay - jump = {g:.3g} is below {GAP_TOL}")
    return g


def lambda_inf(p: HawkesParams) -> float:
    g = _stable_gap(p)
    return p.decay * p.baseline / g


def transient_moments(p: HawkesParams, t) -> HawkesMoments:
    g = _stable_gap(p)
    a, b, l0 = p.jump, p.decay, p.initial_intensity
    li = b * p.baseline / g
    e1 = np.exp(-g * t)
    e2 = np.exp(-2 * g * t)
    mean_l = li + (l0 - li) * e1
    mean_n = li * t + (l0 - li) / g * (1 - e1)
    var_l = (a**2 * li / (2 * g) + a**2 * (l0 - li) / g * e1
             - a**2 * (2 * l0 - li) / (2 * g) * e2)
    var_n = (b**2 * li / g**2 * t
             + a**2 * (2 * l0 - li) / (2 * g**3) * (1 - e2)
             - 2 * a * b * (l0 - li) / g**2 * t * e1
             + ((b + a) / g**2 * (l0 - li) - 2 * a * b / g**3 * li) * (1 - e1))
    cov = ((a * li / g + a**2 * li / (2 * g**2)) * (1 - e1)
           + a**2 * (2 * l0 - li) / (2 * g**2) * (e2 - e1)
           + a * b * (l0 - li) / g * t * e1)
    return HawkesMoments(t, mean_l, mean_n, var_l, var_n, cov)


def steady_state(p: HawkesParams):
    """(mean intensity, intensity variance, intensity-count covariance) as t -> inf."""
    g = _stable_gap(p)
    a = p.jump
    li = lambda_inf(p)
    return li, a**2 * li / (2 * g), a * li / g + a**2 * li / (2 * g**2)


def _expm1_over(x, a):
    # (e^{x} - 1) / a with x = a t, stable for small a
    return np.expm1(x) / a


def unstable_means(p: HawkesParams, t):
    """(E[lambda_t], E[N_t]) for jump >= decay."""
    if p.is_stable():
        raise StableProcess(f"jump {p.jump} < decay {p.decay}")
    bl, l0 = p.decay * p.baseline, p.initial_intensity
    a = p.jump - p.decay
    if a == 0:
        return bl * t + l0, bl / 2 * t**2 + l0 * t
    x = a * t
    mean_l = bl * _expm1_over(x, a) + l0 * np.exp(x)
    if abs(x) < 1e-4:
        # (e^x - 1 - x) / a^2 by its Taylor series
        second = t**2 * (0.5 + x / 6 + x**2 / 24 + x**3 / 120)
    else:
        second = (np.expm1(x) - x) / a**2
    mean_n = bl * second + l0 * _expm1_over(x, a)
    return mean_l, mean_n


def autocov_count(p: HawkesParams, t, tau):
    """C(t, tau) = Cov[N_t, N_{t - tau}] for t >= tau >= 0, and 0 otherwise."""
    g = _stable_gap(p)
    if not (t >= tau >= 0):
        return 0.0
    a, b, l0 = p.jump, p.decay, p.initial_intensity
    li = b * p.baseline / g
    u = t - tau
    eu = np.exp(-g * u)
    first = (a * (1 - np.exp(-g * tau)) / (2 * g**3)
             * ((2 * b - a) * li - 2 * eu * (a * l0 + b * (li - l0) * g * u + g * li)))
    rest = ((li + 2 * a * li / g + a**2 * li / g**2) * u
            + a**2 * (2 * l0 - li) / (2 * g**3) * (1 - np.exp(-g * (2 * t - tau)))
            - 2 * a * b * (l0 - li) / g**2 * u * eu
            + ((b + a) / g**2 * (l0 - li) - 2 * a * b / g**3 * li) * (1 - eu))
    return first + rest


def _moment_index(order):
    idx = [(i, j) for i in range(order + 1) for j in range(order + 1 - i)]
    return idx, {k: n for n, k in enumerate(idx)}


def moment_system(p: HawkesParams, order: int):
    """Linear system y' = A y for all E[lambda^i N^j] with i + j <= order.

    Entry (0, 0) is the constant moment 1. Built from the generator
    beta (lambda* - lambda) d/dlambda f + lambda (f(lambda + alpha, N + 1) - f)
    applied to f = lambda^m N^l and expanded binomially.
    """
    idx, pos = _moment_index(order)
    A = np.zeros((len(idx), len(idx)))
    a, b, ls = p.jump, p.decay, p.baseline
    for (m, l), r in pos.items():
        if m > 0:
            A[r, pos[(m - 1, l)]] += m * b * ls
            A[r, r] -= m * b
        for j in range(m + 1):
            for k in range(l + 1):
                if (j, k) == (m, l):
                    continue
                A[r, pos[(j + 1, k)]] += comb(m, j) * comb(l, k) * a ** (m - j)
    y0 = np.array([p.initial_intensity ** i if j == 0 else 0.0 for i, j in idx])
    return idx, A, y0


def general_moment_ode(p: HawkesParams, m: int, l: int, t, cap: int = ORDER_CAP,
                       rtol: float = 1e-10, atol: float = 1e-10):
    """E[lambda_t^m N_t^l] by integrating the closed moment ODE system."""
    if m < 0 or l < 0:
        raise ConfigError("orders must be nonnegative")
    if m + l > cap:
        raise OrderCapExceeded(f"order {m + l} exceeds cap {cap}")
    idx, A, y0 = moment_system(p, m + l)
    if t == 0:
        return float(y0[idx.index((m, l))])
    sol = solve_ivp(lambda _, y: A @ y, (0.0, t), y0, method="DOP853",
                    rtol=rtol, atol=atol)
    return float(sol.y[idx.index((m, l)), -1])
