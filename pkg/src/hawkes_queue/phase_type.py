"""Phase-type service distributions.

A distribution is the absorption time of a CTMC with sub-generator ``S``
started from ``theta``. Exit rates are s = -S v with v the ones vector.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSubGenerator, InvalidInitialDist, DimensionMismatch, NonDistinctRates
from .matrix_kit import MAX_PHASES, erlang_subdiagonal

_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PhaseTypeDist:
    sub_generator: np.ndarray
    initial_dist: np.ndarray
    family: str = "general"
    family_params: dict = field(default_factory=dict)

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.sub_generator, dtype=float))
        theta = np.atleast_1d(np.asarray(self.initial_dist, dtype=float))
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise InvalidSubGenerator(f"sub-generator must be square, got {S.shape}")
        n = S.shape[0]
        if n == 0 or n > MAX_PHASES:
            raise InvalidSubGenerator(f"number of phases must be in 1..{MAX_PHASES}")
        if not np.all(np.isfinite(S)):
            raise InvalidSubGenerator("sub-generator has non-finite entries")
        if theta.shape != (n,):
            raise InvalidInitialDist(f"initial distribution must have length {n}")
        off = S - np.diag(np.diag(S))
        if np.any(off < 0):
            raise InvalidSubGenerator("off-diagonal rates must be nonnegative")
        if np.any(np.diag(S) >= 0):
            raise InvalidSubGenerator("diagonal entries must be negative")
        rows = S.sum(axis=1)
        scale = np.abs(np.diag(S)).max()
        if np.any(rows > _TOL * scale):
            raise InvalidSubGenerator("row sums must be <= 0")
        if not np.any(rows < -_TOL * scale):
            raise InvalidSubGenerator("at least one phase must have a positive exit rate")
        if np.max(np.linalg.eigvals(S).real) >= 0:
            raise InvalidSubGenerator("sub-generator is not Hurwitz (absorption not certain)")
        if np.any(theta < 0) or not np.all(np.isfinite(theta)):
            raise InvalidInitialDist("initial probabilities must be nonnegative")
        if abs(theta.sum() - 1.0) > 1e-10:
            raise InvalidInitialDist(f"initial probabilities sum to {theta.sum()}, not 1")
        S.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "sub_generator", S)
        object.__setattr__(self, "initial_dist", theta)

    @property
    def S(self):
        return self.sub_generator

    @property
    def theta(self):
        return self.initial_dist

    @property
    def n(self):
        return self.sub_generator.shape[0]

    @property
    def exit_rates(self):
        return np.maximum(-self.sub_generator.sum(axis=1), 0.0)

    def generator(self):
        """Full generator with the absorbing state listed first."""
        n = self.n
        G = np.zeros((n + 1, n + 1))
        G[1:, 0] = self.exit_rates
        G[1:, 1:] = self.sub_generator
        return G

    def cdf(self, t):
        from .matrix_kit import expm
        return 1.0 - self.theta @ expm(self.S * t) @ np.ones(self.n)

    def to_dict(self):
        return {"S": self.S.tolist(), "theta": self.theta.tolist()}

    def __eq__(self, other):
        if not isinstance(other, PhaseTypeDist):
            return NotImplemented
        return (np.array_equal(self.S, other.S) and np.array_equal(self.theta, other.theta))

    def __hash__(self):
        return hash((self.S.tobytes(), self.theta.tobytes()))


def new(S, theta) -> PhaseTypeDist:
    return PhaseTypeDist(S, theta)


def exponential(mu) -> PhaseTypeDist:
    return PhaseTypeDist([[-float(mu)]], [1.0], "hyperexp", {"mus": np.array([float(mu)])})


def erlang(n: int, mu: float) -> PhaseTypeDist:
    """n phases each of rate n*mu, so the mean is 1/mu."""
    if n < 1 or mu <= 0:
        raise InvalidSubGenerator("erlang needs n >= 1 and mu > 0")
    N = erlang_subdiagonal(n)
    S = (n * mu * (N - np.eye(n))).T
    theta = np.zeros(n)
    theta[0] = 1.0
    return PhaseTypeDist(S, theta, "erlang", {"n": int(n), "mu": float(mu)})


def hyperexp(theta, mus) -> PhaseTypeDist:
    theta = np.asarray(theta, dtype=float)
    mus = np.asarray(mus, dtype=float)
    if theta.shape != mus.shape or theta.ndim != 1:
        raise DimensionMismatch(f"theta {theta.shape} and mus {mus.shape} differ")
    if np.any(mus <= 0):
        raise InvalidSubGenerator("hyper-exponential rates must be positive")
    if len(np.unique(mus)) < len(mus):
        warnings.warn("hyper-exponential rates are not distinct", NonDistinctRates, stacklevel=2)
    return PhaseTypeDist(-np.diag(mus), theta, "hyperexp", {"mus": mus.copy()})


def mean_service_time(d: PhaseTypeDist) -> float:
    v = np.ones(d.n)
    return float(-d.theta @ np.linalg.solve(d.S, v))


def embedded_chain(d: PhaseTypeDist):
    """Holding rates and the row-stochastic jump matrix over (phases, exit).

    Column n of the jump matrix is the absorption probability.
    """
    S = d.S
    rates = -np.diag(S)
    n = d.n
    P = np.zeros((n, n + 1))
    P[:, :n] = S / rates[:, None]
    P[np.arange(n), np.arange(n)] = 0.0
    P[:, n] = d.exit_rates / rates
    P /= P.sum(axis=1, keepdims=True)
    return rates, P


def sample(d: PhaseTypeDist, rng: np.random.Generator):
    """Draw one service time and the list of (phase, holding time) visited."""
    rates, P = embedded_chain(d)
    n = d.n
    phase = int(rng.choice(n, p=d.theta))
    total = 0.0
    path = []
    while phase < n:
        h = rng.exponential(1.0 / rates[phase])
        path.append((phase, h))
        total += h
        phase = int(rng.choice(n + 1, p=P[phase]))
    return total, path
