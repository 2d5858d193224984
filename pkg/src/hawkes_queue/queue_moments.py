"""First and second moments of the Hawkes/PH/infinity queue.

Notation used throughout: A = S^T, g = beta - alpha, li = lambda_inf,
l0 = lambda_0. Q_t is the vector of occupancy per service phase, c_t is
Cov[lambda_t, Q_t] and X_t = Cov[Q_t, Q_t].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

from math import comb

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import gammaln, gammainc

from .errors import (NearSingularGap, UnstableProcess, StableProcess, UnhandledCaseSplit, FallbackWarning)
from .hawkes_core import HawkesParams, lambda_inf
from .matrix_kit import expm, is_singular, m_matrix_conj, solve_lyapunov, _poly_exp_moment
from .phase_type import PhaseTypeDist

CASE_TOL = 1e-8


@dataclass(frozen=True)
class QueueModel:
    arrivals: HawkesParams
    service: PhaseTypeDist

    @property
    def n(self):
        return self.service.n


@dataclass
class MomentCurve:
    grid: np.ndarray
    mean_q: np.ndarray
    cov_lq: np.ndarray
    cov_qq: np.ndarray
    flags: list = field(default_factory=list)


def _setup(m: QueueModel):
    p = m.arrivals
    if not p.is_stable():
        raise UnstableProcess(f"jump {p.jump} >= decay {p.decay}")
    li = lambda_inf(p)
    A = m.service.S.T
    return p, A, p.gap, li, p.initial_intensity, m.service.theta


def _inv(M, what):
    if is_singular(M):
        raise NearSingularGap(f"{what} is numerically singular")
    return np.linalg.inv(M)


def _coefficients(p, li):
    g, a, b, l0 = p.gap, p.jump, p.decay, p.initial_intensity
    K1 = a * (2 * b - a) * li / (2 * g)
    K2 = a * b * (l0 - li) / g
    K3 = a**2 * (2 * l0 - li) / (2 * g)
    return K1, K2, K3


# ---------------------------------------------------------------- ODE oracle

def _ode_rhs(A, theta, p):
    n = len(theta)
    g = p.decay - p.jump
    a = p.jump
    bl = p.decay * p.baseline

    def f(_, y):
        El, Vl = y[0], y[1]
        EQ = y[2:2 + n]
        c = y[2 + n:2 + 2 * n]
        X = y[2 + 2 * n:].reshape(n, n)
        dEl = bl - g * El
        dVl = -2 * g * Vl + a**2 * El
        dEQ = theta * El + A @ EQ
        dc = A @ c - g * c + a * theta * El + theta * Vl
        dX = (A @ X + X @ A.T + np.outer(theta, c) + np.outer(c, theta)
              + np.diag(dEQ) - A * EQ[None, :] - EQ[:, None] * A.T)
        return np.concatenate(([dEl, dVl], dEQ, dc, dX.ravel()))

    return f


def ode_reference(m: QueueModel, t, rtol=1e-11, atol=1e-12):
    """(E[Q_t], Cov[lambda_t, Q_t], Cov[Q_t, Q_t]) by integrating the moment ODEs.

    Valid for stable and unstable arrivals.
    """
    p = m.arrivals
    n = m.n
    A = m.service.S.T
    theta = m.service.theta
    y0 = np.zeros(2 + 2 * n + n * n)
    y0[0] = p.initial_intensity
    if t == 0:
        return np.zeros(n), np.zeros(n), np.zeros((n, n))
    sol = solve_ivp(_ode_rhs(A, theta, p), (0.0, float(t)), y0, method="DOP853",
                    rtol=rtol, atol=atol)
    y = sol.y[:, -1]
    X = y[2 + 2 * n:].reshape(n, n)
    return y[2:2 + n].copy(), y[2 + n:2 + 2 * n].copy(), 0.5 * (X + X.T)


def _fallback(m, t, why):
    warnings.warn(f"closed form unavailable ({why}); using ODE integration",
                  FallbackWarning, stacklevel=3)
    return ode_reference(m, t)


# ------------------------------------------------------ generic closed forms

def _mean_closed(m, t):
    p, A, g, li, l0, theta = _setup(m)
    n = m.n
    I = np.eye(n)
    EA = expm(A * t)
    Ainv = _inv(A, "S^T")
    R3 = _inv(A + g * I, "S^T + (beta - alpha) I")
    return (li * (-Ainv) @ (I - EA) @ theta
            - (l0 - li) * R3 @ (np.exp(-g * t) * I - EA) @ theta)


def _cov_lq_closed(m, t):
    p, A, g, li, l0, theta = _setup(m)
    n = m.n
    I = np.eye(n)
    K1, K2, K3 = _coefficients(p, li)
    Eg = expm((A - g * I) * t)
    R1 = _inv(g * I - A, "(beta - alpha) I - S^T")
    Ainv = _inv(A, "S^T")
    R3 = _inv(A + g * I, "S^T + (beta - alpha) I")
    return (K1 * R1 @ (I - Eg) @ theta
            - K2 * Ainv @ (np.exp(-g * t) * I - Eg) @ theta
            + K3 * R3 @ (np.exp(-2 * g * t) * I - Eg) @ theta)


def _cov_qq_modes(m, t, m_method="quad"):
    """Cov[Q_t, Q_t] from the exponential-mode decomposition of c_s.

    c_s = a0 + e^{-gs} a1 + e^{-2gs} a2 + e^{-gs} e^{As} w, so the forcing
    integral splits into three M-matrix terms and one rank-one term.
    """
    p, A, g, li, l0, theta = _setup(m)
    n = m.n
    I = np.eye(n)
    S = A.T
    K1, K2, K3 = _coefficients(p, li)
    R1 = _inv(g * I - A, "(beta - alpha) I - S^T")
    Ainv = _inv(A, "S^T")
    R3 = _inv(A + g * I, "S^T + (beta - alpha) I")
    EA = expm(A * t)
    X = np.zeros((n, n))
    for rho, R in ((0.0, K1 * R1), (-g, -K2 * Ainv), (-2 * g, K3 * R3)):
        if not R.any():
            continue
        P = m_matrix_conj(rho, theta, S, t, method=m_method)
        X += P @ R.T + R @ P
    w = (-K1 * R1 + K2 * Ainv - K3 * R3) @ theta
    J = R3 @ (EA - np.exp(-g * t) * I)
    T = J @ np.outer(theta, w) @ EA.T
    X += T + T.T
    X += np.diag(_mean_closed(m, t))
    return 0.5 * (X + X.T)


def _cov_qq_printed(m, t, m_method="quad"):
    """Transcription of the three-group printed closed form (test target)."""
    p, A, g, li, l0, theta = _setup(m)
    n = m.n
    I = np.eye(n)
    S = A.T
    K1, K2, K3 = _coefficients(p, li)
    P = np.outer(theta, theta)
    EA = expm(A * t)
    ES = EA.T
    eg = np.exp(-g * t)
    # e^{S^T t} M_{0,theta,S} e^{S t} and e^{S^T t} M_{-g,theta,S} e^{S t}
    CM0 = m_matrix_conj(0.0, theta, S, t, method=m_method)
    CMg = m_matrix_conj(-g, theta, S, t, method=m_method)
    gA = _inv(g * I - A, "(beta - alpha) I - S^T")
    gS = gA.T
    Ainv = _inv(A, "S^T")
    Sinv = Ainv.T
    pA = _inv(g * I + A, "S^T + (beta - alpha) I")
    pS = pA.T
    first = K1 * gA @ (
        2 * g * CM0 + P - EA @ P @ ES
        + EA @ P @ (eg * I - ES) @ pS @ (g * I - S)
        + (g * I - A) @ pA @ (eg * I - EA) @ P @ ES
    ) @ gS
    second = K2 * Ainv @ (
        g * CMg + eg * P - EA @ P @ ES
        - EA @ P @ (eg * I - ES) @ pS @ S
        - A @ pA @ (eg * I - EA) @ P @ ES
    ) @ Sinv
    third = -K3 * pA @ (
        np.exp(-2 * g * t) * P - EA @ P @ ES
        - EA @ P @ (eg * I - ES)
        - (eg * I - EA) @ P @ ES
    ) @ pS
    diag = (-li * np.diag(Ainv @ (I - EA) @ theta)
            - (l0 - li) * np.diag(pA @ (eg * I - EA) @ theta))
    return first + second + third + diag


# --------------------------------------------------------------- public API

def _specialized(m, t):
    """Family-specific closed forms, used when the generic one is singular.
    Returns None for a general phase-type distribution."""
    fam = m.service.family
    if fam == "erlang":
        return (*erlang_moments(m, t), "erlang")
    if fam == "hyperexp":
        return (*hyperexp_moments(m, t), "hyperexp")
    return None


def _rescue(m, t, exc):
    # (mean, cov_lq, cov_qq) after the generic closed form failed
    if not m.arrivals.is_stable() or m.arrivals.gap < 1e-8:
        raise exc
    sp = _specialized(m, t)
    if sp is not None:
        return sp[:3]
    return _fallback(m, t, exc)


def mean_vector(m: QueueModel, t) -> np.ndarray:
    """E[Q_t]. When a shifted matrix is singular the Erlang or
    hyper-exponential forms are used if they apply, otherwise ODE integration
    (with a FallbackWarning)."""
    if t == 0:
        return np.zeros(m.n)
    try:
        return _mean_closed(m, t)
    except NearSingularGap as exc:
        return _rescue(m, t, exc)[0]


def cov_lambda_q(m: QueueModel, t) -> np.ndarray:
    if t == 0:
        return np.zeros(m.n)
    try:
        return _cov_lq_closed(m, t)
    except NearSingularGap as exc:
        return _rescue(m, t, exc)[1]


def cov_matrix(m: QueueModel, t) -> np.ndarray:
    if t == 0:
        return np.zeros((m.n, m.n))
    try:
        X = _cov_qq_printed(m, t)
    except NearSingularGap as exc:
        return _rescue(m, t, exc)[2]
    return 0.5 * (X + X.T)


def moments(m: QueueModel, t):
    """(mean, cov_lq, cov_qq, method); method is "closed", "erlang" or
    "hyperexp" (family forms for a singular generic case) or "ode"."""
    n = m.n
    if t == 0:
        return np.zeros(n), np.zeros(n), np.zeros((n, n)), "closed"
    _setup(m)
    try:
        X = _cov_qq_printed(m, t)
        return _mean_closed(m, t), _cov_lq_closed(m, t), 0.5 * (X + X.T), "closed"
    except NearSingularGap:
        pass
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FallbackWarning)
        sp = _specialized(m, t)
    if sp is not None and not caught:
        return sp
    E, c, X = ode_reference(m, t)
    return E, c, X, "ode"


def moment_curve(m: QueueModel, grid) -> MomentCurve:
    grid = np.asarray(grid, dtype=float)
    n = m.n
    E = np.zeros((len(grid), n))
    C = np.zeros((len(grid), n))
    X = np.zeros((len(grid), n, n))
    flags = []
    for k, t in enumerate(grid):
        E[k], C[k], X[k], how = moments(m, t)
        flags.append("" if how == "closed" else how)
    return MomentCurve(grid, E, C, X, flags)


# ------------------------------------------------------------------- Erlang

def erlang_m_elementwise(gamma, n, mu, t):
    """Element-wise closed form of M_{gamma, v1, n mu N^T}(t) (direct, unconjugated).

    Entry (i, j), zero-based, is C(i+j, i) (-n mu)^{i+j} times the integral of
    s^{i+j} e^{gamma s} / (i+j)! over [0, t]. Grows like e^{gamma t}; use
    erlang_m_conj for the conjugated product at long horizons.
    """
    r = n * mu
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            p = i + j
            out[i, j] = comb(p, i) * (-r) ** p * _poly_exp_moment(p, gamma, t)
    return out


def _log_poly_exp_decay(p, k, t):
    # log of int_0^t u^p e^{-k u} du / p!
    if k * t > 1:
        # regularized lower incomplete gamma
        return np.log(gammainc(p + 1, k * t)) - (p + 1) * np.log(k)
    # sum_m (-k)^m t^{p+1+m} / (p! m! (p+1+m)); all terms positive for k <= 0
    c = -k
    total, m_ = 0.0, 0
    term = 1.0 / (p + 1)
    while True:
        total += term
        m_ += 1
        term *= c * t / m_ * (p + m_) / (p + 1 + m_)
        if abs(term) < 1e-17 * abs(total):
            break
    return np.log(total) + (p + 1) * np.log(t) - gammaln(p + 1)


def erlang_m_conj(gamma, n, mu, t):
    """e^{nmu(N-I)t} M_{gamma, v1, nmu N^T}(t) e^{nmu(N^T-I)t} for Erlang service.

    In the conjugated frame the integrand is e^{(gamma - 2nmu)(t-u)} y y^T with
    y_i(u) = e^{-nmu u} (nmu u)^i / i!, so each entry is a positive incomplete
    gamma integral; nothing cancels or overflows at long horizons.
    """
    r = n * mu
    if t == 0:
        return np.zeros((n, n))
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            p = i + j
            lg = (p * np.log(r) + gammaln(p + 1) - gammaln(i + 1) - gammaln(j + 1)
                  + (gamma - 2 * r) * t + _log_poly_exp_decay(p, gamma, t))
            out[i, j] = np.exp(lg)
    return out


def _erlang_params(m):
    d = m.service
    if d.family != "erlang":
        raise ValueError("service distribution is not an Erlang")
    return d.family_params["n"], d.family_params["mu"]


def erlang_moments(m: QueueModel, t):
    """(mean, cov_lq, cov_qq) from the Erlang-specific closed forms, including
    the separate forms used when n mu equals decay - jump."""
    n, mu = _erlang_params(m)
    p, A, g, li, l0, theta = _setup(m)
    if t == 0:
        return np.zeros(n), np.zeros(n), np.zeros((n, n))
    if abs(n * mu - g) < CASE_TOL:
        return _erlang_singular(m, n, mu, t)
    return _erlang_regular(m, n, mu, t)


def _erlang_regular(m, n, mu, t):
    p, A, g, li, l0, theta = _setup(m)
    a, b = p.jump, p.decay
    r = n * mu
    I = np.eye(n)
    N = np.eye(n, k=-1)
    v1 = basis_vec(n, 0)
    v = np.ones(n)
    P = np.outer(v1, v1)
    EA = expm(r * (N - I) * t)
    ES = EA.T
    EAg = expm((r * N - (r + g) * I) * t)
    eg = np.exp(-g * t)
    K1, K2, K3 = _coefficients(p, li)
    Rg = np.linalg.inv(r * N - (r - g) * I)        # (S^T + g I)^{-1}
    Rgt = Rg.T
    Rm = np.linalg.inv((r + g) * I - r * N)        # (g I - S^T)^{-1}
    Rmt = Rm.T
    mean = li / r * (I - EA) @ v - (l0 - li) * Rg @ (eg * I - EA) @ v1
    cov_lq = (li * (a + a**2 / (2 * g)) * Rm @ (I - EAg) @ v1
              + a * b * (l0 - li) / (r * g) * (eg * I - EAg) @ v
              + K3 * Rg @ (np.exp(-2 * g * t) * I - EAg) @ v1)
    CM0 = erlang_m_conj(2 * r, n, mu, t)
    CMg = erlang_m_conj(2 * r - g, n, mu, t)
    first = K1 * Rm @ (
        2 * g * CM0 + P - EA @ P @ ES
        + EA @ P @ (eg * I - ES) @ Rgt @ ((r + g) * I - r * N.T)
        + ((r + g) * I - r * N) @ Rg @ (eg * I - EA) @ P @ ES
    ) @ Rmt
    NmI = np.linalg.inv(N - I)
    second = K2 / r**2 * NmI @ (
        g * CMg + eg * P - EA @ P @ ES
        - r * EA @ P @ (eg * I - ES) @ Rgt @ (N.T - I)
        - r * (N - I) @ Rg @ (eg * I - EA) @ P @ ES
    ) @ NmI.T
    third = -K3 * Rg @ (
        np.exp(-2 * g * t) * P - EA @ P @ ES
        - EA @ P @ (eg * I - ES)
        - (eg * I - EA) @ P @ ES
    ) @ Rgt
    diag = li / r * np.diag((I - EA) @ v) - (l0 - li) * np.diag(Rg @ (eg * I - EA) @ v1)
    X = first + second + third + diag
    return mean, cov_lq, 0.5 * (X + X.T)


def _erlang_x(n, mu, t):
    r = n * mu
    i = np.arange(1, n + 1)
    fact = np.array([float(np.prod(np.arange(1, k + 1))) for k in i])
    return (-r) ** (i - 1) * t**i / fact


def _erlang_X(n, mu, t, shift=0):
    r = n * mu
    X = np.zeros((n, n))
    f = lambda k: float(np.prod(np.arange(1, k + 1)))
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            X[i - 1, j - 1] = (-r) ** (i + j - 2) * t ** (i + j - shift) / (f(i - 1) * f(j) * (i + j))
    return X


def _erlang_singular(m, n, mu, t, printed=False):
    # printed=True reproduces the literal printed variant (kept for regression tests)
    p, A, g, li, l0, theta = _setup(m)
    a = p.jump
    r = n * mu
    I = np.eye(n)
    N = np.eye(n, k=-1)
    v1 = basis_vec(n, 0)
    v = np.ones(n)
    EA = expm(r * (N - I) * t)
    E2 = expm(r * (N - 2 * I) * t)
    x = _erlang_x(n, mu, t)
    mean = li / r * (I - EA) @ v + (l0 - li) * EA @ x
    c1 = li * (a / r + a**2 / (2 * r**2))
    c2 = (l0 - li) * (a / r + a**2 / r**2)
    c3 = a**2 * (2 * l0 - li) / (2 * r)
    R2 = np.linalg.inv(2 * I - N)
    R1 = np.linalg.inv(I - N)
    cov_lq = (c1 * R2 @ (I - E2) @ v1 + c2 * (np.exp(-r * t) * I - E2) @ v - c3 * E2 @ x)
    # the outer e^{A t}( . )e^{A^T t} is pushed inside each term
    CM = erlang_m_conj(2 * r, n, mu, t)
    CMr = CM if printed else erlang_m_conj(r, n, mu, t)
    Xv = EA @ np.outer(x, v1) @ EA.T
    Xm = EA @ _erlang_X(n, mu, t, shift=int(printed)) @ EA.T
    Xxv = EA @ np.outer(x, v) @ EA.T
    inner = (c1 * ((CM - Xv) @ R2.T + R2 @ (CM - Xv.T))
             + c2 * (CMr @ R1.T + R1 @ CMr - Xxv - Xxv.T)
             - c3 * (Xm + Xm.T))
    X = np.diag(mean) + inner
    return mean, cov_lq, 0.5 * (X + X.T)


def basis_vec(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


# --------------------------------------------------------- hyper-exponential

def _hyper_params(m):
    d = m.service
    if d.family != "hyperexp":
        raise ValueError("service distribution is not hyper-exponential")
    return np.asarray(d.family_params["mus"], dtype=float)


def _near(x, y):
    return abs(x - y) < CASE_TOL


def _hyper_mean_i(li, l0, g, th, mu, t):
    base = li / mu * (1 - np.exp(-mu * t)) * th
    if _near(mu, g):
        return base + (l0 - li) * th * t * np.exp(-mu * t)
    return base + (l0 - li) / (mu - g) * (np.exp(-g * t) - np.exp(-mu * t)) * th


def _hyper_cov_lq_i(p, li, th, mu, t):
    a, b, l0, g = p.jump, p.decay, p.initial_intensity, p.gap
    if _near(mu, g):
        return (a * th * (2 * mu + a) * li / (4 * mu**2) * (1 - np.exp(-2 * mu * t))
                + a * b * th * (l0 - li) / mu**2 * (np.exp(-mu * t) - np.exp(-2 * mu * t))
                - a**2 * th * (2 * l0 - li) / (2 * mu) * t * np.exp(-2 * mu * t))
    e = np.exp(-(mu + g) * t)
    return (a * th * (2 * b - a) * li / (2 * g * (mu + g)) * (1 - e)
            + a * b * th * (l0 - li) / (mu * g) * (np.exp(-g * t) - e)
            - a**2 * th * (2 * l0 - li) / (2 * g * (mu - g)) * (np.exp(-2 * g * t) - e))


def _hyper_var_i(p, li, th, mu, t, printed=False):
    a, b, l0, g = p.jump, p.decay, p.initial_intensity, p.gap
    d = l0 - li
    E = lambda r: np.exp(-r * t)
    if _near(mu, g):
        return (li * th / mu * (1 - E(mu))
                + a * th**2 * (2 * b - a) * li / (4 * mu**3) * (1 - E(2 * mu))
                - (a * th**2 * (2 * b - a) * li / (2 * mu**2) + 2 * a * b * th**2 * d / mu**2) * t * E(2 * mu)
                + (d * th + 2 * a * b * th**2 * d / mu**2) * (E(mu) - E(2 * mu)) / mu
                - a**2 * th**2 * (2 * l0 - li) / (2 * mu) * t**2 * E(2 * mu)
                + d * th * (t * E(mu) + (E(2 * mu) - E(mu)) / mu) / (mu if printed else 1.0))
    if _near(2 * mu, g):
        h = t * E(2 * mu)
    else:
        h = (E(g) - E(2 * mu)) / (2 * mu - g)
    return (li * th / mu * (1 - E(mu))
            + a * th**2 * (2 * b - a) * li / (2 * mu * g * (mu + g)) * (1 - E(2 * mu))
            - (a * th**2 * (2 * b - a) * li / (g * (mu + g))
               + 2 * a * b * th**2 * d / (mu * g)
               - a**2 * th**2 * (2 * l0 - li) / (g * (mu - g))) * (E(mu + g) - E(2 * mu)) / (mu - g)
            + (d * th + mu * d * th / (mu - g) + 2 * a * b * th**2 * d / (mu * g)) * h
            - a**2 * th**2 * (2 * l0 - li) / (2 * g * (mu - g)**2) * (E(2 * g) - E(2 * mu))
            - d * th / (mu - g) * (E(mu) - E(2 * mu)))


def _hyper_cov_ij(p, li, thi, thj, mi, mj, t, printed=False):
    """Cov[Q_i, Q_j], i != j. printed=True keeps the literal signs of the
    exponentials e^{+2(beta-alpha)t}, e^{+2 mu_j t} and the i/j placement in
    the t e^{-2 mu} term, which disagree with the ODE solution."""
    a, b, l0, g = p.jump, p.decay, p.initial_intensity, p.gap
    d = l0 - li
    s = mi + mj
    E = lambda r: np.exp(-r * t)
    if _near(mi, g):
        return _hyper_cov_ij(p, li, thj, thi, mj, mi, t, printed)
    if _near(mj, g):
        if _near(s, 2 * mj) or _near(mi, 0):
            raise UnhandledCaseSplit("rates collide with the decay gap")
        sq = (E(-2 * mj) if printed else E(2 * mj))
        # convolution of e^{-2 mu_j s} with e^{-sigma (t - s)}
        if printed:
            conv2 = t * E(2 * mi) / (mj - mi) + (E(s) - E(2 * mi)) / (mj - mi)**2
        else:
            conv2 = t * E(2 * mj) / (mi - mj) + (E(s) - E(2 * mj)) / (mi - mj)**2
        k = a * thi * thj
        return (k * (2 * b - a) * li / (4 * mj**2) * ((1 - E(s)) / s - (E(2 * mj) - E(s)) / (mi - mj))
                + k * b * d / mj**2 * ((E(mj) - E(s)) / mi - (E(2 * mj) - E(s)) / (mi - mj))
                - a * thi * thj * a * (2 * l0 - li) / (2 * mj) * conv2
                + k * (2 * b - a) * li / (2 * mj * s) * ((1 - E(s)) / s - t * E(s))
                + k * b * d / (mi * mj) * ((E(mj) - E(s)) / mi - t * E(s))
                - k * a * (2 * l0 - li) / (2 * mj * (mi - mj)) * ((sq - E(s)) / (mi - mj) - t * E(s)))
    for den in (s, s - g, s - 2 * g):
        if abs(den) < CASE_TOL:
            raise UnhandledCaseSplit("sum of rates collides with a multiple of the decay gap")
    e2 = E(-2 * g) if printed else E(2 * g)
    out = 0.0
    for ma, mb in ((mi, mj), (mj, mi)):
        k = a * thi * thj
        tail = (E(mb + g) - E(s)) / (ma - g)
        out += (k * (2 * b - a) * li / (2 * g * (mb + g)) * ((1 - E(s)) / s - tail)
                + k * b * d / (mb * g) * ((E(g) - E(s)) / (s - g) - tail)
                - k * a * (2 * l0 - li) / (2 * g * (mb - g)) * ((e2 - E(s)) / (s - 2 * g) - tail))
    return out


def hyperexp_moments(m: QueueModel, t, printed=False):
    """(mean, cov_lq, cov_qq) from the hyper-exponential element formulas.

    Pairs whose rates fall on an unprinted case split are integrated
    numerically; a FallbackWarning is issued in that case.
    """
    mus = _hyper_params(m)
    p, A, g, li, l0, theta = _setup(m)
    n = len(mus)
    if t == 0:
        return np.zeros(n), np.zeros(n), np.zeros((n, n))
    mean = np.array([_hyper_mean_i(li, l0, g, theta[i], mus[i], t) for i in range(n)])
    clq = np.array([_hyper_cov_lq_i(p, li, theta[i], mus[i], t) for i in range(n)])
    X = np.zeros((n, n))
    ode = None
    for i in range(n):
        X[i, i] = _hyper_var_i(p, li, theta[i], mus[i], t, printed)
        for j in range(i + 1, n):
            try:
                X[i, j] = _hyper_cov_ij(p, li, theta[i], theta[j], mus[i], mus[j], t, printed)
            except UnhandledCaseSplit as exc:
                if ode is None:
                    ode = _fallback(m, t, exc)[2]
                X[i, j] = ode[i, j]
            X[j, i] = X[i, j]
    return mean, clq, X


# ------------------------------------------------- limits and unstable means

class SteadyState(NamedTuple):
    mean_q: np.ndarray
    cov_lq: np.ndarray
    cov_qq: np.ndarray


def steady_state(m: QueueModel) -> SteadyState:
    """Limits of E[Q_t], Cov[lambda_t, Q_t] and Cov[Q_t, Q_t] as t -> inf.

    The covariance solves the Lyapunov equation S^T V + V S + M = 0. No
    invertibility of S^T + (beta - alpha) I is needed here.
    """
    p = m.arrivals
    if not p.is_stable():
        raise UnstableProcess(f"jump {p.jump} >= decay {p.decay}")
    li = lambda_inf(p)
    g = p.gap
    S = m.service.S
    A = S.T
    n = m.n
    theta = m.service.theta
    Q = li * np.linalg.solve(-A, theta)
    C = li * p.jump * (2 * p.decay - p.jump) / (2 * g) * np.linalg.solve(g * np.eye(n) - A, theta)
    D = np.diag(Q)
    M = np.outer(theta, C) + np.outer(C, theta) - A @ D - D @ S
    V = solve_lyapunov(S, M)
    return SteadyState(Q, C, V)


def unstable_mean(m: QueueModel, t) -> np.ndarray:
    """E[Q_t] when jump >= decay.

    For jump == decay the intensity mean is lambda_0 + beta lambda* t, and the
    mean occupancy is computed from that directly.
    """
    p = m.arrivals
    if p.is_stable():
        raise StableProcess(f"jump {p.jump} < decay {p.decay}")
    A = m.service.S.T
    n = m.n
    I = np.eye(n)
    theta = m.service.theta
    bl = p.decay * p.baseline
    l0 = p.initial_intensity
    EA = expm(A * t)
    Ainv = np.linalg.inv(A)
    k = p.jump - p.decay
    if k == 0:
        return -(I - EA) @ Ainv @ (Ainv @ theta * bl + theta * l0) - Ainv @ theta * bl * t
    R = _inv(k * I - A, "(alpha - beta) I - S^T")
    return (R @ (np.exp(k * t) * I - EA) @ theta * (bl / k + l0)
            + Ainv @ (I - EA) @ theta * bl / k)


def _unstable_mean_critical_printed(m, t):
    # literal jump == decay form, kept to document the discrepancy
    p = m.arrivals
    A = m.service.S.T
    Ainv = np.linalg.inv(A)
    bl = p.decay * p.baseline
    EA = expm(A * t)
    th = m.service.theta
    return (-Ainv @ (np.eye(m.n) - EA) @ th * (p.initial_intensity - bl)
            - Ainv @ th * bl * t)


# ----------------------------------------------------------- autocovariance

def _gap_kernel(A, g, tau):
    """int_0^tau e^{A(tau-s)} e^{-g s} ds, via an augmented exponential when
    A + g I is singular."""
    n = A.shape[0]
    I = np.eye(n)
    if not is_singular(A + g * I):
        return np.linalg.solve(A + g * I, expm(A * tau) - np.exp(-g * tau) * I)
    Z = np.zeros((2 * n, 2 * n))
    Z[:n, :n] = A
    Z[:n, n:] = I
    Z[n:, n:] = -g * I
    return expm(Z * tau)[:n, n:]


def autocov_q(m: QueueModel, t, tau) -> np.ndarray:
    """Cov[Q_t, Q_{t - tau}] for t >= tau >= 0 (zero matrix otherwise).

    Conditions on the state at t - tau: given it, the mean at t is
    e^{A tau} Q + lambda_inf (-A)^{-1}(I - e^{A tau}) theta + (lambda - lambda_inf) J theta,
    then uses the moments at t - tau.
    """
    n = m.n
    if not (t >= tau >= 0):
        return np.zeros((n, n))
    p, A, g, li, l0, theta = _setup(m)
    I = np.eye(n)
    u = t - tau
    E1, c1, X1, _ = moments(m, u)
    Et = mean_vector(m, t) if tau > 0 else E1
    El1 = li + (l0 - li) * np.exp(-g * u)
    EA = expm(A * tau)
    J = _gap_kernel(A, g, tau)
    Ainv = np.linalg.inv(A)
    return (li * (-Ainv) @ (I - EA) @ np.outer(theta, E1)
            + J @ np.outer(theta, c1 + El1 * E1 - li * E1)
            + EA @ X1
            + np.outer(EA @ E1 - Et, E1))


def _autocov_q_explicit(m, t, tau, printed=True, m_method="quad"):
    """Fully substituted closed form; printed=True keeps E[Q_t] as the last
    outer factor, printed=False uses E[Q_{t - tau}]."""
    n = m.n
    if not (t >= tau >= 0):
        return np.zeros((n, n))
    p, A, g, li, l0, theta = _setup(m)
    I = np.eye(n)
    S = A.T
    u = t - tau
    d = l0 - li
    K1, K2, K3 = _coefficients(p, li)
    Ainv = _inv(A, "S^T")
    R3 = _inv(A + g * I, "S^T + (beta - alpha) I")
    R1 = _inv(g * I - A, "(beta - alpha) I - S^T")
    EAt = expm(A * tau)
    EAu = expm(A * u)
    eu = np.exp(-g * u)

    def mean_at(s):
        return li * (-Ainv) @ (I - expm(A * s)) @ theta - d * R3 @ (np.exp(-g * s) * I - expm(A * s)) @ theta

    Eu = mean_at(u)
    Et = mean_at(t)
    Egu = expm((A - g * I) * u)
    cu = (K1 * R1 @ (I - Egu) @ theta - K2 * Ainv @ (eu * I - Egu) @ theta
          + K3 * R3 @ (np.exp(-2 * g * u) * I - Egu) @ theta)
    out = li * (-Ainv) @ (I - EAt) @ np.outer(theta, Eu)
    lead = R3 @ (np.exp(-g * tau) * I - EAt) @ theta
    out -= np.outer(lead, cu + (li + d * eu) * Eu)
    out += li * np.outer(lead, Eu)
    P = np.outer(theta, theta)
    ESu = EAu.T
    CM0 = m_matrix_conj(0.0, theta, S, u, method=m_method) if u > 0 else np.zeros((n, n))
    CMg = m_matrix_conj(-g, theta, S, u, method=m_method) if u > 0 else np.zeros((n, n))
    pS = R3.T
    out += K1 * R1 @ EAt @ (
        2 * g * CM0 + P - EAu @ P @ ESu
        + EAu @ P @ (eu * I - ESu) @ pS @ (g * I - S)
        + (g * I - A) @ R3 @ (eu * I - EAu) @ P @ ESu
    ) @ R1.T
    out += K2 * Ainv @ EAt @ (
        g * CMg + eu * P - EAu @ P @ ESu
        - EAu @ P @ (eu * I - ESu) @ pS @ S
        - A @ R3 @ (eu * I - EAu) @ P @ ESu
    ) @ Ainv.T
    out -= K3 * R3 @ EAt @ (
        np.exp(-2 * g * u) * P - EAu @ P @ ESu
        - EAu @ P @ (eu * I - ESu)
        - (eu * I - EAu) @ P @ ESu
    ) @ pS
    out -= li * EAt @ np.diag(Ainv @ (I - EAu) @ theta)
    out -= d * EAt @ np.diag(R3 @ (eu * I - EAu) @ theta)
    eg = np.exp(-g * t)
    first = (li * (-Ainv) @ (EAt - I) @ theta
             - d * R3 @ (eg * expm((A + g * I) * tau) - eg * I + expm(A * t) - expm(A * t)) @ theta)
    out += np.outer(first, Et if printed else Eu)
    return out


def _minf_mu(m):
    d = m.service
    if d.n != 1:
        raise ValueError("single-phase (exponential) service required")
    return -float(d.S[0, 0])


def minf_autocov(p: HawkesParams, mu, t, tau) -> float:
    """Cov[Q_t, Q_{t - tau}] for exponential service with rate mu, from the
    scalar moments at t - tau (covers mu != beta - alpha and mu == beta - alpha)."""
    if not (t >= tau >= 0):
        return 0.0
    from .phase_type import exponential
    m = QueueModel(p, exponential(mu))
    mu = _minf_mu(m)
    p, A, g, li, l0, theta = _setup(m)
    u = t - tau
    if u > 0:
        E1, c1, V1 = (float(x.ravel()[0]) for x in _minf_scalar(m, u))
    else:
        E1 = c1 = V1 = 0.0
    Et = float(_minf_scalar(m, t)[0][0]) if t > 0 else 0.0
    El1 = li + (l0 - li) * np.exp(-g * u)
    if _near(mu, g):
        k = tau * np.exp(-mu * tau)
    else:
        k = (np.exp(-g * tau) - np.exp(-mu * tau)) / (mu - g)
    return (li / mu * (1 - np.exp(-mu * tau)) * E1 + np.exp(-mu * tau) * V1
            + c1 * k + (El1 - li) * E1 * k + np.exp(-mu * tau) * E1**2 - Et * E1)


def _minf_scalar(m, t):
    mu = _minf_mu(m)
    p, A, g, li, l0, theta = _setup(m)
    return (np.array([_hyper_mean_i(li, l0, g, 1.0, mu, t)]),
            np.array([_hyper_cov_lq_i(p, li, 1.0, mu, t)]),
            np.array([[_hyper_var_i(p, li, 1.0, mu, t)]]))


def _minf_autocov_printed(m, t, tau):
    """Literal transcription of the explicit single-phase autocovariance."""
    if not (t >= tau >= 0):
        return 0.0
    mu = _minf_mu(m)
    p = m.arrivals
    a, b, l0 = p.jump, p.decay, p.initial_intensity
    g = p.gap
    li = lambda_inf(p)
    d = l0 - li
    u = t - tau
    E = np.exp
    if not _near(mu, g):
        Eu = li / mu * (1 - E(-mu * u)) + d / (mu - g) * (E(-g * u) - E(-mu * u))
        Et = li / mu * (1 - E(-mu * t)) + d / (mu - g) * (E(-g * t) - E(-mu * t))
        if _near(2 * mu, g):
            h = u * E(-2 * mu * u)
        else:
            h = (E(-g * u) - E(-2 * mu * u)) / (2 * mu - g)
        k = (E(-g * tau) - E(-mu * tau)) / (mu - g)
        return (li / mu * (1 - E(-mu * tau)) * Eu
                + li / mu * (E(-mu * tau) - E(-mu * t))
                + a * (2 * b - a) * li / (2 * mu * g * (mu + g)) * (E(-mu * tau) - E(-mu * (2 * t - tau)))
                - (a * (2 * b - a) * li / (g * (mu + g)) + 2 * a * b * d / (mu * g)
                   - a**2 * (2 * l0 - li) / (g * (mu - g)))
                * (E(-(mu + g) * t + g * tau) - E(-mu * (2 * t - tau))) / (mu - g)
                + (d + mu * d / (mu - g) + 2 * a * b * d / (mu * g)) * h * E(-mu * tau)
                - a**2 * (2 * l0 - li) / (2 * g * (mu - g)**2)
                * (E(-2 * g * t - (mu - 2 * g) * tau) - E(-mu * (2 * t - tau)))
                - d / (mu - g) * (E(-mu * t) - E(-mu * (2 * t - tau)))
                + E(-mu * tau) * Eu**2
                + k * (a * (2 * b - a) * li / (2 * g * (mu + g)) * (1 - E(-(mu + g) * u))
                       + a * b * d / (mu * g) * (E(-g * u) - E(-(mu + g) * u))
                       - a**2 * (2 * l0 - li) / (2 * g * (mu - g)) * (E(-2 * g * u) - E(-(mu + g) * u)))
                + d * k * (d / (mu - g) * (E(-2 * g * u) - E(-(mu + g) * u))
                           + li / mu * (E(-g * u) - E(-(mu + g) * u)))
                - Et * Eu)
    Eu = li / mu * (1 - E(-mu * u)) + d * u * E(-mu * u)
    Et = li / mu * (1 - E(-mu * t)) + d * t * E(-mu * t)
    return (li / mu * (1 - E(-mu * tau)) * Eu
            + li / mu * (E(-mu * tau) - E(-mu * t))
            + a * (2 * b - a) * li / (4 * mu**3) * (E(-mu * tau) - E(-mu * (2 * t - tau)))
            - (a * (2 * b - a) * li / (2 * mu**2) + 2 * a * b * d / mu**2) * u * E(-mu * (2 * t - tau))
            + (d + 2 * a * b * d / mu**2) * (E(-g * t - (mu - g) * tau) - E(-mu * (2 * t - tau))) / mu
            - a**2 * (2 * l0 - li) / (2 * mu) * u**2 * E(-mu * (2 * t - tau))
            + d * (u * E(-mu * t) / mu + (E(-mu * (2 * t - tau)) - E(-mu * t)) / mu**2)
            + E(-mu * tau) * Eu**2
            + (a * (2 * mu + a) * li / (4 * mu**2) * (1 - E(-2 * mu * u))
               + a * b * d / mu**2 * (E(-mu * u) - E(-2 * mu * u))
               - a**2 * (2 * l0 - li) / (2 * mu) * u * E(-2 * mu * u)) * tau * E(-mu * tau)
            + tau * d * E(-mu * t) * Eu
            - Et * Eu)
