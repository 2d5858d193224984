"""Dense matrix calculus for the phase-type moment formulas.

The matrix exponential itself is delegated to ``scipy.linalg.expm``
(scaling and squaring with a Pade approximant). Everything else here is the
structured-integral toolkit built on top of it.
"""

from math import factorial, comb

import numpy as np
import scipy.linalg as sla
from scipy.integrate import quad_vec

from .errors import NonSquare, SingularMatrix, SingularShiftedMatrix, NonHurwitz

MAX_PHASES = 64
SINGULAR_RTOL = 1e-12
COMMUTE_TOL = 1e-12


def as_square(A, name="A"):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NonSquare(f"{name} must be square, got shape {A.shape}")
    if A.shape[0] > MAX_PHASES:
        raise NonSquare(f"{name} has {A.shape[0]} rows; at most {MAX_PHASES} supported")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def is_singular(A):
    """True when the smallest singular value is below 1e-12 (1 + largest)."""
    sv = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return sv[-1] < SINGULAR_RTOL * (1.0 + sv[0])


def checked_inv(A, exc=SingularMatrix, what="matrix"):
    if is_singular(A):
        raise exc(f"{what} is numerically singular")
    return np.linalg.inv(A)


def erlang_subdiagonal(n):
    """n x n matrix with ones on the first subdiagonal (nilpotent)."""
    return np.eye(n, k=-1)


def basis(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def expm(A):
    A = as_square(A)
    return sla.expm(A)


def integrate_expm(L, t):
    """Integral of e^{Ls} over [0, t], computed as L^{-1}(e^{Lt} - I)."""
    L = as_square(L, "L")
    Linv = checked_inv(L, SingularMatrix, "L")
    return Linv @ (expm(L * t) - np.eye(L.shape[0]))


def integral_poly_exp(L, nu, eta, gamma, t):
    """Integral of e^{Ls} nu s^eta e^{gamma s} over [0, t] by the finite sum
    obtained from repeated integration by parts."""
    L = as_square(L, "L")
    nu = np.asarray(nu, dtype=float)
    n = L.shape[0]
    R = checked_inv(L + gamma * np.eye(n), SingularShiftedMatrix, "L + gamma I")
    head = expm(L * t) @ nu * np.exp(gamma * t)
    out = np.zeros(n)
    Rk = R.copy()
    for k in range(eta + 1):
        coef = factorial(eta) / factorial(eta - k) * (-1) ** k * t ** (eta - k)
        out += coef * (Rk @ head)
        if k < eta:
            Rk = Rk @ R
    out -= factorial(eta) * (-1) ** eta * (Rk @ nu)
    return out


def solve_linear_ode(L, terms, g0, t):
    """Explicit solution of g' = -L g + sum_i nu_i t^eta_i e^{gamma_i t}.

    ``terms`` is a sequence of (nu, eta, gamma) triples.
    """
    L = as_square(L, "L")
    n = L.shape[0]
    E = expm(-L * t)
    g = E @ np.asarray(g0, dtype=float)
    for nu, eta, gamma in terms:
        nu = np.asarray(nu, dtype=float)
        R = checked_inv(L + gamma * np.eye(n), SingularShiftedMatrix, "L + gamma I")
        Rk = R.copy()
        for k in range(eta + 1):
            coef = factorial(eta) * (-1) ** k / factorial(eta - k)
            g += coef * t ** (eta - k) * np.exp(gamma * t) * (Rk @ nu)
            if k < eta:
                Rk = Rk @ R
        g -= factorial(eta) * (-1) ** eta * (Rk @ (E @ nu))
    return g


def _m_integrand(gamma, nu, L):
    LT = L.T

    def f(s):
        y = expm(-LT * s) @ nu
        return np.exp(gamma * s) * np.outer(y, y)

    return f


def m_matrix(gamma, nu, L, t, method="auto", tol=1e-10):
    """M_{gamma,nu,L}(t) = int_0^t e^{(gamma I - L^T)s} nu nu^T e^{-Ls} ds.

    method:
      "auto"   closed form when L commutes with nu nu^T, quadrature otherwise
      "quad"   adaptive Gauss-Kronrod quadrature of the matrix integrand
      "block"  exact block-triangular exponential (Van Loan)
      "series" the element-wise double power series (secondary check)
    """
    L = as_square(L, "L")
    nu = np.asarray(nu, dtype=float)
    n = L.shape[0]
    if t == 0:
        return np.zeros((n, n))
    P = np.outer(nu, nu)
    if method == "auto":
        if np.linalg.norm(L @ P - P @ L) < COMMUTE_TOL and nu.any():
            # nu is then a common eigenvector of L and L^T
            lam = float(nu @ L @ nu) / float(nu @ nu)
            r = gamma - 2.0 * lam
            if abs(r) * t < 1e-12:
                return t * P
            return np.expm1(r * t) / r * P
        method = "quad"
    if method == "quad":
        val, _ = quad_vec(_m_integrand(gamma, nu, L), 0.0, t, epsabs=tol, epsrel=tol)
        return 0.5 * (val + val.T)
    if method == "block":
        F = gamma * np.eye(n) - L.T
        Z = np.zeros((2 * n, 2 * n))
        Z[:n, :n] = -F
        Z[:n, n:] = P
        Z[n:, n:] = -L
        E = expm(Z * t)
        val = expm(F * t) @ E[:n, n:]
        return 0.5 * (val + val.T)
    if method == "series":
        return _m_matrix_series(gamma, nu, L, t)
    raise ValueError(f"unknown method {method!r}")


def m_matrix_conj(gamma, nu, L, t, method="quad", tol=1e-11):
    """e^{L^T t} M_{gamma,nu,L}(t) e^{L t}, evaluated without forming M.

    Equal to the integral of e^{gamma (t-u)} y(u) y(u)^T over [0, t] with
    y(u) = e^{L^T u} nu. For a Hurwitz L the integrand decays, whereas M
    itself grows like e^{-2 Re(L) t}, so this is the well-conditioned way to
    evaluate the conjugated product that appears in the covariance formulas.

    method "quad" uses adaptive quadrature; "sylvester" solves the
    Kronecker system L^T X + X (L - gamma I) = e^{L^T t} nu nu^T e^{(L - gamma I) t} - nu nu^T
    and rescales, valid when no eigenvalue sum of L^T and L - gamma I vanishes.
    """
    L = as_square(L, "L")
    nu = np.asarray(nu, dtype=float)
    n = L.shape[0]
    if t == 0:
        return np.zeros((n, n))
    if method == "quad":
        LT = L.T

        def f(u):
            y = expm(LT * u) @ nu
            return np.exp(gamma * (t - u)) * np.outer(y, y)

        scale = max(1.0, float(nu @ nu) * max(1.0, np.exp(gamma * t)))
        val, _ = quad_vec(f, 0.0, t, epsabs=tol * scale, epsrel=tol)
        return 0.5 * (val + val.T)
    if method == "sylvester":
        I = np.eye(n)
        H = L - gamma * I
        K = np.kron(I, L.T) + np.kron(H.T, I)
        if is_singular(K):
            raise SingularShiftedMatrix("eigenvalue sums vanish; use quadrature")
        P = np.outer(nu, nu)
        rhs = expm(L.T * t) @ P @ expm(H * t) - P
        x = np.linalg.solve(K, rhs.reshape(-1, order="F"))
        X = np.exp(gamma * t) * x.reshape((n, n), order="F")
        return 0.5 * (X + X.T)
    raise ValueError(f"unknown method {method!r}")


def _poly_exp_moment(p, gamma, t):
    # int_0^t s^p e^{gamma s} ds / p!
    if gamma == 0:
        return t ** (p + 1) / factorial(p + 1)
    x = gamma * t
    partial = sum((-x) ** z / factorial(z) for z in range(p + 1))
    return (np.exp(x) * partial - 1.0) * (-1) ** p / gamma ** (p + 1)


def _m_matrix_series(gamma, nu, L, t, rtol=1e-12, max_terms=400):
    # Expanding both exponentials: the (i, j) entry is
    # sum_{r,w} (L^r nu)_i... with coefficient (-1)^{r+w} / (r! w!) int s^{r+w} e^{gamma s}.
    n = L.shape[0]
    # a_r = (L^T)^r nu, so (e^{-L^T s} nu) = sum_r (-s)^r / r! a_r
    a = [nu.astype(float)]
    out = np.zeros((n, n))
    p = 0
    while p < max_terms:
        while len(a) <= p:
            a.append(L.T @ a[-1])
        block = np.zeros((n, n))
        for r in range(p + 1):
            block += comb(p, r) * np.outer(a[r], a[p - r])
        term = (-1) ** p * _poly_exp_moment(p, gamma, t) * block
        out += term
        if p > 4 and np.abs(term).max() <= rtol * max(1.0, np.abs(out).max()):
            break
        p += 1
    return out


def double_cross_integral(eta, gamma, nu, c, L, t):
    """Closed form of the symmetric double integral built from M_{eta gamma,nu,L}.

    Returns the integral over [0, t] of
        ((eta+1)g I - L^T)^{-1}(e^{(eta g I - L^T)s} - e^{-g s}) c nu nu^T e^{-Ls}
        + its transpose,
    with g = gamma.
    """
    L = as_square(L, "L")
    nu = np.asarray(nu, dtype=float)
    n = L.shape[0]
    I = np.eye(n)
    if t == 0:
        return np.zeros((n, n))
    checked_inv(L, SingularShiftedMatrix, "L")
    A = (eta + 1) * gamma * I - L
    Ainv = checked_inv(A, SingularShiftedMatrix, "(eta+1) gamma I - L")
    # J = int_0^t e^{-(gamma I + L)s} ds from an augmented exponential, so
    # gamma I + L may be singular
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = -(gamma * I + L)
    aug[:n, n:] = I
    J = expm(aug * t)[:n, n:]
    P = np.outer(nu, nu)
    M = m_matrix(eta * gamma, nu, L, t)
    inner = (
        (eta + 2) * gamma * M
        + expm((eta * gamma * I - L.T) * t) @ P @ expm(-L * t)
        - P
        - P @ J @ A
        - A.T @ J.T @ P
    )
    return c * Ainv.T @ inner @ Ainv


def commute_check(A, b, c, tol=1e-10):
    A = as_square(A)
    n = A.shape[0]
    R = checked_inv(c * A + b * np.eye(n), SingularMatrix, "cA + bI")
    E = expm(-A)
    return bool(np.linalg.norm(E @ R - R @ E) < tol)


def solve_lyapunov(A, M):
    """Solve A^T X + X A + M = 0 by a Kronecker-vectorized linear solve."""
    A = as_square(A)
    M = np.asarray(M, dtype=float)
    n = A.shape[0]
    if np.max(np.linalg.eigvals(A).real) >= 0:
        raise NonHurwitz("A has an eigenvalue with nonnegative real part")
    I = np.eye(n)
    # column-major vec: vec(A^T X) = (I kron A^T) vec X, vec(X A) = (A^T kron I) vec X
    K = np.kron(I, A.T) + np.kron(A.T, I)
    x = np.linalg.solve(K, -M.reshape(-1, order="F"))
    X = x.reshape((n, n), order="F")
    return 0.5 * (X + X.T)
