"""Dense reference implementations used as test oracles.

Everything here forms explicit n x n projection matrices and calls plain
numpy/scipy routines, so it shares no code path with the package.
"""

import numpy as np
from scipy import optimize

from weakiv import IVDataset


def make_data(seed, n=120, k=4, mx=1, mw=0, strength=1.0, md=0, mc=0,
              intercept=False, beta=None, rho=0.6):
    """Random linear IV instance with Gaussian errors.

    ``strength`` scales the first-stage coefficients; ``rho`` correlates the
    structural error with the first-stage errors (endogeneity).
    """
    rng = np.random.default_rng(seed)
    m = mx + mw
    Z = rng.standard_normal((n, k))
    C = rng.standard_normal((n, mc)) + 1.0
    D = rng.standard_normal((n, md))
    V = rng.standard_normal((n, m))
    eps = rho * V.sum(axis=1) / max(np.sqrt(m), 1.0) + rng.standard_normal(n)
    Pi = rng.standard_normal((k, m)) * strength
    S = Z @ Pi + V + D @ rng.standard_normal((md, m)) + C @ rng.standard_normal((mc, m))
    coef = np.ones(m) if beta is None else np.asarray(beta, float)
    y = S @ coef + D @ np.full(md, 0.5) + C @ np.full(mc, 2.0) + eps + 3.0 * intercept
    return IVDataset(y=y, X=S[:, :mx], W=S[:, mx:], Z=Z, C=C if mc else None,
                     D=D if md else None, intercept_flag=intercept)


def P(A):
    A = np.asarray(A, float)
    return A @ np.linalg.pinv(A)


def M(A):
    return np.eye(np.asarray(A).shape[0]) - P(A)


def kappa_liml(y, S, Z):
    A = np.column_stack([y, S])
    ev = np.linalg.eigvals(np.linalg.solve(A.T @ M(Z) @ A, A.T @ P(Z) @ A))
    return 1.0 + float(np.min(ev.real))


def kclass(y, S, Z, kappa):
    G = np.eye(len(y)) - kappa * M(Z)
    return np.linalg.solve(S.T @ G @ S, S.T @ G @ y)


def ar_ratio(u, Z):
    return float(u @ P(Z) @ u / (u @ M(Z) @ u))


def ar_statistic(y, X, W, Z, beta0):
    """``(n - k) min_gamma`` of the AR ratio; gamma minimized by scalar search when mw = 1."""
    n, k = Z.shape
    u0 = y - X @ np.atleast_1d(beta0)
    if W.shape[1] == 0:
        return (n - k) * ar_ratio(u0, Z)
    if W.shape[1] == 1:
        f = lambda g: ar_ratio(u0 - W[:, 0] * g, Z)
        g0 = np.linalg.lstsq(P(Z) @ W, P(Z) @ u0, rcond=None)[0][0]
        res = optimize.minimize_scalar(f, bracket=(g0 - 1.0, g0 + 1.0), tol=1e-12)
        return (n - k) * min(res.fun, f(g0))
    raise NotImplementedError


def lm_kleibergen(y, X, Z, beta0):
    """Kleibergen's LM: project u onto P_Z X~ with X~ = X - u (u'M_Z X)/(u'M_Z u)."""
    n, k = Z.shape
    u = y - X @ np.atleast_1d(beta0)
    Mz = M(Z)
    Xt = X - np.outer(u, (u @ Mz @ X) / (u @ Mz @ u))
    return (n - k) * float(u @ P(P(Z) @ Xt) @ u / (u @ Mz @ u))


def lm_subvector_objective(y, X, W, Z, beta0, gamma):
    n, k = Z.shape
    u = y - X @ np.atleast_1d(beta0) - W @ np.atleast_1d(gamma)
    Mz = M(Z)
    S = np.column_stack([X, W])
    St = S - np.outer(u, (u @ Mz @ S) / (u @ Mz @ u))
    return (n - k) * float(u @ P(P(Z) @ St) @ u / (u @ Mz @ u))


def rank_eigenvalues(S, Z):
    n, k = Z.shape
    ev = np.linalg.eigvals(np.linalg.solve(S.T @ M(Z) @ S, S.T @ P(Z) @ S)).real
    return (n - k) * np.sort(ev)


def s_min_no_nuisance(y, X, Z, beta0):
    """``(n - k) lambda_min`` of the X~ pencil."""
    n, k = Z.shape
    u = y - X @ np.atleast_1d(beta0)
    Mz = M(Z)
    Xt = X - np.outer(u, (u @ Mz @ X) / (u @ Mz @ u))
    ev = np.linalg.eigvals(np.linalg.solve(Xt.T @ Mz @ Xt, Xt.T @ P(Z) @ Xt)).real
    return (n - k) * float(np.min(ev))


def wald(y, S, Z, kappa, beta0, mx):
    n, m = S.shape
    coef = kclass(y, S, Z, kappa)
    G = np.eye(n) - kappa * M(Z)
    cov = np.linalg.inv(S.T @ G @ S)[:mx, :mx]
    r = y - S @ coef
    sigma2 = float(r @ r) / (n - m)
    d = np.atleast_1d(beta0) - coef[:mx]
    return float(d @ np.linalg.solve(cov, d)) / sigma2


def gamma_cvf_draws(q, p, lam, size, seed):
    """Monte Carlo draws of the CLR limit Gamma(q - p, p, lam)."""
    rng = np.random.default_rng(seed)
    q1 = rng.chisquare(q - p, size) if q > p else np.zeros(size)
    q2 = rng.chisquare(p, size)
    s = q1 + q2
    return 0.5 * (s - lam + np.sqrt((s + lam) ** 2 - 4 * q1 * lam))
