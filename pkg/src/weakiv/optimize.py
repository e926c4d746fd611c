"""Multi-start BFGS with central finite-difference gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, OptimizationError

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class StartReport:
    start: np.ndarray
    converged: bool
    value: float
    argmin: np.ndarray
    iterations: int
    skipped: bool = False


@dataclass(frozen=True)
class MinimizeReport:
    """Best point over all starts, plus one ``StartReport`` per start."""

    argmin: np.ndarray
    value: float
    starts: tuple
    tol: float
    max_iter: int

    @property
    def converged(self) -> bool:
        return any(s.converged for s in self.starts)


def fd_gradient(f: Callable, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences with step ``step * (1 + |x_i|)``."""
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (xp[i] - xm[i])
    return g


def bfgs(
    f: Callable,
    x0: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 500,
    fd_step: float = 1e-6,
) -> StartReport:
    """BFGS on the inverse Hessian with a backtracking Armijo line search.

    Converged when ``max|grad| < tol * (1 + |f|)``.  The Armijo test allows
    a few ulps of slack so that progress near the optimum is not blocked by
    rounding in ``f``.
    """
    x = np.array(x0, dtype=float)
    fx = float(f(x))
    best_x, best_f = x.copy(), fx
    g = fd_gradient(f, x, fd_step)
    H = np.eye(x.size)
    first = True
    for it in range(max_iter + 1):
        if np.max(np.abs(g), initial=0.0) < tol * (1.0 + abs(fx)):
            return StartReport(np.asarray(x0, float), True, best_f, best_x, it)
        if it == max_iter:
            break
        p = -H @ g
        slope = float(g @ p)
        if not slope < 0:
            H = np.eye(x.size)
            p, slope = -g, -float(g @ g)
        slack = 16 * _EPS * abs(fx)
        t, accepted = 1.0, False
        for _ in range(60):
            x_new = x + t * p
            f_new = float(f(x_new))
            if np.isfinite(f_new) and f_new <= fx + 1e-4 * t * slope + slack:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if not np.allclose(H, np.eye(x.size)):
                H = np.eye(x.size)
                first = True
                continue
            break
        g_new = fd_gradient(f, x_new, fd_step)
        s, yv = x_new - x, g_new - g
        x, fx, g = x_new, f_new, g_new
        if fx < best_f:
            best_x, best_f = x.copy(), fx
        sy = float(s @ yv)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if first:
                H = np.eye(x.size) * (sy / float(yv @ yv))
                first = False
            rho = 1.0 / sy
            V = np.eye(x.size) - rho * np.outer(s, yv)
            H = V @ H @ V.T + rho * np.outer(s, s)
        if np.linalg.norm(s) <= 4 * _EPS * (1.0 + np.linalg.norm(x)):
            break
    return StartReport(np.asarray(x0, float), False, best_f, best_x, it)


def minimize_multistart(
    objective: Callable,
    starts: Sequence,
    tol: float = 1e-8,
    max_iter: int = 500,
    fd_step: float = 1e-6,
) -> MinimizeReport:
    """Run ``bfgs`` from every start and keep the lowest terminal value.

    Starts at which the objective is not finite are skipped.  Raises
    ``OptimizationError`` only when every start is skipped.
    """
    if len(starts) == 0:
        raise ConfigError("at least one start is required")
    reports = []
    for x0 in starts:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        f0 = float(objective(x0))
        if not np.isfinite(f0):
            reports.append(StartReport(x0, False, np.inf, x0, 0, skipped=True))
            continue
        reports.append(bfgs(objective, x0, tol, max_iter, fd_step))
    live = [r for r in reports if not r.skipped]
    if not live:
        raise OptimizationError("objective not finite at any start")
    best = min(live, key=lambda r: r.value)
    return MinimizeReport(best.argmin, best.value, tuple(reports), tol, max_iter)
