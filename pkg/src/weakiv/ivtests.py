"""Weak-instrument-robust and classical tests for a subvector ``beta``.

Every statistic is computed from ``data.moments``.  A candidate residual
``u = y - X b - W g`` is the linear combination ``A c`` of the stacked data
``A = [y X W]`` with ``c = (1, -b, -g)``, so ``u' M_Z u = c' mgram c`` and
``Q' u = zA c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy import stats

from . import clr_cdf
from .dataset import RANK_TOL, IVDataset, Moments, residualize
from .errors import ConfigError, DomainError, OptimizationError, UnsupportedError
from .kclass import kappa_liml_moments, kclass_coef, kclass_moments, pencil_eigvals, resolve_kappa
from .optimize import minimize_multistart

S_MIN_CLAMP = -1e-8


@dataclass(frozen=True)
class Chi2:
    df: int

    def cdf(self, x: float) -> float:
        return float(stats.chi2.cdf(x, self.df)) if self.df > 0 else 1.0

    def sf(self, x: float) -> float:
        return float(stats.chi2.sf(x, self.df)) if self.df > 0 else 1.0 * (x <= 0)

    def __str__(self) -> str:
        return f"chi2({self.df})"


@dataclass(frozen=True)
class TestResult:
    """Statistic, reference distribution, upper-tail p-value and diagnostics."""

    __test__ = False

    statistic: float
    dist: Any
    p_value: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "dist": str(self.dist),
            "p_value": self.p_value,
            "diagnostics": _jsonable(self.diagnostics),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _result(statistic: float, dist, **diagnostics) -> TestResult:
    statistic = max(float(statistic), 0.0)
    p = min(max(dist.sf(statistic), 0.0), 1.0)
    return TestResult(statistic, dist, p, diagnostics)


def _beta(mom: Moments, beta0) -> np.ndarray:
    beta0 = np.atleast_1d(np.asarray(beta0, dtype=float)).ravel()
    if beta0.size != mom.mx:
        raise ConfigError(f"beta0 has length {beta0.size}, expected {mom.mx}")
    return beta0


def _require_overidentified(mom: Moments) -> None:
    if mom.k < mom.m:
        raise ConfigError(
            f"order condition fails: {mom.k} instruments for {mom.m} endogenous columns"
        )
    if mom.n <= mom.k:
        raise ConfigError(f"need n > k, got n={mom.n}, k={mom.k}")


def _coefficients(mom: Moments, beta0, gamma) -> np.ndarray:
    return np.concatenate([[1.0], -beta0, -np.asarray(gamma, dtype=float)])


def _u_block(mom: Moments, beta0) -> np.ndarray:
    """Map from ``[y X W]`` coefficients to the ``[y - X beta0, W]`` system."""
    T = np.zeros((1 + mom.m, 1 + mom.mw))
    T[0, 0] = 1.0
    T[mom.ix, 0] = -beta0
    T[mom.iw, 1:] = np.eye(mom.mw)
    return T


def ar_inner(mom: Moments, beta0) -> tuple[float, np.ndarray]:
    """``min_gamma u'P_Z u / u'M_Z u`` and its minimizer (inner LIML).

    The minimum is the smallest eigenvalue of the ``[y - X beta0, W]``
    pencil, i.e. ``kappa_LIML - 1`` of that system.
    """
    T = _u_block(mom, beta0)
    P = T.T @ mom.pgram @ T
    M = T.T @ mom.mgram @ T
    if mom.mw == 0:
        if M[0, 0] <= 0:
            raise DomainError("y - X beta0 lies in the span of the instruments")
        return float(P[0, 0] / M[0, 0]), np.zeros(0)
    mu = float(pencil_eigvals(P, M)[0])
    G = P + (1.0 - (1.0 + mu)) * M
    gamma = np.linalg.solve(G[1:, 1:], G[1:, 0])
    return mu, gamma


def _j_liml(mom: Moments) -> float:
    return (mom.n - mom.k) * (kappa_liml_moments(mom) - 1.0)


def ar_test(data: IVDataset, beta0) -> TestResult:
    """Subvector Anderson-Rubin test, ``(k - mw) AR(beta0)`` against chi2(k - mw)."""
    return _ar(data.moments, beta0)


def _ar(mom: Moments, beta0) -> TestResult:
    _require_overidentified(mom)
    beta0 = _beta(mom, beta0)
    mu, gamma = ar_inner(mom, beta0)
    return _result((mom.n - mom.k) * mu, Chi2(mom.k - mom.mw), gamma_liml=gamma)


def lr_test(data: IVDataset, beta0) -> TestResult:
    """Likelihood-ratio test, ``(k - mw)(AR(beta0) - min_b AR(b))`` against chi2(mx)."""
    return _lr(data.moments, beta0)


def _lr(mom: Moments, beta0) -> TestResult:
    _require_overidentified(mom)
    beta0 = _beta(mom, beta0)
    mu, gamma = ar_inner(mom, beta0)
    j_liml = _j_liml(mom)
    stat = (mom.n - mom.k) * mu - j_liml
    return _result(stat, Chi2(mom.mx), j_liml=j_liml, gamma_liml=gamma)


def wald_test(data: IVDataset, beta0, estimator="tsls") -> TestResult:
    """Wald test based on the k-class estimator (``tsls``, ``liml`` or a kappa)."""
    return _wald(data.moments, beta0, resolve_kappa(data, estimator))


def _wald(mom: Moments, beta0, kappa: float) -> TestResult:
    beta0 = _beta(mom, beta0)
    fit = kclass_moments(mom, kappa)
    diff = beta0 - fit.coef[: mom.mx]
    block = fit.cov_scale[: mom.mx, : mom.mx]
    stat = float(diff @ np.linalg.solve(block, diff)) / fit.sigma2_wald
    return _result(stat, Chi2(mom.mx), kappa=fit.kappa, estimate=fit.coef[: mom.mx])


def _projected_ratio(mom: Moments, c: np.ndarray) -> float:
    """``u' P_{P_Z S~} u / u' M_Z u`` for ``u = A c``, with ``S~`` as in the LM test."""
    mz = float(c @ mom.mgram @ c)
    if mz <= 0:
        return np.inf
    zu = mom.zA @ c
    s = mom.iS
    zS = mom.zA[:, s] - np.outer(zu, (c @ mom.mgram[:, s]) / mz)
    coef, *_ = np.linalg.lstsq(zS, zu, rcond=RANK_TOL)
    fitted = zS @ coef
    return float(fitted @ fitted) / mz


def lm_objective(mom: Moments, beta0):
    """``gamma -> (n - k) u' P_{P_Z S~(beta0, gamma)} u / u' M_Z u``."""
    beta0 = _beta(mom, beta0)
    scale = mom.n - mom.k

    def objective(gamma):
        return scale * _projected_ratio(mom, _coefficients(mom, beta0, gamma))

    return objective


def _lm_kleibergen(mom: Moments, beta0) -> float:
    """Kleibergen's LM statistic (no nuisance endogenous columns)."""
    c = _coefficients(mom, beta0, np.zeros(0))
    return (mom.n - mom.k) * _projected_ratio(mom, c)


def lm_test(data: IVDataset, beta0, extra_starts=(), tol: float = 1e-8, max_iter: int = 500) -> TestResult:
    """Subvector Lagrange multiplier test against chi2(mx).

    For ``mw > 0`` the statistic minimizes the projected quotient over
    ``gamma`` with BFGS from two starts: the LIML of ``y - X beta0`` on
    ``W`` and zero.  Raises ``OptimizationError`` if no start converges.
    """
    return _lm(data.moments, beta0, extra_starts, tol, max_iter)


def _lm(mom: Moments, beta0, extra_starts=(), tol=1e-8, max_iter=500) -> TestResult:
    _require_overidentified(mom)
    beta0 = _beta(mom, beta0)
    if mom.mw == 0:
        return _result(_lm_kleibergen(mom, beta0), Chi2(mom.mx))
    _, gamma_liml = ar_inner(mom, beta0)
    starts = [gamma_liml, np.zeros(mom.mw), *[np.asarray(s, float) for s in extra_starts]]
    report = minimize_multistart(lm_objective(mom, beta0), starts, tol=tol, max_iter=max_iter)
    if not report.converged:
        raise OptimizationError(
            f"LM minimization did not converge from any start (best value {report.value:.6g})",
            report.value,
        )
    return _result(
        report.value,
        Chi2(mom.mx),
        gamma_star=report.argmin,
        gamma_liml=gamma_liml,
        starts=[
            {"start": r.start, "converged": r.converged, "value": r.value}
            for r in report.starts
        ],
        tol=tol,
        max_iter=max_iter,
    )


def lm_test_plugin(data: IVDataset, beta0) -> TestResult:
    """LM statistic with ``gamma`` fixed at the inner LIML (size-distorted)."""
    return _lm_plugin(data.moments, beta0)


def _lm_plugin(mom: Moments, beta0) -> TestResult:
    _require_overidentified(mom)
    beta0 = _beta(mom, beta0)
    _, gamma_liml = ar_inner(mom, beta0)
    stat = lm_objective(mom, beta0)(gamma_liml)
    return _result(stat, Chi2(mom.mx), gamma_liml=gamma_liml)


def s_min(mom: Moments, beta0) -> float:
    """Conditioning statistic of the CLR test at ``beta0``, clamped at zero.

    Without nuisance endogenous columns this is ``(n - k)`` times the
    smallest eigenvalue of the ``X~(beta0)`` pencil.  Otherwise it is
    ``(n - k)(lambda_1 + lambda_2 - mu(beta0))`` with ``lambda_1, lambda_2``
    the two smallest eigenvalues of the ``[y X W]`` pencil and ``mu`` the
    inner minimum of the AR quotient.
    """
    beta0 = _beta(mom, beta0)
    scale = mom.n - mom.k
    if mom.mw == 0:
        value = scale * _xtilde_eig(mom, beta0, mom.pgram)
    else:
        lam = pencil_eigvals(mom.pgram, mom.mgram, mom.exog)
        mu, _ = ar_inner(mom, beta0)
        value = scale * (lam[0] + lam[1] - mu)
    if value < S_MIN_CLAMP:
        raise DomainError(f"s_min = {value:.3g} is negative beyond rounding")
    return max(float(value), 0.0)


def _xtilde_eig(mom: Moments, beta0, pgram: np.ndarray) -> float:
    """Smallest eigenvalue of ``(X~' M X~)^{-1} X~' P X~`` with ``P`` given by ``pgram``."""
    c = _coefficients(mom, beta0, np.zeros(mom.mw))
    mz = float(c @ mom.mgram @ c)
    T = np.zeros((1 + mom.m, mom.mx))
    T[mom.ix, :] = np.eye(mom.mx)
    T -= np.outer(c, (c @ mom.mgram[:, mom.ix]) / mz)
    return float(pencil_eigvals(T.T @ pgram @ T, T.T @ mom.mgram @ T)[0])


def clr_test(data: IVDataset, beta0) -> TestResult:
    """Conditional likelihood-ratio test, LR(beta0) against Gamma(k - mw, mx, s_min).

    With ``mw > 0`` the conditioning statistic follows a conjectured
    extension; the diagnostics carry a note saying so.
    """
    return _clr(data.moments, beta0)


def _clr(mom: Moments, beta0) -> TestResult:
    lr = _lr(mom, beta0)
    s = s_min(mom, beta0)
    dist = clr_cdf.GammaCVF(mom.k - mom.mw, mom.mx, s)
    diagnostics = {"s_min": s, "j_liml": lr.diagnostics["j_liml"]}
    if mom.mw > 0:
        diagnostics["note"] = "conjectural calibration for nuisance endogenous columns"
        if mom.mx > 1:
            diagnostics["note"] += "; conditioning statistic stated for a scalar beta"
    return _result(lr.statistic, dist, **diagnostics)


def rank_test(data: IVDataset, r: int = 1) -> TestResult:
    """Anderson's test of ``rank(Pi) <= m - r`` for the first stage of ``S = [X W]``.

    The statistic sums the ``r`` smallest eigenvalues of
    ``(n - k)(S' M_Z S)^{-1} S' P_Z S`` and is referred to chi2(r(k - m + r)).
    """
    return _rank(data.moments, r)


def _rank(mom: Moments, r: int = 1) -> TestResult:
    if mom.m == 0:
        raise ConfigError("rank test needs at least one endogenous column")
    if not 1 <= r <= mom.m:
        raise ConfigError(f"r must lie in [1, {mom.m}], got {r}")
    s = mom.iS
    lam = pencil_eigvals(mom.pgram[s, s], mom.mgram[s, s], mom.exog[s])
    stat = (mom.n - mom.k) * float(np.sum(lam[:r]))
    return _result(stat, Chi2(r * (mom.k - mom.m + r)), eigenvalues=lam)


def j_statistic(data: IVDataset) -> TestResult:
    """Overidentification statistic ``k AR(beta_TSLS)`` against chi2(k - m)."""
    mom = data.moments
    if mom.k == mom.m:
        return TestResult(0.0, Chi2(0), 1.0, {"note": "just-identified"})
    _require_overidentified(mom)
    coef = kclass_coef(mom, 1.0)
    c = np.concatenate([[1.0], -coef])
    stat = (mom.n - mom.k) * float(np.sum((mom.zA @ c) ** 2)) / float(c @ mom.mgram @ c)
    return _result(stat, Chi2(mom.k - mom.m))


def j_liml(data: IVDataset) -> TestResult:
    """``J_LIML = (n - k)(kappa_LIML - 1)`` against chi2(k - m)."""
    mom = data.moments
    if mom.k == mom.m:
        return TestResult(0.0, Chi2(0), 1.0, {"note": "just-identified"})
    _require_overidentified(mom)
    return _result(_j_liml(mom), Chi2(mom.k - mom.m))


_DISPATCH = {
    "ar": lambda mom, b: _ar(mom, b),
    "lr": lambda mom, b: _lr(mom, b),
    "clr": lambda mom, b: _clr(mom, b),
    "lm": lambda mom, b: _lm(mom, b),
    "lm_plugin": lambda mom, b: _lm_plugin(mom, b),
    "wald_tsls": lambda mom, b: _wald(mom, b, 1.0),
    "wald_liml": lambda mom, b: _wald(mom, b, kappa_liml_moments(mom)),
}
TEST_KINDS = tuple(_DISPATCH)


def run_test(data: IVDataset, kind: str, beta0) -> TestResult:
    """Dispatch on a test name from ``TEST_KINDS``."""
    kind = kind.replace("-", "_").lower()
    if kind == "wald":
        kind = "wald_tsls"
    if kind not in _DISPATCH:
        raise ConfigError(f"unknown test {kind!r}; expected one of {TEST_KINDS}")
    return _DISPATCH[kind](data.moments, beta0)


def test_with_exogenous_of_interest(data: IVDataset, beta0, delta0, test: str) -> TestResult:
    """Joint test of ``(beta, delta) = (beta0, delta0)`` for exogenous ``D``.

    ``D`` is appended to both the endogenous columns of interest and the
    instruments.  The CLR test uses the limit ``chi2(md) + Gamma(k - mx,
    mx, s_min)`` where ``s_min`` partials ``D`` out of the instruments; it
    is available only without nuisance endogenous columns.
    """
    data = residualize(data)
    kind = test.replace("-", "_").lower()
    if data.md == 0:
        return run_test(data, kind, beta0)
    beta0 = np.atleast_1d(np.asarray(beta0, dtype=float)).ravel()
    delta0 = np.atleast_1d(np.asarray(delta0, dtype=float)).ravel()
    if beta0.size != data.mx or delta0.size != data.md:
        raise ConfigError(
            f"beta0/delta0 lengths {beta0.size}/{delta0.size} do not match mx={data.mx}, md={data.md}"
        )
    augmented = replace(
        data,
        X=np.column_stack([data.X, data.D]),
        Z=np.column_stack([data.Z, data.D]),
        D=None,
        names={},
    )
    joint = np.concatenate([beta0, delta0])
    if kind != "clr":
        return run_test(augmented, kind, joint)
    if data.mw > 0:
        raise UnsupportedError(
            "CLR with both nuisance endogenous and exogenous-of-interest columns is not supported"
        )
    if data.mx == 0:
        raise UnsupportedError("CLR with exogenous columns needs at least one endogenous column")
    mom = augmented.moments
    lr = _lr(mom, joint)
    s = _exog_s_min(mom, joint, data.mx)
    dist = clr_cdf.GammaCVFPlusChi2(data.k, data.mx, s, data.md)
    return _result(lr.statistic, dist, s_min=s, j_liml=lr.diagnostics["j_liml"])


test_with_exogenous_of_interest.__test__ = False


def _exog_s_min(mom: Moments, joint: np.ndarray, mx: int) -> float:
    """``(n - k - md) lambda_min`` of ``X~`` with ``P_{M_D Z}`` in the numerator."""
    d = np.zeros(1 + mom.m, dtype=bool)
    d[1 + mx : 1 + mom.mx] = True
    # P_{M_D Z} = P_{[Z, D]} - P_D; the P_D Gram follows from the D rows of pgram
    Pg = mom.pgram
    pd = Pg[:, d] @ np.linalg.pinv(Pg[np.ix_(d, d)], rcond=RANK_TOL) @ Pg[d, :]
    c = _coefficients(mom, joint, np.zeros(mom.mw))
    mz = float(c @ mom.mgram @ c)
    T = np.zeros((1 + mom.m, mx))
    T[1 : 1 + mx, :] = np.eye(mx)
    T -= np.outer(c, (c @ mom.mgram[:, 1 : 1 + mx]) / mz)
    lam = pencil_eigvals(T.T @ (Pg - pd) @ T, T.T @ mom.mgram @ T)[0]
    value = (mom.n - mom.k) * float(lam)
    if value < S_MIN_CLAMP:
        raise DomainError(f"s_min = {value:.3g} is negative beyond rounding")
    return max(value, 0.0)
