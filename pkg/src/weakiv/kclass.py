"""k-class estimation: OLS, TSLS, LIML, Fuller and arbitrary kappa.

The k-class estimator minimizes ``(y - S b)' (Id - kappa M_Z) (y - S b)``
with ``S = [X W]``.  Since ``Id - kappa M_Z = P_Z + (1 - kappa) M_Z`` every
quantity is a function of the Gram matrices held by ``Moments``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dataset import RANK_TOL, IVDataset, Moments
from .errors import ConfigError, ConvexityError, RankError


def pencil_eigvals(P: np.ndarray, M: np.ndarray, exog=None) -> np.ndarray:
    """Ascending eigenvalues of ``M^{-1} P`` for symmetric ``P`` and ``M``.

    The Rayleigh quotient is infinite along null directions of ``M``;
    minimizing over them leaves the Schur complement of ``P``, and each
    such direction contributes an eigenvalue ``inf`` at the end of the
    result.  Columns flagged in ``exog`` have a zero row in ``M`` and are
    removed this way first.  Null combinations of the remaining columns are
    detected on the diagonally equilibrated ``M`` (relative threshold
    ``RANK_TOL``).  Otherwise the symmetric-definite problem goes to a
    Cholesky-based solver.
    """
    P = 0.5 * (P + P.T)
    M = 0.5 * (M + M.T)
    n_inf = 0
    if exog is not None and np.any(exog):
        keep = ~np.asarray(exog)
        n_inf = int(np.sum(~keep))
        P = _schur(P, keep)
        M = M[np.ix_(keep, keep)]
    if P.shape[0] == 0:
        return np.full(n_inf, np.inf)
    d = np.sqrt(np.diag(M))
    if np.any(d <= 0):
        raise RankError(
            "the annihilated data matrix must be of full column rank (a column lies in span(Z))"
        )
    Ps = P / np.outer(d, d)
    Ms = M / np.outer(d, d)
    w, V = np.linalg.eigh(Ms)
    null = w <= RANK_TOL * w.max()
    lam = None
    if not np.any(null):
        try:
            lam = scipy.linalg.eigh(Ps, Ms, eigvals_only=True)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            pass
    if lam is None:
        # whiten the range of M, keep its null space as is
        T = np.column_stack([V[:, ~null] / np.sqrt(w[~null]), V[:, null]])
        lam = np.linalg.eigvalsh(_schur(T.T @ Ps @ T, ~np.r_[null[~null], null[null]]))
        n_inf += int(np.sum(null))
    return np.concatenate([np.sort(lam), np.full(n_inf, np.inf)])


def _schur(P: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Schur complement of ``P`` onto ``keep`` (minimizing over the rest)."""
    drop = ~keep
    if not np.any(drop):
        return P
    Pkd = P[np.ix_(keep, drop)]
    S = P[np.ix_(keep, keep)] - Pkd @ np.linalg.pinv(P[np.ix_(drop, drop)], rcond=RANK_TOL) @ Pkd.T
    return 0.5 * (S + S.T)


def _check_liml_rank(mom: Moments) -> None:
    if not mom.mz_full_rank:
        raise RankError(
            "LIML requires that M_Z [y X W] is of full column rank "
            "(up to exogenous columns contained in the instruments)"
        )


def kappa_liml_moments(mom: Moments) -> float:
    _check_liml_rank(mom)
    lam = pencil_eigvals(mom.pgram, mom.mgram, mom.exog)
    return 1.0 + float(lam[0])


def convexity_threshold(mom: Moments) -> float:
    """``1 + lambda_min((S' M_Z S)^{-1} S' P_Z S)``; k-class is defined below it."""
    s = mom.iS
    lam = pencil_eigvals(mom.pgram[s, s], mom.mgram[s, s], mom.exog[s])
    return 1.0 + float(lam[0]) if lam.size else np.inf


def kappa_liml(data: IVDataset) -> float:
    """LIML kappa: one plus the smallest eigenvalue of the ``[y S]`` pencil.

    Warns when the smallest eigenvalue of the ``[y S]`` problem coincides
    with that of the ``S`` problem; then the minimum of the
    Anderson-Rubin objective need not be attained.
    """
    mom = data.moments
    kappa = kappa_liml_moments(mom)
    threshold = convexity_threshold(mom)
    if threshold - kappa <= 1e-10 * max(1.0, kappa):
        warnings.warn(
            "kappa_LIML equals the convexity threshold; the LIML minimizer may not be attained",
            RuntimeWarning,
            stacklevel=2,
        )
    return kappa


def kclass_coef(mom: Moments, kappa: float) -> np.ndarray:
    """Solve the k-class normal equations without the convexity check."""
    G = mom.pgram + (1.0 - kappa) * mom.mgram
    s = mom.iS
    return np.linalg.solve(G[s, s], G[s, 0])


def residual_norms(mom: Moments, coef: np.ndarray) -> tuple[float, float]:
    """``(||P_Z r||^2, ||M_Z r||^2)`` for ``r = y - S coef``."""
    c = np.concatenate([[1.0], -np.asarray(coef, dtype=float)])
    pz = float(np.sum((mom.zA @ c) ** 2))
    mz = float(c @ mom.mgram @ c)
    return pz, max(mz, 0.0)


@dataclass(frozen=True, eq=False)
class KClassFit:
    """Result of a k-class fit of ``y`` on ``S = [X W]``.

    ``cov_scale`` is ``(S'(Id - kappa M_Z) S)^{-1}``; the Wald covariance of
    the coefficients is ``sigma2_wald * cov_scale``.
    """

    kappa: float
    coef: np.ndarray
    sigma2_wald: float
    sigma2_mz: float
    cov_scale: np.ndarray
    mx: int

    @property
    def beta(self) -> np.ndarray:
        return self.coef[: self.mx]

    @property
    def gamma(self) -> np.ndarray:
        return self.coef[self.mx :]

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.sigma2_wald * np.diag(self.cov_scale))


def kclass_moments(mom: Moments, kappa: float, check: bool = True) -> KClassFit:
    if mom.m == 0:
        raise ConfigError("k-class estimation needs at least one endogenous column")
    if check:
        threshold = convexity_threshold(mom)
        if kappa >= threshold:
            raise ConvexityError(
                f"k-class objective not convex: kappa={kappa:.12g} >= threshold {threshold:.12g}",
                threshold,
            )
    G = mom.pgram + (1.0 - kappa) * mom.mgram
    s = mom.iS
    Gss = G[s, s]
    coef = np.linalg.solve(Gss, G[s, 0])
    cov = np.linalg.inv(Gss)
    cov = 0.5 * (cov + cov.T)
    pz, mz = residual_norms(mom, coef)
    return KClassFit(
        kappa=float(kappa),
        coef=coef,
        sigma2_wald=(pz + mz) / (mom.n - mom.m),
        sigma2_mz=mz / (mom.n - mom.k),
        cov_scale=cov,
        mx=mom.mx,
    )


def kclass(data: IVDataset, kappa: float) -> KClassFit:
    """k-class estimator with parameter ``kappa``.

    Raises ``ConvexityError`` (carrying the threshold) when ``kappa`` is at
    or above ``1 + lambda_min((S' M_Z S)^{-1} S' P_Z S)``.
    """
    return kclass_moments(data.moments, kappa)


def ols(data: IVDataset) -> KClassFit:
    return kclass(data, 0.0)


def tsls(data: IVDataset) -> KClassFit:
    return kclass(data, 1.0)


def liml(data: IVDataset) -> KClassFit:
    return kclass(data, kappa_liml(data))


def fuller(data: IVDataset, a: float) -> KClassFit:
    """Fuller's modification: ``kappa = kappa_LIML - a / (n - k)``."""
    if a < 0:
        raise ConfigError(f"Fuller constant must be nonnegative, got {a}")
    mom = data.moments
    if mom.n <= mom.k:
        raise ConfigError("Fuller estimator needs n > k")
    return kclass(data, kappa_liml(data) - a / (mom.n - mom.k))


def resolve_kappa(data: IVDataset, estimator) -> float:
    """Map an estimator name (or a number) to its kappa."""
    if isinstance(estimator, str):
        name = estimator.lower()
        if name == "ols":
            return 0.0
        if name == "tsls":
            return 1.0
        if name == "liml":
            return kappa_liml(data)
        if name.startswith("fuller"):
            a = float(name[len("fuller"):].strip("()") or 1.0)
            mom = data.moments
            return kappa_liml(data) - a / (mom.n - mom.k)
        try:
            return float(name)
        except ValueError:
            raise ConfigError(f"unknown estimator {estimator!r}") from None
    return float(estimator)
