"""Distribution of the conditional likelihood-ratio limit Gamma(q - p, p, lam).

A draw is ``(Q1 + Q2 - lam + sqrt((Q1 + Q2 + lam)^2 - 4 Q1 lam)) / 2`` with
independent ``Q1 ~ chi2(q - p)`` and ``Q2 ~ chi2(p)``.  Its CDF is
``E[F_chi2(q)(z / (1 - a x))]`` over ``x ~ Beta((q - p)/2, p/2)`` with
``a = lam / (z + lam)``.

Two routes are provided:

* ``cdf_quadrature`` (production): the Beta expectation, substituted onto
  ``y = 1 - a x`` and rescaled to the unit interval, integrated with
  QUADPACK's algebraic-endpoint-weight routine.
* ``cdf_series``: the power series in ``a`` with a rigorous truncation bound
  (``series_error_bound``); slow for large ``lam`` and kept for
  cross-validation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import ConfigError, QuadratureError

QUAD_TOL = 1e-8


@dataclass(frozen=True)
class GammaCVF:
    """Parameters of Gamma(q - p, p, lam): total degrees q, p, and lam >= 0."""

    q: int
    p: int
    lam: float

    def __post_init__(self):
        if not (1 <= self.p <= self.q):
            raise ConfigError(f"need 1 <= p <= q, got q={self.q}, p={self.p}")
        if not self.lam >= 0:
            raise ConfigError(f"lam must be nonnegative, got {self.lam}")

    def cdf(self, z: float) -> float:
        return cdf_quadrature(self, z)

    def sf(self, z: float) -> float:
        return 1.0 - cdf_quadrature(self, z)

    def quantile(self, alpha: float) -> float:
        return quantile(self, alpha)

    def __str__(self) -> str:
        return f"gamma_cvf({self.q}, {self.p}, {self.lam:.6g})"


def _a(g: GammaCVF, z: float) -> float:
    return g.lam / (z + g.lam)


def cdf_quadrature(g: GammaCVF, z: float, tol: float = QUAD_TOL) -> float:
    """CDF at ``z`` by adaptive quadrature with endpoint-singular weights.

    With ``alpha = (q - p)/2`` and ``beta = p/2``, substituting
    ``y = 1 - a x`` and then ``y = 1 - a + a t`` turns the Beta expectation
    into ``B(alpha, beta)^{-1} int_0^1 t^{beta-1} (1-t)^{alpha-1}
    P(q/2, z / (2 (1 - a + a t))) dt`` with ``P`` the regularized lower
    incomplete gamma function.
    """
    if z <= 0:
        return 0.0
    a = _a(g, z)
    if a == 0.0:
        return float(special.gammainc(g.q / 2, z / 2))
    if g.q == g.p:
        return float(special.gammainc(g.p / 2, z / 2))
    alpha, beta = (g.q - g.p) / 2, g.p / 2
    half_q, half_z, one_minus_a = g.q / 2, z / 2, 1.0 - a
    bnorm = special.beta(alpha, beta)

    def integrand(t):
        return special.gammainc(half_q, half_z / (one_minus_a + a * t))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, abserr, info = integrate.quad(
            integrand,
            0.0,
            1.0,
            weight="alg",
            wvar=(beta - 1.0, alpha - 1.0),
            epsabs=tol * bnorm,
            epsrel=0.0,
            limit=200,
            full_output=True,
        )[:3]
    achieved = abserr / bnorm
    if achieved > 10 * tol:
        raise QuadratureError(
            f"quadrature reached only {achieved:.3g} (target {tol:.3g})", achieved
        )
    return float(min(max(value / bnorm, 0.0), 1.0))


def _log_coefficients(g: GammaCVF, a: float, J: int) -> np.ndarray:
    """``log((1 - a)^{p/2} a^j (p/2)_j / j!)`` for ``j = 0..J`` by recurrence."""
    j = np.arange(J)
    ratios = np.log(a) + np.log(g.p / 2 + j) - np.log(j + 1.0)
    return (g.p / 2) * np.log1p(-a) + np.concatenate([[0.0], np.cumsum(ratios)])


def series_partial_sums(g: GammaCVF, z: float, J: int) -> np.ndarray:
    """Partial sums of the power series for truncation indices ``0..J``."""
    if J < 0:
        raise ConfigError("J must be nonnegative")
    a = _a(g, z)
    if a == 0.0:
        return np.full(J + 1, float(special.gammainc(g.q / 2, z / 2)))
    j = np.arange(J + 1)
    terms = np.exp(_log_coefficients(g, a, J)) * special.gammainc(
        g.q / 2 + j, (z + g.lam) / 2
    )
    return np.cumsum(terms)


def cdf_series(g: GammaCVF, z: float, J: int) -> float:
    """Power series truncated after index ``J`` (terms use chi2(q + 2j))."""
    return float(series_partial_sums(g, z, J)[-1])


def series_error_bound(g: GammaCVF, z: float, J) -> float | np.ndarray:
    """Upper bound on the error of ``cdf_series(g, z, J)``.

    ``F_chi2(q+2J+2)(z+lam) a^{J+1} (p/2)_{J+1} / (J+1)! (1 + 2/sqrt(-log a))``.
    Accepts an integer or an array of truncation indices.
    """
    if g.lam == 0:
        return np.zeros_like(np.asarray(J, dtype=float)) if np.ndim(J) else 0.0
    a = _a(g, z)
    J1 = np.asarray(J, dtype=float) + 1
    log_coef = (
        J1 * math.log(a)
        + special.gammaln(g.p / 2 + J1)
        - special.gammaln(g.p / 2)
        - special.gammaln(J1 + 1)
    )
    out = (
        special.gammainc(g.q / 2 + J1, (z + g.lam) / 2)
        * np.exp(log_coef)
        * (1 + 2 / math.sqrt(-math.log(a)))
    )
    return float(out) if np.ndim(out) == 0 else out


def series_terms_for(g: GammaCVF, z: float, tol: float, J_max: int = 10**6) -> int:
    """Smallest ``J`` whose error bound is at most ``tol``."""
    if g.lam == 0:
        return 0
    lo, step = 0, 1024
    while True:
        J = np.arange(lo, min(lo + step, J_max + 1))
        if J.size == 0:
            raise QuadratureError(f"error bound above {tol} for all J <= {J_max}")
        hit = np.nonzero(series_error_bound(g, z, J) <= tol)[0]
        if hit.size:
            return int(J[hit[0]])
        lo += step
        step *= 2


def quantile(g: GammaCVF, alpha: float) -> float:
    """The ``1 - alpha`` quantile, bracketed by the chi2(p) and chi2(q) ones."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    hi = float(stats.chi2.isf(alpha, g.q))
    if g.lam == 0 or g.q == g.p:
        return float(stats.chi2.isf(alpha, g.p if g.q == g.p else g.q))
    lo = float(stats.chi2.isf(alpha, g.p))
    target = 1.0 - alpha

    def f(z):
        return cdf_quadrature(g, z, tol=1e-11) - target

    flo, fhi = f(lo), f(hi)
    if flo > 0:
        if flo < 1e-8:
            return lo
        raise QuadratureError("quantile bracket failed at the chi2(p) end", flo)
    if fhi < 0:
        if fhi > -1e-8:
            return hi
        raise QuadratureError("quantile bracket failed at the chi2(q) end", fhi)
    return float(optimize.brentq(f, lo, hi, xtol=1e-12, rtol=1e-13))


@dataclass(frozen=True)
class GammaCVFPlusChi2:
    """Independent sum of Gamma(q - p, p, lam) and chi2(md)."""

    q: int
    p: int
    lam: float
    md: int

    @property
    def gamma(self) -> GammaCVF:
        return GammaCVF(self.q, self.p, self.lam)

    def cdf(self, z: float) -> float:
        if z <= 0:
            return 0.0
        g = self.gamma
        half = self.md / 2
        upper = min(z, float(stats.chi2.isf(1e-9, self.md)))
        log_norm = half * math.log(2.0) + special.gammaln(half)

        def integrand(t):
            return math.exp(-t / 2 - log_norm) * cdf_quadrature(g, z - t)

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            value, abserr = integrate.quad(
                integrand, 0.0, upper, weight="alg", wvar=(half - 1.0, 0.0),
                epsabs=1e-9, limit=200,
            )
        if abserr > 1e-6:
            raise QuadratureError(f"convolution reached only {abserr:.3g}", abserr)
        return float(min(max(value, 0.0), 1.0))

    def sf(self, z: float) -> float:
        return 1.0 - self.cdf(z)

    def __str__(self) -> str:
        return f"gamma_cvf_plus_chi2({self.q}, {self.p}, {self.lam:.6g}, {self.md})"
