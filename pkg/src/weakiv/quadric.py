"""Confidence sets by test inversion.

Wald, AR and LR sets are quadrics ``{b : (b - center)' A (b - center) <= rhs}``.
For the AR and LR sets, with ``G = Id - kappa M_Z``, minimizing
``(y - S b)' G (y - S b)`` over the nuisance block gives ``A`` as the Schur
complement of the ``W`` block of ``S' G S``, ``center`` as the ``X`` part
of the k-class estimate, and ``rhs = -r' G r`` for the k-class residual
``r``.  Equivalently ``rhs = sigma2(kappa) (critical - k AR(b_k))`` with
``sigma2(kappa) = ||M_Z r||^2 / (n - k)``.  The set is the whole space once
``kappa`` exceeds ``kappa_max``, beyond which the ``W`` block is indefinite.

LM and CLR sets have no closed form and are obtained by grid inversion.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import ivtests
from .dataset import IVDataset, Moments
from .errors import ConfigError, DomainError
from .kclass import kappa_liml_moments, kclass_moments, pencil_eigvals, resolve_kappa

RHS_ROUND = 1e-10


@dataclass(frozen=True, eq=False)
class Quadric:
    """``{b : (b - center)' A (b - center) <= rhs}`` or the whole space."""

    A: np.ndarray
    center: np.ndarray
    rhs: float
    kind: str = "region"
    kappa: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.center.size

    def form(self, beta) -> float:
        d = np.atleast_1d(np.asarray(beta, dtype=float)) - self.center
        return float(d @ self.A @ d)

    def contains(self, beta) -> bool:
        return self.kind == "whole_space" or self.form(beta) <= self.rhs

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "center": self.center.tolist(),
            "rhs": self.rhs,
            "kind": self.kind,
            "kappa": self.kappa,
            "classification": classify(self),
        }


@dataclass(frozen=True)
class ConfidenceSet1D:
    """Sorted disjoint closed intervals; infinite endpoints allowed."""

    pieces: tuple = ()
    flags: tuple = ()

    @property
    def is_empty(self) -> bool:
        return len(self.pieces) == 0

    @property
    def is_bounded(self) -> bool:
        return all(math.isfinite(lo) and math.isfinite(hi) for lo, hi in self.pieces)

    def __contains__(self, beta) -> bool:
        return any(lo <= beta <= hi for lo, hi in self.pieces)

    def to_json(self) -> list:
        def enc(x):
            return None if math.isinf(x) else x

        return [[enc(lo), enc(hi)] for lo, hi in self.pieces]

    def __str__(self) -> str:
        if not self.pieces:
            return "{}"
        return " U ".join(f"[{lo:.6g}, {hi:.6g}]" for lo, hi in self.pieces)


def _critical(df: int, alpha: float) -> float:
    return float(stats.chi2.isf(alpha, df))


def kappa_max(mom: Moments) -> float:
    """Largest kappa for which the ``W`` block of ``S'(Id - kappa M_Z)S`` is PD."""
    if mom.mw == 0:
        return np.inf
    w = mom.iw
    lam = pencil_eigvals(mom.pgram[w, w], mom.mgram[w, w], mom.exog[w])
    return 1.0 + float(lam[0])


def quadric_at(mom: Moments, kappa: float, rhs=None, **diagnostics) -> Quadric:
    """Quadric of the k-class objective at ``kappa``.

    With ``rhs=None`` the right-hand side is ``-r' G r`` (the AR/LR form);
    otherwise the given constant is used (the Wald form).
    """
    kmax = kappa_max(mom)
    if kappa > kmax or (kappa == kmax and rhs is None):
        if kappa == kmax:
            warnings.warn("kappa at the kappa_max boundary; returning the whole space", RuntimeWarning)
        return Quadric(
            np.zeros((mom.mx, mom.mx)), np.zeros(mom.mx), np.inf, "whole_space", kappa,
            dict(diagnostics, kappa_max=kmax),
        )
    G = mom.pgram + (1.0 - kappa) * mom.mgram
    s, x, w = mom.iS, mom.ix, mom.iw
    coef = np.linalg.solve(G[s, s], G[s, 0])
    A = G[x, x]
    if mom.mw:
        A = A - G[x, w] @ np.linalg.solve(G[w, w], G[w, x])
    A = 0.5 * (A + A.T)
    if rhs is None:
        c = np.concatenate([[1.0], -coef])
        pz = float(np.sum((mom.zA @ c) ** 2))
        mz = float(c @ mom.mgram @ c)
        rhs = (kappa - 1.0) * mz - pz
        if -RHS_ROUND * (pz + abs(kappa - 1.0) * mz) < rhs < 0:
            rhs = 0.0
    return Quadric(A, coef[: mom.mx].copy(), float(rhs), "region", float(kappa),
                   dict(diagnostics, kappa_max=kmax))


def invert_closed_form(data: IVDataset, test: str, alpha: float, estimator="tsls") -> Quadric:
    """Closed-form ``1 - alpha`` confidence set for ``beta`` as a quadric.

    ``test`` is ``"ar"``, ``"lr"`` or ``"wald"``; ``estimator`` selects the
    Wald kappa (``"tsls"``, ``"liml"`` or a number).
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    mom = data.moments
    ivtests._require_overidentified(mom)
    test = test.lower()
    if test == "ar":
        crit = _critical(mom.k - mom.mw, alpha)
        return quadric_at(mom, 1.0 + crit / (mom.n - mom.k), critical=crit)
    if test == "lr":
        crit = _critical(mom.mx, alpha)
        return quadric_at(mom, kappa_liml_moments(mom) + crit / (mom.n - mom.k), critical=crit)
    if test == "wald":
        kappa = resolve_kappa(data, estimator)
        fit = kclass_moments(mom, kappa)
        crit = _critical(mom.mx, alpha)
        return quadric_at(mom, kappa, rhs=fit.sigma2_wald * crit, critical=crit,
                          sigma2_wald=fit.sigma2_wald)
    raise ConfigError(f"no closed form for test {test!r}; use grid_invert")


def classify(q: Quadric) -> str:
    """One of ``bounded_nonempty``, ``unbounded``, ``empty``, ``whole_space``."""
    if q.kind == "whole_space":
        return "whole_space"
    eig = np.linalg.eigvalsh(q.A) if q.dim else np.zeros(0)
    if eig.size and eig.min() < 0:
        return "unbounded"
    if eig.size and eig.min() == 0:
        return "unbounded" if q.rhs >= 0 else "empty"
    return "bounded_nonempty" if q.rhs >= 0 else "empty"


@dataclass(frozen=True)
class Boundedness:
    holds: bool
    nonempty: bool
    j_liml: float
    lam: float
    critical: float


def boundedness_condition(data: IVDataset, test: str, alpha: float) -> Boundedness:
    """Whether the AR or LR set is bounded and nonempty, from eigenvalues alone.

    AR: ``J_LIML <= critical < lam``.  LR (always nonempty):
    ``critical < lam - J_LIML``.  ``lam`` is the rank statistic with r = 1.
    """
    mom = data.moments
    j = ivtests._j_liml(mom)
    lam = ivtests._rank(mom, 1).statistic
    test = test.lower()
    if test == "ar":
        crit = _critical(mom.k - mom.mw, alpha)
        nonempty = j <= crit
        return Boundedness(nonempty and crit < lam, nonempty, j, lam, crit)
    if test == "lr":
        crit = _critical(mom.mx, alpha)
        return Boundedness(crit < lam - j, True, j, lam, crit)
    raise ConfigError(f"boundedness condition defined for ar and lr, not {test!r}")


@dataclass(frozen=True)
class LevelMap:
    kappa_ar: float
    alpha_wald: float
    alpha_lr: float


def ar_wald_level_map(data: IVDataset, alpha: float) -> LevelMap:
    """Levels at which the Wald (at ``kappa_AR``) and LR sets equal the AR set.

    ``alpha_wald = 1 - F_chi2(mx)(-s(kappa_AR) / sigma2_wald(kappa_AR))`` with
    ``s(kappa) = r' G r`` the minimized k-class objective, and
    ``alpha_lr = 1 - F_chi2(mx)(critical_AR - J_LIML)``.
    """
    b = boundedness_condition(data, "ar", alpha)
    if not b.j_liml <= b.critical:
        raise DomainError(f"J_LIML = {b.j_liml:.6g} exceeds the AR critical value {b.critical:.6g}")
    if not b.critical < b.lam:
        raise DomainError(f"AR critical value {b.critical:.6g} is not below lambda = {b.lam:.6g}")
    mom = data.moments
    kappa = 1.0 + b.critical / (mom.n - mom.k)
    q = quadric_at(mom, kappa)
    fit = kclass_moments(mom, kappa, check=False)
    alpha_wald = float(stats.chi2.sf(q.rhs / fit.sigma2_wald, mom.mx))
    alpha_lr = float(stats.chi2.sf(b.critical - b.j_liml, mom.mx))
    return LevelMap(kappa, alpha_wald, alpha_lr)


def project_to_interval(q: Quadric) -> ConfidenceSet1D:
    """Solve ``a (b - c)^2 <= r`` for a one-dimensional quadric."""
    if q.dim != 1:
        raise ConfigError("project_to_interval needs a one-dimensional quadric")
    if q.kind == "whole_space":
        return ConfidenceSet1D(((-math.inf, math.inf),))
    a, b, c = float(q.A[0, 0]), float(q.center[0]), q.rhs
    if a == 0:
        return ConfidenceSet1D(((-math.inf, math.inf),)) if c >= 0 else ConfidenceSet1D()
    if a > 0:
        if c < 0:
            return ConfidenceSet1D()
        h = math.sqrt(c / a)
        return ConfidenceSet1D(((b - h, b + h),))
    if c >= 0:
        return ConfidenceSet1D(((-math.inf, math.inf),))
    h = math.sqrt(c / a)
    return ConfidenceSet1D(((-math.inf, b - h), (b + h, math.inf)))


def default_window(data: IVDataset, width: float = 20.0) -> tuple[float, float]:
    """``estimate +- width`` Wald standard errors (LIML, else TSLS)."""
    mom = data.moments
    try:
        fit = kclass_moments(mom, kappa_liml_moments(mom))
    except ArithmeticError:
        fit = kclass_moments(mom, 1.0, check=False)
    center, se = float(fit.coef[0]), float(fit.stderr[0])
    if not (math.isfinite(se) and se > 0):
        se = 1.0
    return center - width * se, center + width * se


def grid_invert(
    data: IVDataset,
    test: str,
    alpha: float,
    lo: float | None = None,
    hi: float | None = None,
    points: int = 2000,
) -> ConfidenceSet1D:
    """Invert a test over a grid of scalar ``beta`` values.

    Maximal runs with ``p >= alpha`` become intervals whose endpoints are
    refined by bisection to ``(hi - lo) / 1e6``.  Runs touching the window
    edge are extended to infinity and flagged.  Points where the test fails
    count as rejected, with a warning.
    """
    mom = data.moments
    if mom.mx != 1:
        raise ConfigError("grid inversion needs a scalar beta")
    if points < 3:
        raise ConfigError("need at least 3 grid points")
    if lo is None or hi is None:
        dlo, dhi = default_window(data)
        lo = dlo if lo is None else lo
        hi = dhi if hi is None else hi
    if not lo < hi:
        raise ConfigError(f"need lo < hi, got {lo}, {hi}")
    failures = []

    def accepted(beta: float) -> bool:
        try:
            return ivtests.run_test(data, test, [beta]).p_value >= alpha
        except ArithmeticError as exc:
            failures.append((beta, str(exc)))
            return False

    grid = np.linspace(lo, hi, points)
    acc = np.array([accepted(b) for b in grid])
    width = (hi - lo) / 1e6

    def refine(inside: float, outside: float) -> float:
        while abs(outside - inside) > width:
            mid = 0.5 * (inside + outside)
            if accepted(mid):
                inside = mid
            else:
                outside = mid
        return inside

    pieces, flags = [], []
    i = 0
    while i < points:
        if not acc[i]:
            i += 1
            continue
        j = i
        while j + 1 < points and acc[j + 1]:
            j += 1
        left = -math.inf if i == 0 else refine(grid[i], grid[i - 1])
        right = math.inf if j == points - 1 else refine(grid[j], grid[j + 1])
        if i == 0 or j == points - 1:
            flags.append("unbounded at window edge")
        pieces.append((float(left), float(right)))
        i = j + 1
    if failures:
        warnings.warn(f"{len(failures)} test evaluations failed and were treated as rejections",
                      RuntimeWarning)
    return ConfidenceSet1D(tuple(pieces), tuple(sorted(set(flags))))
