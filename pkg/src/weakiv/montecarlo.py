"""Data-generating processes and empirical size/power estimation.

Two designs with ``mx = mw = 1`` and ``Z ~ N(0, Id_k)``:

* ``guggenberger``: first-stage coefficients with prescribed norms
  ``sqrt(n)||Pi_X||``, ``sqrt(n)||Pi_W||`` and inner product
  ``n <Pi_X, Pi_W>``.
* ``kleibergen``: first-stage strength parametrized by the eigenvalues
  ``lambda1, lambda2`` and rotation angle ``tau`` of the concentration
  matrix in the metric of ``Omega_{VV.eps}``.

Each replication draws its own first stage, noise and instruments from a
generator seeded by ``(seed, rep)``, so results do not depend on how
replications are split across worker processes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .dataset import IVDataset
from .errors import ConfigError
from .ivtests import run_test

GUGGENBERGER_OMEGA = ((1.0, 0.0, 0.95), (0.0, 1.0, 0.3), (0.95, 0.3, 1.0))
THREADS_ENV = "WEAKIV_THREADS"


@dataclass(frozen=True)
class DGPSpec:
    """Parameters of a simulation design; ``omega`` is Cov of (eps, V_X, V_W)."""

    family: str = "guggenberger"
    n: int = 1000
    k: int = 5
    omega: tuple = GUGGENBERGER_OMEGA
    pi_x_norm: float = 100.0
    pi_w_norm: float = 1.0
    pi_inner: float = 95.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    tau: float = 0.0
    beta_true: float = 0.0
    gamma_true: float = 0.0

    def __post_init__(self):
        if self.family not in ("guggenberger", "kleibergen"):
            raise ConfigError(f"unknown family {self.family!r}")
        omega = np.asarray(self.omega, dtype=float)
        if omega.shape != (3, 3) or not np.allclose(omega, omega.T):
            raise ConfigError("omega must be a symmetric 3 x 3 matrix")
        if np.linalg.eigvalsh(omega).min() <= 0:
            raise ConfigError("omega must be positive definite")
        object.__setattr__(self, "omega", tuple(map(tuple, omega.tolist())))
        if self.n < 2 or self.k < 1:
            raise ConfigError("need n >= 2 and k >= 1")
        if self.family == "guggenberger":
            if abs(self.pi_inner) > self.pi_x_norm * self.pi_w_norm * (1 + 1e-12):
                raise ConfigError("pi_inner violates the Cauchy-Schwarz bound")

    @property
    def omega_matrix(self) -> np.ndarray:
        return np.asarray(self.omega, dtype=float)


def rep_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent generator for replication ``rep`` of run ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def sample_pi(k, pi_x_norm, pi_w_norm, pi_inner, n, rng) -> tuple[np.ndarray, np.ndarray]:
    """First-stage coefficients with prescribed norms and inner product.

    Draw two standard normal k-vectors, de-mean them, normalize the first,
    and build the second from the first and the normalized part of the
    second orthogonal to it, mixing with ``rho = pi_inner / (norm_x norm_w)``.
    Finally scale by ``norm / sqrt(n)``.
    """
    if k < 2:
        raise ConfigError("sample_pi needs k >= 2 to orthogonalize")
    if pi_x_norm < 0 or pi_w_norm < 0:
        raise ConfigError("norms must be nonnegative")
    denom = pi_x_norm * pi_w_norm
    rho = pi_inner / denom if denom > 0 else 0.0
    if abs(rho) > 1 + 1e-12:
        raise ConfigError("pi_inner violates the Cauchy-Schwarz bound")
    rho = min(max(rho, -1.0), 1.0)
    p1 = rng.standard_normal(k)
    p2 = rng.standard_normal(k)
    p1 -= p1.mean()
    p2 -= p2.mean()
    px = p1 / np.linalg.norm(p1)
    orth = p2 - px * (px @ p2)
    norm_orth = np.linalg.norm(orth)
    if norm_orth <= 1e-10 * np.linalg.norm(p2) and abs(rho) < 1:
        raise ConfigError("degenerate orthogonalization: de-meaned draws are collinear (k too small)")
    pw = rho * px + math.sqrt(1.0 - rho * rho) * (orth / norm_orth if norm_orth > 0 else 0.0)
    scale = 1.0 / math.sqrt(n)
    return px * pi_x_norm * scale, pw * pi_w_norm * scale


def _draw(spec: DGPSpec, pi_x, pi_w, rng) -> IVDataset:
    n, k = spec.n, spec.k
    Z = rng.standard_normal((n, k))
    L = np.linalg.cholesky(spec.omega_matrix)
    noise = rng.standard_normal((n, 3)) @ L.T
    X = Z @ pi_x + noise[:, 1]
    W = Z @ pi_w + noise[:, 2]
    y = spec.beta_true * X + spec.gamma_true * W + noise[:, 0]
    return IVDataset(y=y, X=X, W=W, Z=Z)


def draw_guggenberger(spec: DGPSpec, rng) -> IVDataset:
    """One dataset from the norm-parametrized design."""
    if spec.family != "guggenberger":
        raise ConfigError("draw_guggenberger needs family='guggenberger'")
    pi_x, pi_w = sample_pi(spec.k, spec.pi_x_norm, spec.pi_w_norm, spec.pi_inner, spec.n, rng)
    return _draw(spec, pi_x, pi_w, rng)


def _sqrtm(a: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(a)
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def kleibergen_target(spec: DGPSpec) -> np.ndarray:
    """Target ``n Pi' Pi`` for the eigenvalue/angle parametrization."""
    omega = spec.omega_matrix
    vv = omega[1:, 1:] - np.outer(omega[1:, 0], omega[0, 1:]) / omega[0, 0]
    half = _sqrtm(vv)
    c, s = math.cos(spec.tau), math.sin(spec.tau)
    R = np.array([[c, -s], [s, c]])
    lam = np.diag([spec.lambda1, spec.lambda2])
    target = half @ R @ lam @ R.T @ half
    target = 0.5 * (target + target.T)
    if min(spec.lambda1, spec.lambda2) < 0 or np.linalg.eigvalsh(target).min() < -1e-10 * max(1.0, abs(target).max()):
        raise ConfigError("implied first-stage Gram matrix is not positive semidefinite")
    return target


def draw_kleibergen(spec: DGPSpec, rng) -> IVDataset:
    """One dataset whose ``n Pi' Pi`` equals ``kleibergen_target(spec)``."""
    if spec.family != "kleibergen":
        raise ConfigError("draw_kleibergen needs family='kleibergen'")
    target = kleibergen_target(spec)
    nx, nw = math.sqrt(max(target[0, 0], 0.0)), math.sqrt(max(target[1, 1], 0.0))
    inner = target[0, 1] if nx * nw > 0 else 0.0
    pi_x, pi_w = sample_pi(spec.k, nx, nw, inner, spec.n, rng)
    return _draw(spec, pi_x, pi_w, rng)


def draw(spec: DGPSpec, rng) -> IVDataset:
    if spec.family == "guggenberger":
        return draw_guggenberger(spec, rng)
    return draw_kleibergen(spec, rng)


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    mc_stderr: float
    reps: int
    failures: int

    @classmethod
    def from_counts(cls, rejections: int, valid: int, failures: int) -> "RateEstimate":
        rate = rejections / valid if valid else float("nan")
        se = math.sqrt(rate * (1 - rate) / valid) if valid else float("nan")
        return cls(rate, se, valid, failures)


def _chunk_worker(args):
    """Rejection and failure counts for a block of replications."""
    tests, spec, betas, alpha, seed, reps = args
    rejections = np.zeros((len(tests), len(betas)), dtype=np.int64)
    failures = np.zeros_like(rejections)
    for rep in reps:
        data = draw(spec, rep_rng(seed, rep))
        for i, test in enumerate(tests):
            for j, beta in enumerate(betas):
                try:
                    p = run_test(data, test, [beta]).p_value
                except ArithmeticError:
                    failures[i, j] += 1
                    continue
                rejections[i, j] += p < alpha
    return rejections, failures


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer") from None


def _simulate(tests, spec, betas, reps, alpha, seed, workers):
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    tests = [t.replace("-", "_").lower() for t in tests]
    workers = default_workers() if workers is None else max(1, int(workers))
    chunks = [range(i, reps, workers) for i in range(workers)] if workers > 1 else [range(reps)]
    jobs = [(tests, spec, list(betas), alpha, seed, c) for c in chunks]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_chunk_worker, jobs))
    else:
        parts = [_chunk_worker(j) for j in jobs]
    rej = sum(p[0] for p in parts)
    fail = sum(p[1] for p in parts)
    return tests, rej, fail


def size_table(tests: Sequence[str], spec: DGPSpec, reps: int = 2000, alpha: float = 0.05,
               seed: int = 0, workers: int | None = None) -> dict:
    """Empirical rejection rates at the true ``beta`` for several tests on shared draws."""
    tests, rej, fail = _simulate(tests, spec, [spec.beta_true], reps, alpha, seed, workers)
    return {
        t: RateEstimate.from_counts(int(rej[i, 0]), reps - int(fail[i, 0]), int(fail[i, 0]))
        for i, t in enumerate(tests)
    }


def empirical_size(test: str, spec: DGPSpec, reps: int = 2000, alpha: float = 0.05,
                   seed: int = 0, workers: int | None = None) -> RateEstimate:
    """Fraction of replications rejecting the true ``beta`` at level ``alpha``."""
    return next(iter(size_table([test], spec, reps, alpha, seed, workers).values()))


def power_table(tests: Sequence[str], spec: DGPSpec, beta_grid, reps: int = 1000,
                alpha: float = 0.05, seed: int = 0, workers: int | None = None) -> list[dict]:
    """Rejection rates of ``H0: beta = b`` over ``beta_grid`` for several tests.

    Data come from ``spec`` (true ``beta = spec.beta_true``); all grid points
    and tests share the same draws.  Returns rows with keys ``test``,
    ``beta``, ``rate``, ``stderr``, ``failures``.
    """
    betas = [float(b) for b in beta_grid]
    tests, rej, fail = _simulate(tests, spec, betas, reps, alpha, seed, workers)
    rows = []
    for i, t in enumerate(tests):
        for j, b in enumerate(betas):
            est = RateEstimate.from_counts(int(rej[i, j]), reps - int(fail[i, j]), int(fail[i, j]))
            rows.append({"test": t, "beta": b, "rate": est.rate, "stderr": est.mc_stderr,
                         "failures": est.failures})
    return rows


def power_curve(test: str, spec: DGPSpec, beta_grid, reps: int = 1000, alpha: float = 0.05,
                seed: int = 0, workers: int | None = None) -> list[dict]:
    """Rows ``(beta, rate, stderr)`` for a single test."""
    return [
        {"beta": r["beta"], "rate": r["rate"], "stderr": r["stderr"]}
        for r in power_table([test], spec, beta_grid, reps, alpha, seed, workers)
    ]


def null_pvalues(tests: Sequence[str], spec: DGPSpec, reps: int = 500, seed: int = 0) -> dict:
    """p-values of each test at the true ``beta``, one per replication (NaN on failure)."""
    out = {t: np.full(reps, np.nan) for t in tests}
    for rep in range(reps):
        data = draw(spec, rep_rng(seed, rep))
        for t in tests:
            try:
                out[t][rep] = run_test(data, t, [spec.beta_true]).p_value
            except ArithmeticError:
                pass
    return out


def kleibergen_grid(tests: Sequence[str], base: DGPSpec, lambda_values, tau_values,
                    reps: int = 500, alpha: float = 0.05, seed: int = 0,
                    workers: int | None = None) -> list[dict]:
    """Empirical sizes over a ``(lambda1, lambda2, tau)`` grid of the Kleibergen design."""
    rows = []
    for l1 in lambda_values:
        for l2 in lambda_values:
            for tau in tau_values:
                spec = replace(base, family="kleibergen", lambda1=float(l1),
                               lambda2=float(l2), tau=float(tau))
                for test, est in size_table(tests, spec, reps, alpha, seed, workers).items():
                    rows.append({"lambda1": float(l1), "lambda2": float(l2), "tau": float(tau),
                                 "test": test, "rate": est.rate, "stderr": est.mc_stderr})
    return rows


def spec_dict(spec: DGPSpec) -> dict:
    d = asdict(spec)
    d["omega"] = [list(r) for r in spec.omega]
    return d
