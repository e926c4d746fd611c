"""Observation data model, CSV ingestion and projection helpers.

All statistics in this package are functions of two small Gram matrices of
the stacked data ``A = [y X W]``: the instrument-projected block
``A' P_Z A`` and the annihilated block ``A' M_Z A``.  ``Moments`` holds
those (in a form that also keeps ``Q' A`` for an orthonormal basis ``Q`` of
the instruments), so the n-dimensional work happens once per dataset.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError, ParseError, SchemaError

RANK_TOL = 1e-10

ROLES = (
    "outcome",
    "endogenous",
    "endogenous_nuisance",
    "instrument",
    "exogenous",
    "exogenous_nuisance",
)
_ROLE_BLOCK = {
    "outcome": "y",
    "endogenous": "X",
    "endogenous_nuisance": "W",
    "instrument": "Z",
    "exogenous": "D",
    "exogenous_nuisance": "C",
}


def orthonormal_basis(basis: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the column span of ``basis`` via a thin SVD.

    Singular values below ``tol`` times the largest one are treated as zero.
    """
    basis = np.asarray(basis, dtype=float)
    if basis.ndim == 1:
        basis = basis[:, None]
    if basis.shape[1] == 0:
        return np.zeros((basis.shape[0], 0))
    u, s, _ = np.linalg.svd(basis, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return u[:, :0]
    return u[:, : int(np.sum(s > tol * s[0]))]


@dataclass(frozen=True, eq=False)
class ProjectionPair:
    """Orthogonal projection onto span(basis) and its annihilator."""

    basis: np.ndarray
    rank: int = field(init=False)
    _q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        q = orthonormal_basis(self.basis)
        object.__setattr__(self, "_q", q)
        object.__setattr__(self, "rank", q.shape[1])

    def proj(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self._q @ (self._q.T @ v)

    def annih(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return v - self.proj(v)


def proj(basis: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Project the columns of ``v`` onto the column span of ``basis``."""
    return ProjectionPair(np.asarray(basis, dtype=float)).proj(v)


def annih(basis: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Residual of the columns of ``v`` after projection onto span(basis)."""
    return ProjectionPair(np.asarray(basis, dtype=float)).annih(v)


def _as_block(a, n: int | None, name: str) -> np.ndarray:
    if a is None:
        if n is None:
            raise ConfigError(f"{name} is required")
        return np.zeros((n, 0))
    a = np.array(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ConfigError(f"{name} must be a matrix, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class IVDataset:
    """Role-tagged observation matrices of a linear IV model.

    The model is ``y = X beta + W gamma + D delta + C eta + eps`` where ``X``
    and ``W`` are endogenous (of interest / nuisance), ``D`` and ``C`` are
    exogenous (of interest / nuisance) and ``Z`` are instruments.

    ``absorbed`` counts columns already partialled out of every block (for
    example by ``residualize``); it lowers the effective sample size used in
    degrees-of-freedom corrections.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    W: np.ndarray | None = None
    C: np.ndarray | None = None
    D: np.ndarray | None = None
    intercept_flag: bool = False
    absorbed: int = 0
    names: Mapping[str, tuple] = field(default_factory=dict)
    dropped_rows: int = 0

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim == 2 and y.shape[1] == 1:
            y = y[:, 0]
        if y.ndim != 1:
            raise ConfigError(f"y must be a vector, got shape {y.shape}")
        y.setflags(write=False)
        n = y.shape[0]
        object.__setattr__(self, "y", y)
        for name in ("X", "Z", "W", "C", "D"):
            block = _as_block(getattr(self, name), n, name)
            if block.shape[0] != n:
                raise ConfigError(
                    f"{name} has {block.shape[0]} rows but y has {n}"
                )
            object.__setattr__(self, name, block)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def mx(self) -> int:
        return self.X.shape[1]

    @property
    def mw(self) -> int:
        return self.W.shape[1]

    @property
    def m(self) -> int:
        return self.mx + self.mw

    @property
    def k(self) -> int:
        return self.Z.shape[1]

    @property
    def mc(self) -> int:
        return self.C.shape[1]

    @property
    def md(self) -> int:
        return self.D.shape[1]

    @property
    def order_condition(self) -> bool:
        """Whether there are at least as many instruments as endogenous columns."""
        return self.k >= self.m

    @cached_property
    def moments(self) -> "Moments":
        """Sufficient statistics after partialling out ``C`` (and ``D``)."""
        data = residualize(self)
        if data.md > 0:
            data = _partial_out(data, data.D)
        return Moments.from_blocks(
            data.y, data.X, data.W, data.Z, n_eff=data.n - data.absorbed
        )


def _partial_out(data: IVDataset, C: np.ndarray) -> IVDataset:
    pp = ProjectionPair(C)
    if pp.rank < C.shape[1]:
        warnings.warn(
            f"exogenous block has rank {pp.rank} < {C.shape[1]} columns; "
            "using the projection onto its column span",
            RuntimeWarning,
            stacklevel=3,
        )
    return replace(
        data,
        y=pp.annih(data.y),
        X=pp.annih(data.X),
        W=pp.annih(data.W),
        Z=pp.annih(data.Z),
        D=pp.annih(data.D) if C is not data.D else None,
        C=None,
        intercept_flag=False,
        absorbed=data.absorbed + pp.rank,
    )


def residualize(data: IVDataset) -> IVDataset:
    """Partial the exogenous nuisance block ``C`` (and the intercept) out.

    Every other block is replaced by its residual from a regression on
    ``C``.  ``D`` is kept as its own block.  The result has ``mc = 0`` and
    ``intercept_flag = False``, so applying the function twice is a no-op.
    """
    if data.mc == 0 and not data.intercept_flag:
        return data
    C = data.C
    if data.intercept_flag:
        C = np.column_stack([np.ones(data.n), C])
    return _partial_out(data, C)


def _equilibrated_rank(a: np.ndarray) -> int:
    norms = np.linalg.norm(a, axis=0)
    if a.shape[1] == 0 or np.any(norms == 0):
        return int(np.sum(norms > 0)) if a.shape[1] else 0
    s = np.linalg.svd(a / norms, compute_uv=False)
    return int(np.sum(s > RANK_TOL * s[0]))


@dataclass(frozen=True, eq=False)
class Moments:
    """Gram-type summaries of ``A = [y X W]`` relative to the instruments.

    ``zA = Q' A`` for an orthonormal basis ``Q`` of span(Z), so that
    ``A' P_Z A = zA' zA``.  ``mgram = (M_Z A)' (M_Z A)`` is computed from
    explicit residuals to avoid cancellation.  ``exog`` flags columns that
    lie in span(Z) (exogenous columns used as their own instruments).
    """

    n: int
    k: int
    mx: int
    mw: int
    zA: np.ndarray
    mgram: np.ndarray
    exog: np.ndarray
    mz_full_rank: bool

    @classmethod
    def from_blocks(cls, y, X, W, Z, n_eff: int | None = None) -> "Moments":
        A = np.column_stack([y, X, W])
        q = orthonormal_basis(Z)
        zA = q.T @ A
        resid = A - q @ zA
        mgram = resid.T @ resid
        mgram = 0.5 * (mgram + mgram.T)
        col = np.linalg.norm(A, axis=0)
        exog = np.linalg.norm(resid, axis=0) <= RANK_TOL * np.maximum(col, 1e-300)
        exog[0] = False
        free = resid[:, ~exog]
        return cls(
            n=int(A.shape[0] if n_eff is None else n_eff),
            k=q.shape[1],
            mx=X.shape[1],
            mw=W.shape[1],
            zA=zA,
            mgram=mgram,
            exog=exog,
            mz_full_rank=_equilibrated_rank(free) == free.shape[1],
        )

    @property
    def m(self) -> int:
        return self.mx + self.mw

    @cached_property
    def pgram(self) -> np.ndarray:
        return self.zA.T @ self.zA

    @property
    def ix(self) -> slice:
        return slice(1, 1 + self.mx)

    @property
    def iw(self) -> slice:
        return slice(1 + self.mx, 1 + self.m)

    @property
    def iS(self) -> slice:
        return slice(1, 1 + self.m)


def load_csv(
    path: str | Path, roles: Mapping[str, str], intercept: bool = False
) -> IVDataset:
    """Read a comma-separated file with a header row into an ``IVDataset``.

    Parameters
    ----------
    path
        File to read.
    roles
        Mapping from column name to one of ``ROLES``.  Columns within a
        block keep the order of this mapping.
    intercept
        Whether to handle an intercept by centering.

    Rows with an empty cell in any role column are dropped; the count is
    stored in ``dropped_rows``.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    blocks: dict[str, list[str]] = {b: [] for b in _ROLE_BLOCK.values()}
    for column, role in roles.items():
        if role not in _ROLE_BLOCK:
            raise ConfigError(
                f"unknown role {role!r} for column {column!r}; expected one of {ROLES}"
            )
        blocks[_ROLE_BLOCK[role]].append(column)
    if len(blocks["y"]) != 1:
        raise ConfigError(
            f"exactly one outcome column is required, got {blocks['y']}"
        )
    if not blocks["X"] and not blocks["W"]:
        raise ConfigError("at least one endogenous column is required")
    if not blocks["Z"]:
        raise ConfigError("at least one instrument column is required")

    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        index = {}
        for column in roles:
            if column not in header:
                raise SchemaError(f"column {column!r} not found in {path}")
            index[column] = header.index(column)
        wanted = list(roles)
        rows, dropped = [], 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            cells = [row[index[c]].strip() if index[c] < len(row) else "" for c in wanted]
            if any(cell == "" for cell in cells):
                dropped += 1
                continue
            values = []
            for column, cell in zip(wanted, cells):
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(
                        f"non-numeric value {cell!r} in column {column!r} at line {lineno}"
                    ) from None
                if not math.isfinite(value):
                    raise ParseError(
                        f"non-finite value {cell!r} in column {column!r} at line {lineno}"
                    )
                values.append(value)
            rows.append(values)
    if not rows:
        raise ConfigError(f"no complete rows in {path}")
    table = np.asarray(rows, dtype=float)
    pos = {c: i for i, c in enumerate(wanted)}

    def take(block):
        return table[:, [pos[c] for c in blocks[block]]]

    return IVDataset(
        y=take("y")[:, 0],
        X=take("X"),
        Z=take("Z"),
        W=take("W"),
        C=take("C"),
        D=take("D"),
        intercept_flag=bool(intercept),
        names={b: tuple(cols) for b, cols in blocks.items()},
        dropped_rows=dropped,
    )
