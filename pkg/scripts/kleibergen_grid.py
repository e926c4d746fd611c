"""Empirical size over eigenvalue/rotation grids of the concentration matrix.

Example::

    python scripts/kleibergen_grid.py --lambdas 0 10 100 1000 --taus 0 0.785 1.571 --reps 500
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field

from weakiv.montecarlo import DGPSpec, kleibergen_grid


@dataclass
class GridConfig:
    k: int = 10
    n: int = 1000
    lambdas: list = field(default_factory=lambda: [0.0, 10.0, 100.0, 1000.0])
    taus: list = field(default_factory=lambda: [0.0, 0.785398, 1.570796])
    reps: int = 500
    alpha: float = 0.05
    seed: int = 5
    workers: int | None = None
    tests: tuple = ("ar", "lm", "clr", "lr")


def run(cfg: GridConfig) -> list[dict]:
    base = DGPSpec(family="kleibergen", n=cfg.n, k=cfg.k)
    return kleibergen_grid(cfg.tests, base, cfg.lambdas, cfg.taus, cfg.reps, cfg.alpha,
                           cfg.seed, cfg.workers)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    d = GridConfig()
    p.add_argument("--k", type=int, default=d.k)
    p.add_argument("--lambdas", type=float, nargs="+", default=d.lambdas)
    p.add_argument("--taus", type=float, nargs="+", default=d.taus)
    p.add_argument("--reps", type=int, default=d.reps)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--tests", default=",".join(d.tests))
    p.add_argument("--out", default=None)
    a = p.parse_args(argv)
    cfg = GridConfig(k=a.k, lambdas=a.lambdas, taus=a.taus, reps=a.reps, seed=a.seed,
                     workers=a.workers, tests=tuple(a.tests.split(",")))
    rows = run(cfg)
    fh = open(a.out, "w", newline="") if a.out else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    if a.out:
        fh.close()


if __name__ == "__main__":
    main()
