"""Empirical size of the subvector tests under the norm-parametrized design.

Example::

    python scripts/size_table.py --k 5 10 --reps 2000 --seed 7 --out size.csv
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import dataclass, field

from weakiv.montecarlo import DGPSpec, size_table

TESTS = ("ar", "lm", "lm_plugin", "lr", "clr", "wald_tsls", "wald_liml")


@dataclass
class SizeConfig:
    ks: list = field(default_factory=lambda: [5, 10])
    n: int = 1000
    reps: int = 2000
    alpha: float = 0.05
    seed: int = 7
    workers: int | None = None
    tests: tuple = TESTS


def run(cfg: SizeConfig) -> list[dict]:
    rows = []
    for k in cfg.ks:
        t0 = time.perf_counter()
        tab = size_table(cfg.tests, DGPSpec(n=cfg.n, k=k), cfg.reps, cfg.alpha, cfg.seed, cfg.workers)
        for test, est in tab.items():
            rows.append({"k": k, "test": test, "rate": est.rate, "stderr": est.mc_stderr,
                         "failures": est.failures})
        print(f"k={k}: {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return rows


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--k", type=int, nargs="+", default=[5, 10])
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    a = p.parse_args(argv)
    rows = run(SizeConfig(a.k, a.n, a.reps, a.alpha, a.seed, a.workers))
    fh = open(a.out, "w", newline="") if a.out else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    if a.out:
        fh.close()


if __name__ == "__main__":
    main()
