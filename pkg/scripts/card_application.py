"""Return to schooling with college proximity instruments.

Reads an extract of the 1976 NLS Young Men sample (one row per person) and
runs specification (i): log wage on education, with experience and its
square as endogenous nuisance regressors, proximity to a four-year college,
age and age squared as instruments, and race, urban, region and family
background controls.  Experience is ``age - educ - 6`` when the file lacks
it.  Controls with missing cells are mean-imputed and get a missing-value
indicator.

Usage::

    python scripts/card_application.py data.csv [--controls a,b,c] [--format json]
"""

from __future__ import annotations

import argparse
import csv
import json

import numpy as np

from weakiv import IVDataset, clr_test, ar_test, liml, lm_test, rank_test, tsls
from weakiv.quadric import grid_invert, invert_closed_form, project_to_interval

DEFAULT_CONTROLS = (
    "black,smsa,smsa66,south,reg662,reg663,reg664,reg665,reg666,reg667,reg668,reg669,"
    "fatheduc,motheduc,momdad14,sinmom14"
)


def _read(path: str) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} has no data rows")

    def col(name):
        return np.array([float(r[name]) if r[name] not in ("", "NA", ".") else np.nan for r in rows])

    return {name: col(name) for name in rows[0]}


def build(path: str, controls: str = DEFAULT_CONTROLS) -> IVDataset:
    """Dataset for specification (i) with an intercept."""
    raw = _read(path)
    for need in ("lwage", "educ", "age", "nearc4"):
        if need not in raw:
            raise ValueError(f"column {need!r} missing from {path}")
    educ, age = raw["educ"], raw["age"]
    exper = raw.get("exper", age - educ - 6)
    C = []
    for name in (c.strip() for c in controls.split(",") if c.strip()):
        v = raw[name]
        miss = np.isnan(v)
        if miss.any():
            C.append(np.where(miss, np.nanmean(v), v))
            C.append(miss.astype(float))
        else:
            C.append(v)
    return IVDataset(
        y=raw["lwage"],
        X=educ,
        W=np.column_stack([exper, exper**2]),
        Z=np.column_stack([raw["nearc4"], age, age**2]),
        C=np.column_stack(C),
        intercept_flag=True,
    )


def report(data: IVDataset) -> dict:
    ts, lm_fit = tsls(data), liml(data) if data.moments.mz_full_rank else None
    out = {
        "n": data.n,
        "k": data.moments.k,
        "tsls": {"estimate": float(ts.coef[0]), "stderr": float(ts.stderr[0])},
        "rank": rank_test(data).to_dict(),
    }
    if lm_fit is not None:
        out["liml"] = {"estimate": float(lm_fit.coef[0]), "stderr": float(lm_fit.stderr[0])}
    b = float(ts.coef[0])
    for name, fn in (("ar", ar_test), ("clr", clr_test), ("lm", lm_test)):
        try:
            out[name] = fn(data, [0.0]).to_dict()
        except ArithmeticError as exc:
            out[name] = {"error": str(exc)}
    out["ar_set"] = project_to_interval(invert_closed_form(data, "ar", 0.05)).to_json()
    out["lm_set"] = grid_invert(data, "lm", 0.05, b - 1.5, b + 1.5, 601).to_json()
    return out


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("path")
    p.add_argument("--controls", default=DEFAULT_CONTROLS)
    args = p.parse_args(argv)
    print(json.dumps(report(build(args.path, args.controls)), indent=2, default=str))


if __name__ == "__main__":
    main()
