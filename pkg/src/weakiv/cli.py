"""Command-line front end.

Subcommands: ``fit``, ``test``, ``confset``, ``rank``, ``pvalue-grid``,
``simulate-size`` and ``simulate-power``.  Every report carries the fully
resolved configuration.  Exit status is 0 on success, 2 on configuration
errors and 3 on numerical failures, with a one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Sequence

import numpy as np

from . import ivtests, montecarlo, quadric
from .dataset import load_csv
from .errors import ConfigError, NumericalError
from .kclass import kclass, resolve_kappa

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
ROLE_FLAGS = (
    ("outcome", "outcome"),
    ("endogenous", "endogenous"),
    ("endogenous_nuisance", "endogenous_nuisance"),
    ("instruments", "instrument"),
    ("exogenous", "exogenous"),
    ("exogenous_nuisance", "exogenous_nuisance"),
)
DEFAULT_SIM_TESTS = "ar,lm,lm_plugin,lr,clr,wald_tsls"


class _ArgumentParser(argparse.ArgumentParser):
    """Raise ``ConfigError`` instead of exiting, so usage errors map to exit 2."""

    def error(self, message):
        raise ConfigError(message)


def _names(text: str | None) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _floats(text: str | None, flag: str) -> list[float]:
    try:
        return [float(t) for t in _names(text)]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from None


def _roles(args) -> dict[str, str]:
    roles: dict[str, str] = {}
    for attr, role in ROLE_FLAGS:
        for column in _names(getattr(args, attr)):
            if column in roles:
                raise ConfigError(
                    f"column {column!r} assigned to both {roles[column]} and {role}"
                )
            roles[column] = role
    return roles


def _load(args):
    if not args.input:
        raise ConfigError("--input is required")
    if not args.outcome:
        raise ConfigError("--outcome is required")
    return load_csv(args.input, _roles(args), intercept=not args.no_intercept)


def _data_config(args, data) -> dict:
    return {
        "input": args.input,
        "roles": _roles(args),
        "intercept": not args.no_intercept,
        "n": data.n,
        "dropped_rows": data.dropped_rows,
        "mx": data.mx,
        "mw": data.mw,
        "k": data.k,
        "mc": data.mc,
        "md": data.md,
    }


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _clean(obj):
    obj = ivtests._jsonable(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return _finite(obj)


# ---------------------------------------------------------------- reports


def _column_names(data) -> list[str]:
    names = list(data.names.get("X", ())) + list(data.names.get("W", ()))
    return names if len(names) == data.m else [f"s{i}" for i in range(data.m)]


def cmd_fit(args) -> dict:
    data = _load(args)
    kappa = resolve_kappa(data, args.estimator)
    fit = kclass(data, kappa)
    rows = [
        {"name": name, "estimate": float(c), "stderr": float(s)}
        for name, c, s in zip(_column_names(data), fit.coef, fit.stderr)
    ]
    return {
        "config": {**_data_config(args, data), "estimator": args.estimator},
        "kappa": fit.kappa,
        "sigma2_wald": fit.sigma2_wald,
        "sigma2_mz": fit.sigma2_mz,
        "rows": rows,
    }


def _run_one(data, kind: str, beta0, delta0, estimator: str):
    kind = kind.replace("-", "_").lower()
    if data.md > 0:
        return ivtests.test_with_exogenous_of_interest(data, beta0, delta0, kind)
    if kind == "wald":
        return ivtests.wald_test(data, beta0, estimator)
    return ivtests.run_test(data, kind, beta0)


def cmd_test(args) -> dict:
    data = _load(args)
    beta0 = _floats(args.beta0, "--beta0")
    delta0 = _floats(args.delta0, "--delta0")
    result = _run_one(data, args.test, beta0, delta0, args.estimator)
    row = {"test": args.test, **result.to_dict()}
    return {
        "config": {**_data_config(args, data), "test": args.test, "beta0": beta0,
                   "delta0": delta0, "estimator": args.estimator},
        "rows": [row],
    }


def cmd_confset(args) -> dict:
    data = _load(args)
    test = args.test.lower()
    config = {**_data_config(args, data), "test": test, "alpha": args.alpha,
              "estimator": args.estimator, "method": args.method}
    closed = test in ("ar", "lr", "wald") and args.method != "grid"
    if closed:
        q = quadric.invert_closed_form(data, test, args.alpha, args.estimator)
        report = {"config": config, "quadric": q.to_dict()}
        if q.dim == 1:
            cs = quadric.project_to_interval(q)
            report["intervals"] = cs.to_json()
            report["classification"] = quadric.classify(q)
        return report
    if args.method == "closed":
        raise ConfigError(f"no closed form for {test!r}; use --method grid")
    lo, hi = args.grid_lo, args.grid_hi
    if lo is None or hi is None:
        dlo, dhi = quadric.default_window(data)
        lo = dlo if lo is None else lo
        hi = dhi if hi is None else hi
    config.update(grid_lo=lo, grid_hi=hi, grid_points=args.grid_points)
    cs = quadric.grid_invert(data, test, args.alpha, lo, hi, args.grid_points)
    classification = (
        "empty" if cs.is_empty else "bounded_nonempty" if cs.is_bounded else "unbounded"
    )
    return {"config": config, "intervals": cs.to_json(), "flags": list(cs.flags),
            "classification": classification}


def cmd_rank(args) -> dict:
    data = _load(args)
    result = ivtests.rank_test(data, args.r)
    return {"config": {**_data_config(args, data), "r": args.r},
            "rows": [{"test": "rank", **result.to_dict()}]}


def emit_pvalue_grid(data, tests: Sequence[str], beta_grid, estimator: str = "tsls") -> list[dict]:
    """One row per ``(test, beta)`` with the p-value of ``H0: beta = b``.

    Failures are reported as ``p_value = None`` with the error message.
    """
    if data.mx != 1:
        raise ConfigError("p-value grids need a scalar beta (mx = 1)")
    rows = []
    for test in tests:
        for b in beta_grid:
            try:
                p = _run_one(data, test, [float(b)], [], estimator).p_value
                rows.append({"test": test, "beta": float(b), "p_value": p, "error": ""})
            except ArithmeticError as exc:
                rows.append({"test": test, "beta": float(b), "p_value": None, "error": str(exc)})
    return rows


def _grid(args) -> np.ndarray:
    if args.grid_points < 2:
        raise ConfigError("--grid-points must be at least 2")
    if not args.grid_lo < args.grid_hi:
        raise ConfigError("--grid-lo must be below --grid-hi")
    return np.linspace(args.grid_lo, args.grid_hi, args.grid_points)


def cmd_pvalue_grid(args) -> dict:
    data = _load(args)
    tests = _names(args.tests)
    rows = emit_pvalue_grid(data, tests, _grid(args), args.estimator)
    return {
        "config": {**_data_config(args, data), "tests": tests, "grid_lo": args.grid_lo,
                   "grid_hi": args.grid_hi, "grid_points": args.grid_points,
                   "estimator": args.estimator},
        "rows": rows,
    }


def _spec(args) -> montecarlo.DGPSpec:
    kw = dict(
        family=args.family, n=args.n, k=args.k, pi_x_norm=args.pi_x_norm,
        pi_w_norm=args.pi_w_norm, pi_inner=args.pi_inner, lambda1=args.lambda1,
        lambda2=args.lambda2, tau=args.tau, beta_true=args.beta_true,
        gamma_true=args.gamma_true,
    )
    if args.omega:
        vals = _floats(args.omega, "--omega")
        if len(vals) != 9:
            raise ConfigError("--omega needs 9 comma-separated values (row-major 3 x 3)")
        kw["omega"] = tuple(tuple(vals[3 * i: 3 * i + 3]) for i in range(3))
    return montecarlo.DGPSpec(**kw)


def _sim_config(args, spec) -> dict:
    workers = montecarlo.default_workers() if args.workers is None else args.workers
    return {**montecarlo.spec_dict(spec), "reps": args.reps, "alpha": args.alpha,
            "seed": args.seed, "workers": workers, "tests": _names(args.tests)}


def cmd_simulate_size(args) -> dict:
    spec = _spec(args)
    table = montecarlo.size_table(_names(args.tests), spec, args.reps, args.alpha,
                                  args.seed, args.workers)
    rows = [{"test": t, "rate": e.rate, "stderr": e.mc_stderr, "valid_reps": e.reps,
             "failures": e.failures} for t, e in table.items()]
    return {"config": _sim_config(args, spec), "rows": rows}


def cmd_simulate_power(args) -> dict:
    spec = _spec(args)
    grid = _grid(args)
    rows = montecarlo.power_table(_names(args.tests), spec, grid, args.reps, args.alpha,
                                  args.seed, args.workers)
    config = {**_sim_config(args, spec), "grid_lo": args.grid_lo, "grid_hi": args.grid_hi,
              "grid_points": args.grid_points}
    return {"config": config, "rows": rows}


# ---------------------------------------------------------------- output


def _flat(config: dict) -> list[tuple[str, str]]:
    return [(k, json.dumps(_clean(v))) for k, v in config.items()]


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(_clean(report), indent=2)
    config = report.get("config", {})
    if fmt == "csv":
        buf = io.StringIO()
        for k, v in _flat(config):
            buf.write(f"# {k}={v}\n")
        rows = report.get("rows")
        if rows is None:
            rows = [{"lo": lo, "hi": hi} for lo, hi in report.get("intervals", [])]
        if rows:
            flat_rows = [{k: (json.dumps(_clean(v)) if isinstance(v, (dict, list)) else _finite(v))
                          for k, v in r.items()} for r in rows]
            writer = csv.DictWriter(buf, fieldnames=list(flat_rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(flat_rows)
        return buf.getvalue().rstrip("\n")
    lines = [f"{k}: {v}" for k, v in _flat(config)]
    lines.append("")
    for key, value in report.items():
        if key in ("config", "rows"):
            continue
        lines.append(f"{key}: {json.dumps(_clean(value))}")
    rows = report.get("rows") or []
    if rows:
        cols = list(rows[0])
        cells = [[_fmt_cell(r[c]) for c in cols] for r in rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
        lines.append("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
        lines.extend("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells)
    return "\n".join(lines).rstrip("\n")


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (dict, list)):
        return json.dumps(_clean(v))
    return str(v)


# ---------------------------------------------------------------- parser


def _data_flags(p):
    p.add_argument("--input", help="CSV file with a header row")
    p.add_argument("--outcome", help="outcome column")
    p.add_argument("--endogenous", help="endogenous columns of interest (comma-separated)")
    p.add_argument("--endogenous-nuisance", help="endogenous nuisance columns")
    p.add_argument("--instruments", help="instrument columns")
    p.add_argument("--exogenous", help="exogenous columns of interest")
    p.add_argument("--exogenous-nuisance", help="exogenous nuisance columns")
    p.add_argument("--no-intercept", action="store_true", help="do not center the data")


def _format_flag(p, default="json"):
    p.add_argument("--format", choices=("json", "csv", "text"), default=default)
    p.add_argument("--output", help="write the report here instead of stdout")


def _sim_flags(p):
    p.add_argument("--family", choices=("guggenberger", "kleibergen"), default="guggenberger")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--omega", help="row-major 3 x 3 covariance of (eps, V_X, V_W)")
    p.add_argument("--pi-x-norm", type=float, default=100.0)
    p.add_argument("--pi-w-norm", type=float, default=1.0)
    p.add_argument("--pi-inner", type=float, default=95.0)
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--beta-true", type=float, default=0.0)
    p.add_argument("--gamma-true", type=float, default=0.0)
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (default ${montecarlo.THREADS_ENV} or 1)")
    p.add_argument("--tests", default=DEFAULT_SIM_TESTS)


def _grid_flags(p, required: bool):
    p.add_argument("--grid-lo", type=float, required=required, default=None)
    p.add_argument("--grid-hi", type=float, required=required, default=None)
    p.add_argument("--grid-points", type=int, default=2000 if not required else 41)


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="weakiv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("fit", help="k-class coefficient table")
    _data_flags(p)
    p.add_argument("--estimator", default="liml", help="ols, tsls, liml, fullerA or a kappa")
    _format_flag(p)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("test", help="test H0: beta = beta0")
    _data_flags(p)
    p.add_argument("--test", required=True,
                   help="ar, lr, clr, lm, lm_plugin, wald, wald_tsls or wald_liml")
    p.add_argument("--beta0", required=True, help="comma-separated hypothesized beta")
    p.add_argument("--delta0", default="", help="hypothesized coefficients of --exogenous")
    p.add_argument("--estimator", default="tsls", help="k-class estimator for --test wald")
    _format_flag(p)
    p.set_defaults(handler=cmd_test)

    p = sub.add_parser("confset", help="confidence set by test inversion")
    _data_flags(p)
    p.add_argument("--test", required=True, help="ar, lr, wald (closed form) or lm, clr (grid)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--estimator", default="tsls", help="k-class estimator for --test wald")
    p.add_argument("--method", choices=("auto", "closed", "grid"), default="auto")
    _grid_flags(p, required=False)
    _format_flag(p)
    p.set_defaults(handler=cmd_confset)

    p = sub.add_parser("rank", help="Anderson rank test of the first stage")
    _data_flags(p)
    p.add_argument("--r", type=int, default=1, help="tested rank deficiency")
    _format_flag(p)
    p.set_defaults(handler=cmd_rank)

    p = sub.add_parser("pvalue-grid", help="p-values over a grid of beta0")
    _data_flags(p)
    p.add_argument("--tests", default="ar,lm,clr,lr,wald")
    p.add_argument("--estimator", default="tsls", help="k-class estimator for wald")
    _grid_flags(p, required=True)
    _format_flag(p, default="csv")
    p.set_defaults(handler=cmd_pvalue_grid)

    p = sub.add_parser("simulate-size", help="empirical size under a simulated design")
    _sim_flags(p)
    _format_flag(p, default="csv")
    p.set_defaults(handler=cmd_simulate_size)

    p = sub.add_parser("simulate-power", help="rejection rates over a beta0 grid")
    _sim_flags(p)
    p.set_defaults(reps=1000)
    _grid_flags(p, required=True)
    _format_flag(p, default="csv")
    p.set_defaults(handler=cmd_simulate_power)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        report = args.handler(args)
        text = render(report, args.format)
    except ConfigError as exc:
        print(f"weakiv: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"weakiv: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
