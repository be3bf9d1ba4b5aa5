"""Command-line front end: ``ambiq <subcommand> ...``.

Exit codes: 0 success, 2 invalid input (error JSON on stderr), 3 an
infeasible or no-equivalent outcome (report still written), 1 any other
numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings

import numpy as np

from . import __version__
from . import divergence as dv
from .backtest import DRO, BacktestConfig, MeanVariance, Nominal, run_backtest
from .calibrate import equivalent_delta, equivalent_rho, frontier
from .cco import ChanceSpec, solve_cco_closed_form, solve_cco_numeric, var_approx, verify_chance
from .core import FeasibleSet, PortfolioSolution, _jsonable
from .dro import DroConfig, Order, solve_dro_closed_form, solve_dro_numeric
from .errors import AmbiqError, DomainError, InfeasibleError, NotPositiveDefiniteError, UnsupportedError
from .experiments import table2, table2_csv
from .moments import (
    DEFAULT_NU_GRID,
    Family,
    MomentModel,
    estimate_moments,
    estimate_normal,
    fit_student_t,
    read_returns_csv,
)
from ._numerics import parse_grid

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3


class UsageError(Exception):
    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# argument definitions


def _model_args(p, family_default="empirical"):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--returns", help="CSV of simple returns (date,<asset>,...)")
    src.add_argument("--model", help="model JSON written by `fit`")
    # a saved model keeps its own family unless --family is given
    p.add_argument("--family", help=f"normal | t | empirical (fit default: {family_default})")
    p.set_defaults(family_fit=family_default)
    p.add_argument("--nu-grid", help="start:stop:count grid for the Student-t fit")


def _divergence_args(p):
    p.add_argument("--divergence", default="kl", help="kl | cressie-read")
    p.add_argument("--theta", type=float, help="Cressie-Read order (> 2)")


def _common(p):
    p.add_argument("--seed", type=int, default=0, help="seed for every random step")
    p.add_argument("-o", "--output", help="output path (default: stdout)")
    p.add_argument("--config", help="JSON file supplying defaults for any flag")


def build_parser():
    parser = _Parser(prog="ambiq", description="Robust and chance-constrained portfolio tools.")
    parser.add_argument("--version", action="version", version=f"ambiq {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", help="fit a moment model to a returns CSV")
    _model_args(p)
    _common(p)

    p = sub.add_parser("solve-dro", help="solve the robust portfolio problem")
    _model_args(p)
    _divergence_args(p)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--order", default="2", help="2 | 4 | exact-kl")
    p.add_argument("--lower-bound", type=float, help="per-asset lower bound (default: none)")
    _common(p)

    p = sub.add_parser("solve-cco", help="solve the VaR-constrained portfolio problem")
    _model_args(p, family_default="normal")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--lower-bound", type=float)
    _common(p)

    p = sub.add_parser("verify", help="Monte Carlo check of a chance constraint for given weights")
    _model_args(p, family_default=None)
    p.add_argument("--weights", required=True, help="weights JSON written by solve-*")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--samples", type=int, default=1_000_000)
    _common(p)

    p = sub.add_parser("calibrate", help="equivalent radius or loss threshold")
    p.add_argument("target", choices=["rho", "delta"], help="quantity to solve for")
    _model_args(p, family_default="normal")
    _divergence_args(p)
    p.add_argument("--rho", type=float, help="radius (target=delta)")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, help="loss threshold (target=rho)")
    p.add_argument("--order", default="2")
    p.add_argument("--lower-bound", type=float, default=-1.0)
    p.add_argument("--unbounded", action="store_true", help="drop the lower bound")
    _common(p)

    p = sub.add_parser("frontier", help="equivalent (eps, delta) curve at a fixed radius")
    _model_args(p, family_default="normal")
    _divergence_args(p)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--eps-grid", default="0.01:0.1:20")
    p.add_argument("--order", default="2")
    p.add_argument("--lower-bound", type=float, default=-1.0)
    p.add_argument("--unbounded", action="store_true")
    _common(p)

    p = sub.add_parser("backtest", help="walk-forward rebalancing backtest")
    p.add_argument("--returns", required=True)
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--freq", type=int, required=True)
    p.add_argument("--strategy", required=True, choices=["dro", "nominal", "mv"])
    p.add_argument("--rho", type=float)
    p.add_argument("--r-target", type=float)
    _divergence_args(p)
    p.add_argument("--order", default="2")
    p.add_argument("--lower-bound", type=float, default=-1.0)
    p.add_argument("--unbounded", action="store_true")
    p.add_argument("--series", help="CSV path for the realized return series")
    _common(p)

    p = sub.add_parser("table2", help="accuracy study of the moment expansions")
    p.add_argument("--rho-grid", default="0.01:0.09:9")
    p.add_argument("--method", default="optimize", choices=["optimize", "symmetric"])
    _common(p)
    return parser


# --------------------------------------------------------------------------
# validation and loading


def _require(cond, field, message):
    if not cond:
        raise UsageError(message, field=field)


def _finite(args, name):
    v = getattr(args, name, None)
    if v is not None:
        _require(math.isfinite(v), name, f"--{name.replace('_', '-')} must be finite")
    return v


def validate(args):
    """Domain checks on every numeric flag, before any computation."""
    for name in ("rho", "eps", "delta", "theta", "lower_bound", "r_target"):
        _finite(args, name)
    if getattr(args, "eps", None) is not None:
        _require(0.0 < args.eps < 1.0, "eps", f"eps must lie in (0, 1), got {args.eps}")
    if getattr(args, "delta", None) is not None:
        _require(args.delta > 0, "delta", f"delta must be positive, got {args.delta}")
    if getattr(args, "rho", None) is not None:
        _require(args.rho > 0, "rho", f"rho must be positive, got {args.rho}")
    if hasattr(args, "family") and args.family is not None:
        try:
            args.family = Family.parse(args.family)
        except ValueError:
            raise UsageError(f"unknown family {args.family!r}", field="family") from None
    if hasattr(args, "divergence"):
        try:
            args.divergence = dv.DivergenceSpec.parse(args.divergence, args.theta)
        except (ValueError, DomainError) as exc:
            raise UsageError(str(exc), field="theta" if args.theta is not None else "divergence") from None
    if hasattr(args, "order"):
        try:
            args.order = Order.parse(args.order)
        except ValueError:
            raise UsageError(f"unknown order {args.order!r}", field="order") from None
        if args.order is Order.EXACT_KL and args.divergence.kind is not dv.Kind.KL:
            raise UsageError("exact-kl order requires the KL divergence", field="order")
    for name in ("eps_grid", "rho_grid", "nu_grid"):
        text = getattr(args, name, None)
        if text is not None:
            try:
                setattr(args, name, parse_grid(text))
            except ValueError as exc:
                raise UsageError(str(exc), field=name) from None
    if getattr(args, "eps_grid", None) is not None:
        _require(all(0 < e < 1 for e in args.eps_grid), "eps_grid", "every eps must lie in (0, 1)")
    if getattr(args, "rho_grid", None) is not None:
        _require(all(r > 0 for r in args.rho_grid), "rho_grid", "every rho must be positive")
    if getattr(args, "nu_grid", None) is not None:
        _require(args.nu_grid and min(args.nu_grid) > 2, "nu_grid", "every nu must exceed 2")
    if getattr(args, "samples", None) is not None:
        _require(args.samples >= 1, "samples", "samples must be at least 1")
    if args.command == "backtest":
        _require(args.window >= 1, "window", "window must be positive")
        _require(args.freq >= 1, "freq", "freq must be positive")
        if args.strategy == "dro":
            _require(args.rho is not None, "rho", "--rho is required for the dro strategy")
    if args.command == "calibrate":
        if args.target == "rho":
            _require(args.delta is not None, "delta", "--delta is required to calibrate rho")
        else:
            _require(args.rho is not None, "rho", "--rho is required to calibrate delta")
    if args.command in ("fit", "solve-dro", "solve-cco", "calibrate", "frontier"):
        _require(args.returns or args.model, "returns", "one of --returns or --model is required")
    return args


def _feasible(args):
    if getattr(args, "unbounded", False) or args.lower_bound is None:
        return FeasibleSet(None)
    return FeasibleSet(args.lower_bound)


def _read_returns(path, field="returns"):
    try:
        return read_returns_csv(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}", field=field) from None
    except ValueError as exc:
        raise UsageError(str(exc), field=field) from None


def load_model(args, family=None):
    """Model from ``--model`` JSON or a fit of ``--returns``; returns (model, assets)."""
    family = family or args.family
    if getattr(args, "model", None):
        try:
            with open(args.model) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read model {args.model}: {exc}", field="model") from None
        model = MomentModel.from_dict(d)
        if family is not None and family is not model.family:
            model = model.with_family(family, nu=model.nu if family is Family.STUDENT_T else None)
        return model, d.get("assets")
    returns = _read_returns(args.returns)
    family = family or Family.parse(getattr(args, "family_fit", None) or "empirical")
    if family is Family.NORMAL:
        model = estimate_normal(returns)
    elif family is Family.STUDENT_T:
        model = fit_student_t(returns, args.nu_grid or DEFAULT_NU_GRID)
    else:
        model = estimate_moments(returns)
    return model, returns.assets


def _model_record(model, assets):
    d = model.to_dict()
    d["assets"] = list(assets) if assets is not None else [f"a{i}" for i in range(model.n)]
    return d


# --------------------------------------------------------------------------
# subcommands; each returns (exit code, payload, kind) with kind json|csv


def cmd_fit(args):
    model, assets = load_model(args)
    return EXIT_OK, _model_record(model, assets)


def _solution_payload(sol: PortfolioSolution, model, assets, extra):
    d = sol.to_dict(assets or [f"a{i}" for i in range(model.n)])
    d.update(extra)
    d["model"] = _model_record(model, assets)
    return d


def cmd_solve_dro(args):
    model, assets = load_model(args)
    cfg = DroConfig(args.rho, args.order, args.divergence)
    feasible = _feasible(args)
    if not feasible.bounded and cfg.order is Order.SECOND:
        sol = solve_dro_closed_form(model, cfg)
    else:
        sol = solve_dro_numeric(model, cfg, feasible, seed=args.seed)
    extra = {"problem": "dro", "rho": args.rho, "order": cfg.order.value,
             "divergence": str(args.divergence), "lower_bound": feasible.lower}
    return EXIT_OK, _solution_payload(sol, model, assets, extra)


def cmd_solve_cco(args):
    model, assets = load_model(args)
    spec = ChanceSpec(args.eps, args.delta)
    feasible = _feasible(args)
    if feasible.bounded:
        sol = solve_cco_numeric(model, spec, feasible)
    else:
        sol = solve_cco_closed_form(model, spec)
    extra = {"problem": "cco", "eps": args.eps, "delta": args.delta, "lower_bound": feasible.lower}
    return EXIT_OK, _solution_payload(sol, model, assets, extra)


def cmd_verify(args):
    try:
        with open(args.weights) as fh:
            w = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read weights {args.weights}: {exc}", field="weights") from None
    if "weights" not in w or not isinstance(w["weights"], dict):
        raise UsageError("weights JSON must contain a 'weights' object", field="weights")
    if args.returns or args.model:
        model, assets = load_model(args)
    elif "model" in w:
        model = MomentModel.from_dict(w["model"])
        assets = w["model"].get("assets")
        if args.family is not None and args.family is not model.family:
            model = model.with_family(args.family, nu=model.nu)
    else:
        raise UsageError("no model: pass --returns/--model or use weights written by solve-*",
                         field="returns")
    if model.family is Family.EMPIRICAL:
        raise UsageError("verification needs a generative family (normal or t)", field="family")
    assets = assets or [f"a{i}" for i in range(model.n)]
    missing = [a for a in assets if a not in w["weights"]]
    if missing or len(w["weights"]) != len(assets):
        raise UsageError(f"weights do not match model assets (missing {missing})", field="weights")
    x = np.array([float(w["weights"][a]) for a in assets])
    spec = ChanceSpec(args.eps, args.delta)
    freq, se = verify_chance(model, x, spec, args.samples, args.seed)
    return EXIT_OK, {
        "frequency": freq, "stderr": se, "eps": args.eps, "delta": args.delta,
        "samples": args.samples, "seed": args.seed, "family": model.family.value,
        "var_approx": var_approx(model, args.eps, x),
        "within_3se": bool(freq <= args.eps + 3.0 * se),
    }


def cmd_calibrate(args):
    model, _ = load_model(args)
    feasible = _feasible(args)
    if args.target == "rho":
        r = equivalent_rho(model, args.divergence, ChanceSpec(args.eps, args.delta), feasible, args.order)
        payload = {"rho": r.rho, "cco_value": r.cco_value, "dro_value": r.dro_value, "gap": r.gap,
                   "bracket": list(r.bracket), "iterations": r.iterations, "converged": r.converged,
                   **r.diagnostics}
    else:
        p = equivalent_delta(model, args.divergence, args.rho, args.eps, feasible, args.order)
        payload = {"rho": args.rho, "eps": p.eps, "delta": p.delta, "status": p.status,
                   "dro_value": p.dro_value, "cco_value": p.cco_value}
    payload.update(status=payload.get("status", "ok"), target=args.target,
                   family=model.family.value, lower_bound=feasible.lower)
    return EXIT_OK, payload


def cmd_frontier(args):
    model, _ = load_model(args)
    points = frontier(model, args.divergence, args.rho, args.eps_grid, _feasible(args), args.order)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["eps", "delta", "status"])
    for pt in points:
        wr.writerow([repr(pt.eps), "" if pt.delta is None else repr(pt.delta), pt.status])
    return EXIT_OK, buf.getvalue()


def cmd_backtest(args):
    returns = _read_returns(args.returns)
    if args.strategy == "dro":
        strategy = DRO(args.rho, args.divergence, args.order)
    elif args.strategy == "nominal":
        strategy = Nominal()
    else:
        strategy = MeanVariance(-math.inf if args.r_target is None else args.r_target)
    lower = None if args.unbounded else args.lower_bound
    try:
        config = BacktestConfig(args.window, args.freq, strategy, lower)
        stats = run_backtest(returns, config)
    except DomainError as exc:
        raise UsageError(str(exc), field="window") from None
    if args.series:
        start = stats.rebalance_index[0]
        with open(args.series, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["date", "return"])
            for d, v in zip(returns.dates[start:], stats.series):
                wr.writerow([d, repr(float(v))])
    out = stats.to_dict()
    out["weights"] = [dict(zip(returns.assets, map(float, w))) for w in stats.weights]
    out["rebalance_dates"] = [returns.dates[t] for t in stats.rebalance_index]
    return EXIT_OK, out


def cmd_table2(args):
    return EXIT_OK, table2_csv(table2(args.rho_grid, method=args.method))


COMMANDS = {
    "fit": cmd_fit,
    "solve-dro": cmd_solve_dro,
    "solve-cco": cmd_solve_cco,
    "verify": cmd_verify,
    "calibrate": cmd_calibrate,
    "frontier": cmd_frontier,
    "backtest": cmd_backtest,
    "table2": cmd_table2,
}


# --------------------------------------------------------------------------
# entry point


def _command_name(parser, argv):
    names = parser._subparsers._group_actions[0].choices
    for tok in argv if argv is not None else sys.argv[1:]:
        if tok in names:
            return tok
    return parser.parse_args(argv).command


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` (command line wins)."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    early, _ = pre.parse_known_args(argv)
    if not early.config:
        return parser.parse_args(argv)
    args = argparse.Namespace(config=early.config, command=_command_name(parser, argv))
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}", field="config") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object", field="config")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "target"):
            raise UsageError(f"unknown config key {key!r}", field=key)
        defaults[dest] = value
    sub.set_defaults(**defaults)
    # required flags supplied by the config no longer need the command line
    for a in sub._actions:
        if a.dest in defaults:
            a.required = False
    return parser.parse_args(argv)


def _write(payload, path):
    text = payload if isinstance(payload, str) else json.dumps(_jsonable(payload), indent=2, default=str) + "\n"
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _error(kind, message, field=None, **extra):
    d = {"error": kind, "message": message}
    if field is not None:
        d["field"] = field
    d.update(extra)
    sys.stderr.write(json.dumps(_jsonable(d), default=str) + "\n")


def main(argv=None):
    parser = build_parser()
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = None
    try:
        args = validate(_apply_config(parser, argv))
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            code, payload = COMMANDS[args.command](args)
        _write(payload, args.output)
        return code
    except UsageError as exc:
        _error("usage", str(exc), exc.field)
        return EXIT_USAGE
    except (DomainError, NotPositiveDefiniteError, UnsupportedError) as exc:
        _error(type(exc).__name__, str(exc), boundary=getattr(exc, "boundary", None))
        return EXIT_USAGE
    except InfeasibleError as exc:
        report = exc.report.to_dict() if hasattr(exc.report, "to_dict") else exc.report
        payload = {"status": "infeasible", "error": type(exc).__name__, "message": str(exc), "report": report}
        _write(payload, args.output if args is not None else None)
        _error(type(exc).__name__, str(exc))
        return EXIT_INFEASIBLE
    except AmbiqError as exc:
        _error(type(exc).__name__, str(exc))
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
