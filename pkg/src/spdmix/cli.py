"""Command line front end.

Every failure exits nonzero after printing one line ``ERROR <code>: <detail>``
to standard error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import fit_black_scholes, naive_second_difference_spd
from .errors import SpdError
from .estimator import WEIGHT_MODES, FitConfig, fit, loocv_select_sigma
from .io import (
    ModelDocument,
    dumps_report,
    format_grid_csv,
    load_model,
    parse_grid_spec,
    parse_quotes_csv,
    save_model,
)
from .pricing import MarketContext, implied_dividend_from_parity, mixture_call_price, mixture_density
from .simulation import SIGMA_RULES, SmileScenario, asd_scenario, monte_carlo_study

EXIT_ERROR = 1
EXIT_USAGE = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _market_args(p, with_div=True):
    p.add_argument("--spot", type=float, required=True)
    p.add_argument("--rate", type=float, required=True)
    if with_div:
        p.add_argument("--div", type=float, default=0.0, help="continuous dividend yield (default 0)")
    p.add_argument("--tau", type=float, required=True, help="time to maturity in years")


def _context(args) -> MarketContext:
    return MarketContext(args.spot, args.rate, getattr(args, "div", 0.0), args.tau)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spdmix", description="Lognormal-mixture state price density estimation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a mixture to call quotes")
    p.add_argument("--quotes", required=True)
    _market_args(p)
    scale = p.add_mutually_exclusive_group(required=True)
    scale.add_argument("--sigma-floor", type=float, help="component scale on the horizon log-return scale")
    scale.add_argument("--cv", action="store_true", help="choose the scale by leave-one-out cross-validation")
    p.add_argument("--sigma-grid", help="comma-separated candidate scales for --cv")
    p.add_argument(
        "--forward-constraint",
        nargs="?",
        const="market",
        help="pin the mixture mean to this forward (default: the market forward)",
    )
    p.add_argument("--weights", choices=WEIGHT_MODES, default="unit")
    p.add_argument("--components", type=int)
    p.add_argument("--newton-iters", type=int, default=1)
    p.add_argument("--mu-bound", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a fitted model on a grid")
    p.add_argument("--model", required=True)
    grid = p.add_mutually_exclusive_group(required=True)
    grid.add_argument("--price-grid", help="lo:hi:n strikes")
    grid.add_argument("--density-grid", help="lo:hi:n abscissae")
    p.add_argument("--x-axis", choices=("price", "excess-log-return"), default="price")
    p.add_argument("--out", required=True)

    p = sub.add_parser("baseline-bs", help="single-volatility Black-Scholes fit")
    p.add_argument("--quotes", required=True)
    _market_args(p)
    p.add_argument("--weights", choices=WEIGHT_MODES, default="unit")
    p.add_argument("--out")

    p = sub.add_parser("baseline-naive", help="second differences of the raw quotes")
    p.add_argument("--quotes", required=True)
    _market_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo study on the smile scenario")
    base = asd_scenario()
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-quotes", type=int, default=base.n_quotes)
    p.add_argument("--strike-lo", type=float, default=base.strike_lo)
    p.add_argument("--strike-hi", type=float, default=base.strike_hi)
    p.add_argument("--vol-lo", type=float, default=base.vol_lo)
    p.add_argument("--vol-hi", type=float, default=base.vol_hi)
    p.add_argument("--noise-lo", type=float, default=base.noise_lo)
    p.add_argument("--noise-hi", type=float, default=base.noise_hi)
    p.add_argument("--sigma-rule", choices=SIGMA_RULES, default="cv")
    p.add_argument("--sigma-floor", type=float, help="scale for --sigma-rule fixed")
    p.add_argument("--newton-iters", type=int, default=1)
    p.add_argument("--threads", type=int, help="worker processes (default: THREADS or 1)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("parity", help="dividend yield implied by put-call parity")
    p.add_argument("--call", type=float, required=True)
    p.add_argument("--put", type=float, required=True)
    _market_args(p, with_div=False)
    p.add_argument("--strike", type=float, required=True)
    return parser


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_fit(args) -> int:
    ctx = _context(args)
    quotes = parse_quotes_csv(args.quotes)
    forward = None
    if args.forward_constraint is not None:
        forward = ctx.forward() if args.forward_constraint == "market" else float(args.forward_constraint)
    config = FitConfig(
        sigma_floor=args.sigma_floor if args.sigma_floor is not None else 1.0,
        mu_bound=args.mu_bound,
        n_components=args.components,
        forward_constraint=forward,
        newton_iters=args.newton_iters,
        weight_mode=args.weights,
    )
    cv = None
    if args.cv:
        grid = None
        if args.sigma_grid:
            grid = [float(s) for s in args.sigma_grid.split(",")]
        cv = loocv_select_sigma(quotes, ctx, config, grid)
        config = replace(config, sigma_floor=cv.sigma_floor)
    result = fit(quotes, ctx, config)
    save_model(args.out, ModelDocument.from_fit(result, cv))
    print(
        f"sigma_floor={config.sigma_floor!r} components={len(result.model)} "
        f"objective={result.objective!r} kkt_residual={result.kkt_residual!r}"
    )
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.model).model
    ctx = model.context
    if args.price_grid is not None:
        lo, hi, n = parse_grid_spec(args.price_grid)
        x = np.linspace(lo, hi, n)
        text = format_grid_csv(x, np.atleast_1d(mixture_call_price(model, x)), ("strike", "call_price"))
    else:
        lo, hi, n = parse_grid_spec(args.density_grid)
        x = np.linspace(lo, hi, n)
        if args.x_axis == "price":
            text = format_grid_csv(x, np.atleast_1d(mixture_density(model, x)), ("terminal_price", "density"))
        else:
            # density of y = ln(S_T / S) - r tau, so f_Y(y) = f_S(s) * s
            s = ctx.spot * np.exp(x + ctx.rate * ctx.tau)
            text = format_grid_csv(x, np.atleast_1d(mixture_density(model, s)) * s, ("excess_log_return", "density"))
    Path(args.out).write_text(text, encoding="utf-8")
    return 0


def _cmd_baseline_bs(args) -> int:
    res = fit_black_scholes(parse_quotes_csv(args.quotes), _context(args), args.weights)
    print(f"vol={res.vol!r} objective={res.objective!r}")
    if args.out:
        Path(args.out).write_text(dumps_report({"vol": res.vol, "objective": res.objective}), encoding="utf-8")
    return 0


def _cmd_baseline_naive(args) -> int:
    dens = naive_second_difference_spd(parse_quotes_csv(args.quotes), _context(args))
    Path(args.out).write_text(format_grid_csv(dens.interior, dens.values, ("strike", "density")), encoding="utf-8")
    negative = int(np.sum(dens.values < 0))
    print(f"points={dens.values.size} negative={negative}")
    return 0


def _cmd_simulate(args) -> int:
    base = asd_scenario()
    scenario = SmileScenario(
        base.ctx,
        args.strike_lo,
        args.strike_hi,
        args.n_quotes,
        args.vol_lo,
        args.vol_hi,
        args.noise_lo,
        args.noise_hi,
    )
    if args.sigma_rule == "fixed" and args.sigma_floor is None:
        raise _UsageError("--sigma-rule fixed needs --sigma-floor")
    config = FitConfig(sigma_floor=args.sigma_floor or 1.0, newton_iters=args.newton_iters)
    report = monte_carlo_study(
        scenario, args.runs, config, seed0=args.seed, sigma_rule=args.sigma_rule, workers=args.threads
    )
    Path(args.out).write_text(dumps_report(report.to_dict()), encoding="utf-8")
    print(
        f"runs={report.n_runs} failed={len(report.failures)} "
        f"price_coverage={report.price_coverage()!r} median_price_ise={float(np.median(report.price_ise))!r}"
    )
    return 0


def _cmd_parity(args) -> int:
    delta = implied_dividend_from_parity(args.call, args.put, args.spot, args.rate, args.tau, args.strike)
    print(repr(delta))
    return 0


COMMANDS = {
    "fit": _cmd_fit,
    "eval": _cmd_eval,
    "baseline-bs": _cmd_baseline_bs,
    "baseline-naive": _cmd_baseline_naive,
    "simulate": _cmd_simulate,
    "parity": _cmd_parity,
}


def _fail(code: str, detail: str, status: int) -> int:
    detail = " ".join(str(detail).split())
    print(f"ERROR {code}: {detail}", file=sys.stderr)
    return status


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except SpdError as exc:
        return _fail(exc.code, exc, EXIT_ERROR)
    except OSError as exc:
        return _fail("io", f"{exc.filename or ''} {exc.strerror or exc}", EXIT_ERROR)
    except ValueError as exc:
        return _fail("value", exc, EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
