"""Reference estimators: a single-volatility Black-Scholes fit and raw second differences."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError, EmptyQuotesError
from .estimator import Quote, WeightMode, quote_arrays
from .pricing import MarketContext, bs_call_price

VOL_BOUNDS = (1e-4, 5.0)
SCAN_POINTS = 64


@dataclass(frozen=True)
class BsFit:
    vol: float
    objective: float


@dataclass(frozen=True)
class GridDensity:
    grid: np.ndarray
    values: np.ndarray

    @property
    def interior(self) -> np.ndarray:
        return self.grid[1:-1]


def fit_black_scholes(quotes: Sequence[Quote], ctx: MarketContext, weight_mode: WeightMode = "unit") -> BsFit:
    """Least squares implied volatility shared by all quotes.

    The objective need not be unimodal, so a 64-point log-spaced scan over
    ``[1e-4, 5]`` picks the bracket and a bounded Brent search refines it.
    """
    if len(quotes) == 0:
        raise EmptyQuotesError("no quotes to fit")
    strikes, prices, w = quote_arrays(quotes, weight_mode)
    n = len(quotes)

    def objective(vol):
        r = prices - bs_call_price(ctx, strikes, vol)
        return float(np.sum(w * r * r)) / n

    scan = np.geomspace(*VOL_BOUNDS, SCAN_POINTS)
    values = [objective(v) for v in scan]
    k = int(np.argmin(values))
    lo = scan[max(k - 1, 0)]
    hi = scan[min(k + 1, SCAN_POINTS - 1)]
    res = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12, "maxiter": 500})
    vol, best = float(res.x), float(res.fun)
    if values[k] < best:
        vol, best = float(scan[k]), values[k]
    return BsFit(vol=vol, objective=best)


def naive_second_difference_spd(quotes: Sequence[Quote], ctx: MarketContext) -> GridDensity:
    """Density from divided second differences of the raw quotes.

    Quotes sharing a strike are averaged.  Nothing is smoothed or clipped, so
    noisy prices can and do produce negative values.
    """
    by_strike: dict[float, list[float]] = {}
    for q in quotes:
        by_strike.setdefault(q.strike, []).append(q.price)
    if len(by_strike) < 3:
        raise DomainError("need at least 3 distinct strikes")
    x = np.array(sorted(by_strike))
    c = np.array([math.fsum(by_strike[k]) / len(by_strike[k]) for k in x])
    h = np.diff(x)
    slopes = np.diff(c) / h
    second = 2.0 * np.diff(slopes) / (h[:-1] + h[1:])
    return GridDensity(grid=x, values=math.exp(ctx.rate * ctx.tau) * second)
