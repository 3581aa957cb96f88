"""Closed-form prices and densities for lognormal components and their mixtures.

Component means are stored on the log-return scale, ``mu = E[ln(S_T / S_t)]``;
the absolute location ``ln(S_t) + mu`` is formed only inside the formulas.
Strike arguments accept scalars or numpy arrays and results follow the input
shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import ndtr, roots_laguerre

from .errors import DomainError, ParityError

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
WEIGHT_SUM_TOL = 1e-12

# Out-of-the-money calls are a difference of two nearly equal tail terms.
# Past this standardized log-strike both terms are tail probabilities and the
# price is evaluated from a positive integral instead.
_TAIL_Z = 2.0
_LAG_T, _LAG_W = roots_laguerre(96)


def normal_cdf(x: ArrayLike):
    """Standard normal CDF."""
    return _scalarize(ndtr(np.asarray(x, dtype=float)))


def normal_ccdf(x: ArrayLike):
    """Upper tail ``1 - Phi(x)``, evaluated without cancellation for large ``x``."""
    return _scalarize(ndtr(-np.asarray(x, dtype=float)))


def normal_pdf(x: ArrayLike):
    x = np.asarray(x, dtype=float)
    return _scalarize(_INV_SQRT_2PI * np.exp(-0.5 * x * x))


def _scalarize(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


def _positive(name: str, value: ArrayLike) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be finite and > 0")
    return arr


@dataclass(frozen=True)
class MarketContext:
    """Economic environment of a single expiry.

    ``rate`` and ``dividend_yield`` are continuously compounded annual rates,
    ``tau`` is the time to maturity in ACT/365 years.
    """

    spot: float
    rate: float
    dividend_yield: float
    tau: float

    def __post_init__(self):
        if not (math.isfinite(self.spot) and self.spot > 0):
            raise DomainError("spot must be > 0")
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise DomainError("tau must be > 0")
        if not (math.isfinite(self.rate) and math.isfinite(self.dividend_yield)):
            raise DomainError("rate and dividend_yield must be finite")

    @property
    def discount(self) -> float:
        return math.exp(-self.rate * self.tau)

    def forward(self) -> float:
        return self.spot * math.exp((self.rate - self.dividend_yield) * self.tau)


@dataclass(frozen=True)
class MixtureComponent:
    mu: float
    sigma: float

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise DomainError("component mu must be finite")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError("component sigma must be > 0")

    @classmethod
    def black_scholes(cls, ctx: MarketContext, vol: float) -> "MixtureComponent":
        """Point mass reproducing the Black-Scholes price at annual volatility ``vol``."""
        return cls(
            mu=(ctx.rate - ctx.dividend_yield - 0.5 * vol * vol) * ctx.tau,
            sigma=vol * math.sqrt(ctx.tau),
        )


@dataclass(frozen=True)
class MixtureModel:
    components: tuple[MixtureComponent, ...]
    weights: tuple[float, ...]
    context: MarketContext

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.components) == 0:
            raise DomainError("mixture needs at least one component")
        if len(self.components) != len(self.weights):
            raise DomainError("components and weights differ in length")
        if any(not math.isfinite(w) or w < 0 for w in self.weights):
            raise DomainError("mixture weights must be >= 0")
        if abs(math.fsum(self.weights) - 1.0) > WEIGHT_SUM_TOL:
            raise DomainError("mixture weights must sum to one")

    @classmethod
    def from_arrays(
        cls,
        mus: Sequence[float],
        weights: Sequence[float],
        sigma: float | Sequence[float],
        context: MarketContext,
    ) -> "MixtureModel":
        mus = np.atleast_1d(np.asarray(mus, dtype=float))
        sigmas = np.broadcast_to(np.asarray(sigma, dtype=float), mus.shape)
        comps = tuple(MixtureComponent(float(m), float(s)) for m, s in zip(mus, sigmas))
        return cls(comps, tuple(float(w) for w in np.atleast_1d(weights)), context)

    @property
    def mus(self) -> np.ndarray:
        return np.array([c.mu for c in self.components])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([c.sigma for c in self.components])

    @property
    def pis(self) -> np.ndarray:
        return np.array(self.weights)

    def __len__(self) -> int:
        return len(self.components)


# ---------------------------------------------------------------------------
# Black-Scholes and single components
# ---------------------------------------------------------------------------


def bs_call_price(ctx: MarketContext, strike: ArrayLike, vol: ArrayLike):
    """Black-Scholes European call with continuous dividend yield.

    ``vol`` may be an array broadcasting against ``strike`` (one volatility per strike).
    """
    x = _positive("strike", strike)
    vol = _positive("vol", vol)
    sd = vol * math.sqrt(ctx.tau)
    d1 = (np.log(ctx.spot / x) + (ctx.rate - ctx.dividend_yield + 0.5 * vol * vol) * ctx.tau) / sd
    d2 = d1 - sd
    price = (
        ctx.spot * math.exp(-ctx.dividend_yield * ctx.tau) * ndtr(d1)
        - x * ctx.discount * ndtr(d2)
    )
    price = _patch_tail(price, ctx.discount, x, -d2, np.asarray(sd))
    return _scalarize(np.maximum(price, 0.0))


def _tail_gap(z, sigma):
    """``int_0^inf expm1(sigma v) exp(-z v - v^2/2) dv`` by Gauss-Laguerre in ``t = z v``.

    Accurate to a few ulps for ``z - sigma >= 2``.
    """
    z = np.asarray(z, dtype=float)[..., None]
    sigma = np.asarray(sigma, dtype=float)[..., None]
    t = _LAG_T / z
    return (_LAG_W * np.expm1(sigma * t) * np.exp(-0.5 * t * t)).sum(axis=-1) / z[..., 0]


def _patch_tail(price, disc, strikes, z, sigma):
    """Replace cancellation-prone OTM entries by ``disc X phi(z) * gap(z, sigma)``."""
    z, sigma, strikes = np.broadcast_arrays(z, sigma, strikes)
    tail = z - sigma >= _TAIL_Z
    if not np.any(tail):
        return price
    price = np.array(np.broadcast_to(price, z.shape), dtype=float)
    zt = z[tail]
    price[tail] = disc * strikes[tail] * _INV_SQRT_2PI * np.exp(-0.5 * zt * zt) * _tail_gap(
        zt, sigma[tail]
    )
    return price


def _standardized_log_strike(ctx, strikes, mus, sigma):
    # log-moneyness first: ln(X/S) carries far less rounding than ln X - ln S
    return (np.log(strikes / ctx.spot) - mus) / sigma


def _component_prices(ctx: MarketContext, strikes, mus, sigma):
    """Broadcast kernel behind every component price.

    ``strikes`` and ``mus`` broadcast against each other; ``sigma`` is a scalar
    or broadcasts likewise.
    """
    mus = np.asarray(mus, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    z = _standardized_log_strike(ctx, strikes, mus, sigma)
    disc = ctx.discount
    mean_term = disc * ctx.spot * np.exp(mus + 0.5 * sigma * sigma) * ndtr(sigma - z)
    price = mean_term - disc * strikes * ndtr(-z)
    price = _patch_tail(price, disc, strikes, z, sigma)
    return np.maximum(price, 0.0)


def _component_dmu(ctx: MarketContext, strikes, mus, sigma):
    mus = np.asarray(mus, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    z = _standardized_log_strike(ctx, strikes, mus, sigma)
    return ctx.discount * ctx.spot * np.exp(mus + 0.5 * sigma * sigma) * ndtr(sigma - z)


def component_call_price(ctx: MarketContext, strike: ArrayLike, comp: MixtureComponent):
    """Discounted call payoff expectation under one lognormal component."""
    x = _positive("strike", strike)
    return _scalarize(_component_prices(ctx, x, comp.mu, comp.sigma))


def component_price_dmu(ctx: MarketContext, strike: ArrayLike, comp: MixtureComponent):
    """Sensitivity of :func:`component_call_price` to the component mean.

    The two density terms of the raw derivative cancel, leaving only the
    upper-tail probability of the share-measure term.
    """
    x = _positive("strike", strike)
    return _scalarize(_component_dmu(ctx, x, comp.mu, comp.sigma))


def component_zero_strike_price(ctx: MarketContext, comp: MixtureComponent) -> float:
    """Limit of the component price as the strike goes to zero."""
    return ctx.discount * ctx.spot * math.exp(comp.mu + 0.5 * comp.sigma ** 2)


# ---------------------------------------------------------------------------
# Mixtures
# ---------------------------------------------------------------------------


def _strike_grid(strike):
    x = _positive("strike", strike)
    return x, x[..., None]


def mixture_call_price(model: MixtureModel, strike: ArrayLike):
    x, xc = _strike_grid(strike)
    prices = _component_prices(model.context, xc, model.mus, model.sigmas)
    return _scalarize(prices @ model.pis)


def mixture_density(model: MixtureModel, s: ArrayLike):
    """Mixture of lognormal densities of the terminal price, per unit of currency."""
    s, sc = _strike_grid(s)
    sig = model.sigmas
    z = _standardized_log_strike(model.context, sc, model.mus, sig)
    dens = _INV_SQRT_2PI * np.exp(-0.5 * z * z) / (sc * sig)
    return _scalarize(dens @ model.pis)


def mixture_price_derivatives(model: MixtureModel, strike: ArrayLike):
    """Analytic first and second strike derivatives of the mixture price.

    Returns ``(dC/dX, d2C/dX2)``; the second derivative is the discounted
    density.
    """
    x, xc = _strike_grid(strike)
    ctx = model.context
    z = _standardized_log_strike(ctx, xc, model.mus, model.sigmas)
    # a probability; the weighted sum can round a few ulp above one
    slope = -ctx.discount * np.clip(ndtr(-z) @ model.pis, 0.0, 1.0)
    curvature = ctx.discount * np.asarray(mixture_density(model, x))
    return _scalarize(slope), _scalarize(curvature)


def mixture_mean(model: MixtureModel) -> float:
    """Risk-neutral expectation of the terminal price."""
    terms = model.pis * np.exp(model.mus + 0.5 * model.sigmas ** 2)
    return model.context.spot * math.fsum(terms)


def mixture_quantile_range(model: MixtureModel, p: float = 1e-9) -> tuple[float, float]:
    """Union of the per-component ``[q(p), q(1-p)]`` intervals in price units."""
    from scipy.special import ndtri

    k = -float(ndtri(p))
    mu_abs = math.log(model.context.spot) + model.mus
    lo = np.exp(mu_abs - k * model.sigmas).min()
    hi = np.exp(mu_abs + k * model.sigmas).max()
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Parity
# ---------------------------------------------------------------------------


def implied_dividend_from_parity(
    call: float,
    put: float,
    spot: float,
    rate: float,
    tau: float,
    strike: float,
) -> float:
    """Dividend yield solving ``P + S e^{-d tau} = C + X e^{-r tau}``."""
    if spot <= 0 or strike <= 0 or tau <= 0:
        raise DomainError("spot, strike and tau must be > 0")
    arg = (call - put + strike * math.exp(-rate * tau)) / spot
    if not arg > 0:
        raise ParityError(
            f"C - P + X e^(-r tau) = {arg * spot:.6g} is not positive; quotes violate parity"
        )
    return -math.log(arg) / tau
