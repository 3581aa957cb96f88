"""Least squares estimation of a lognormal-mixture state price density.

The fitted density is a finite mixture of lognormals sharing the scale
``sigma_floor``; only the mixing proportions and the component means are
estimated.  Proportions come from a simplex-constrained quadratic program,
means from damped Gauss-Newton steps, alternating from an equispaced grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, EmptyQuotesError, SpdError
from .pricing import (
    MarketContext,
    MixtureModel,
    _component_dmu,
    _component_prices,
    mixture_call_price,
)
from .qp import solve_weights_qp

WeightMode = Literal["unit", "inverse-price"]
WEIGHT_MODES = ("unit", "inverse-price")

PRUNE_TOL = 1e-12
INVERSE_PRICE_FLOOR = 1e-6
DEFAULT_BOX_WIDTH = 5.0
DEFAULT_CV_MULTIPLIERS = (0.50, 0.625, 0.75, 0.875, 1.0)


@dataclass(frozen=True)
class Quote:
    strike: float
    price: float
    weight: float = 1.0
    bid: float | None = None
    ask: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.strike) and self.strike > 0):
            raise DomainError(f"quote strike must be > 0, got {self.strike}")
        if not (math.isfinite(self.price) and self.price >= 0):
            raise DomainError(f"quote price must be >= 0, got {self.price}")
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise DomainError(f"quote weight must be >= 0, got {self.weight}")


@dataclass(frozen=True)
class FitConfig:
    """Estimator settings.

    ``sigma_floor`` and ``mu_bound`` are on the log-return scale over the whole
    horizon (not annualized).  ``mu_bound`` defaults to ``5 * sigma_floor`` and
    the box is centred on ``mu_center``, which ``fit`` sets to the carry
    ``(r - d) tau`` when left as ``None``.  ``n_components`` defaults to one more
    than the number of quotes.
    """

    sigma_floor: float
    mu_bound: float | None = None
    mu_center: float | None = None
    n_components: int | None = None
    forward_constraint: float | None = None
    newton_iters: int = 1
    kkt_tol: float = 1e-8
    weight_mode: WeightMode = "unit"

    def __post_init__(self):
        if not (math.isfinite(self.sigma_floor) and self.sigma_floor > 0):
            raise DomainError("sigma_floor must be > 0")
        if self.mu_bound is not None and not (math.isfinite(self.mu_bound) and self.mu_bound > 0):
            raise DomainError("mu_bound must be > 0")
        if self.n_components is not None and self.n_components < 1:
            raise DomainError("n_components must be >= 1")
        if self.newton_iters < 0:
            raise DomainError("newton_iters must be >= 0")
        if not self.kkt_tol > 0:
            raise DomainError("kkt_tol must be > 0")
        if self.weight_mode not in WEIGHT_MODES:
            raise DomainError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.forward_constraint is not None and not self.forward_constraint > 0:
            raise DomainError("forward_constraint must be > 0")

    @property
    def box_half_width(self) -> float:
        return self.mu_bound if self.mu_bound is not None else DEFAULT_BOX_WIDTH * self.sigma_floor

    @property
    def box_center(self) -> float:
        return 0.0 if self.mu_center is None else self.mu_center

    def resolved(self, ctx: MarketContext, n_quotes: int) -> "FitConfig":
        return replace(
            self,
            mu_bound=self.box_half_width,
            mu_center=(ctx.rate - ctx.dividend_yield) * ctx.tau if self.mu_center is None else self.mu_center,
            n_components=n_quotes + 1 if self.n_components is None else self.n_components,
        )


@dataclass(frozen=True)
class FitResult:
    model: MixtureModel
    objective: float
    kkt_residual: float
    iterations_used: int
    per_quote_residuals: np.ndarray
    config: FitConfig
    objective_trace: tuple[float, ...] = field(default=())


class CVSelection(NamedTuple):
    sigma_floor: float
    sigma_grid: np.ndarray
    scores: np.ndarray


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def quote_arrays(quotes: Sequence[Quote], weight_mode: WeightMode = "unit"):
    """Strikes, prices and effective weights.

    Inverse-price mode multiplies each quote weight by ``1 / price``; quotes
    priced below ``1e-6`` keep their own weight.
    """
    if len(quotes) == 0:
        raise EmptyQuotesError("no quotes to fit")
    if weight_mode not in WEIGHT_MODES:
        raise DomainError(f"weight_mode must be one of {WEIGHT_MODES}")
    strikes = np.array([q.strike for q in quotes], dtype=float)
    prices = np.array([q.price for q in quotes], dtype=float)
    w = np.array([q.weight for q in quotes], dtype=float)
    if weight_mode == "inverse-price":
        cheap = prices < INVERSE_PRICE_FLOOR
        w = np.where(cheap, w, w / np.where(cheap, 1.0, prices))
    return strikes, prices, w


def init_equispaced_means(config: FitConfig) -> np.ndarray:
    """Equispaced starting means spanning the whole box, endpoints included."""
    m = 1 if config.n_components is None else config.n_components
    c, M = config.box_center, config.box_half_width
    if m == 1:
        return np.array([c])
    return np.linspace(c - M, c + M, m)


def design_matrix(quotes_or_strikes, means, sigma_floor: float, ctx: MarketContext) -> np.ndarray:
    """Component call prices, one row per quote and one column per mean."""
    if len(quotes_or_strikes) and isinstance(quotes_or_strikes[0], Quote):
        strikes = np.array([q.strike for q in quotes_or_strikes], dtype=float)
    else:
        strikes = np.asarray(quotes_or_strikes, dtype=float)
    if strikes.size == 0:
        raise EmptyQuotesError("no quotes")
    if np.any(strikes <= 0) or not np.all(np.isfinite(strikes)):
        raise DomainError("strikes must be > 0")
    means = np.atleast_1d(np.asarray(means, dtype=float))
    return _component_prices(ctx, strikes[:, None], means[None, :], sigma_floor)


def forward_equality(means, sigma_floor: float, ctx: MarketContext, forward: float):
    """Coefficients and target of the linear forward-price constraint on the weights."""
    means = np.asarray(means, dtype=float)
    return ctx.spot * np.exp(0.5 * sigma_floor**2 + means), float(forward)


def _objective(prices, w, A, pis) -> float:
    r = prices - A @ pis
    return float(np.sum(w * r * r))


def residual_jacobian(strikes, means, pis, sigma_floor: float, ctx: MarketContext) -> np.ndarray:
    """Jacobian of ``r_i = C_i - sum_j pi_j C(X_i; mu_j)`` with respect to the means."""
    strikes = np.asarray(strikes, dtype=float)
    dmu = _component_dmu(ctx, strikes[:, None], np.asarray(means, dtype=float)[None, :], sigma_floor)
    return -dmu * np.asarray(pis, dtype=float)[None, :]


def _gauss_newton(strikes, prices, w, means, pis, sigma, ctx, steps, lo, hi):
    """Levenberg-damped Gauss-Newton on the means with step halving.

    Returns the new means and the objective after each accepted step.
    """
    means = np.array(means, dtype=float)
    A = design_matrix(strikes, means, sigma, ctx)
    obj = _objective(prices, w, A, pis)
    trace = []
    damping = 1e-10
    for _ in range(steps):
        if obj == 0.0:
            break
        r = prices - A @ pis
        J = residual_jacobian(strikes, means, pis, sigma, ctx)
        JW = J.T * w
        H = JW @ J
        g = JW @ r
        diag = np.diag(H).copy()
        scale = diag.max(initial=0.0)
        if scale <= 0:
            break
        # damping on the diagonal plus a ridge keeps inactive (zero-weight) atoms fixed
        lhs = H + damping * np.diag(diag) + 1e-12 * scale * np.eye(len(means))
        try:
            step = np.linalg.solve(lhs, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(lhs, -g, rcond=None)[0]
        t = 1.0
        accepted = False
        for _halving in range(40):
            trial = np.clip(means + t * step, lo, hi)
            A_trial = design_matrix(strikes, trial, sigma, ctx)
            obj_trial = _objective(prices, w, A_trial, pis)
            if obj_trial <= obj:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            damping *= 10.0
            continue
        converged = obj_trial >= obj * (1.0 - 1e-14)
        means, A, obj = trial, A_trial, obj_trial
        trace.append(obj)
        damping = max(damping * (0.1 if t == 1.0 else 2.0), 1e-12)
        if converged:
            break
    return means, trace


def refine_means_newton(quotes: Sequence[Quote], model: MixtureModel, config: FitConfig) -> np.ndarray:
    """Up to ``config.newton_iters`` damped Gauss-Newton steps on the component means.

    Weights and the shared scale stay fixed; each mean is clipped to the box of
    ``config``.  The weighted objective never increases.
    """
    means = model.mus
    if config.newton_iters == 0:
        return means
    ctx = model.context
    strikes, prices, w = quote_arrays(quotes, config.weight_mode)
    cfg = config.resolved(ctx, len(quotes))
    lo, hi = cfg.mu_center - cfg.mu_bound, cfg.mu_center + cfg.mu_bound
    sigma = float(model.sigmas[0])
    new, _ = _gauss_newton(strikes, prices, w, means, model.pis, sigma, ctx, config.newton_iters, lo, hi)
    return new


# ---------------------------------------------------------------------------
# Full fit
# ---------------------------------------------------------------------------


def _canonical(quotes: Iterable[Quote]) -> list[Quote]:
    return sorted(quotes, key=lambda q: (q.strike, q.price, q.weight))


def _solve(strikes, prices, w, means, cfg: FitConfig, ctx: MarketContext, x0=None):
    # the QP is invariant to column order; keep a sorted, duplicate-free grid
    means, inverse = np.unique(means, return_inverse=True)
    if x0 is not None:
        x0 = np.bincount(inverse, weights=x0, minlength=means.size)
    A = design_matrix(strikes, means, cfg.sigma_floor, ctx)
    eq = None
    if cfg.forward_constraint is not None:
        eq = forward_equality(means, cfg.sigma_floor, ctx, cfg.forward_constraint)
    res = solve_weights_qp(A, prices, w, equality=eq, kkt_tol=cfg.kkt_tol, x0=x0)
    return means, res


def fit(quotes: Sequence[Quote], ctx: MarketContext, config: FitConfig) -> FitResult:
    """Weighted least squares fit of the mixture to call quotes.

    Starts from equispaced means, then alternates a weight solve with one
    Gauss-Newton step on the means ``config.newton_iters`` times and finishes
    with a weight solve.  Components with weight below ``1e-12`` are pruned.
    """
    quotes = _canonical(quotes)
    if not quotes:
        raise EmptyQuotesError("no quotes to fit")
    cfg = config.resolved(ctx, len(quotes))
    strikes, prices, w = quote_arrays(quotes, cfg.weight_mode)
    lo, hi = cfg.mu_center - cfg.mu_bound, cfg.mu_center + cfg.mu_bound

    means = init_equispaced_means(cfg)
    weights = None
    trace: list[float] = []
    iterations = 0
    for _ in range(cfg.newton_iters):
        means, res = _solve(strikes, prices, w, means, cfg, ctx, weights)
        trace.append(res.objective)
        active = res.x > 0
        new_active, gn_trace = _gauss_newton(
            strikes, prices, w, means[active], res.x[active], cfg.sigma_floor, ctx, 1, lo, hi
        )
        iterations += 1
        trace.extend(gn_trace)
        if not gn_trace:
            # no descent available from the current support
            break
        means = means.copy()
        means[active] = new_active
        weights = res.x
    means, res = _solve(strikes, prices, w, means, cfg, ctx, weights)
    trace.append(res.objective)

    keep = res.x >= PRUNE_TOL
    pis = res.x[keep]
    pis = pis / math.fsum(pis)
    model = MixtureModel.from_arrays(means[keep], pis, cfg.sigma_floor, ctx)
    fitted = np.asarray(mixture_call_price(model, strikes))
    resid = prices - fitted
    return FitResult(
        model=model,
        objective=float(np.sum(w * resid * resid)) / len(quotes),
        kkt_residual=res.kkt.residual,
        iterations_used=iterations,
        per_quote_residuals=resid,
        config=cfg,
        objective_trace=tuple(trace),
    )


# ---------------------------------------------------------------------------
# Cross-validation of the component scale
# ---------------------------------------------------------------------------


def default_sigma_grid(quotes: Sequence[Quote], ctx: MarketContext, weight_mode: WeightMode = "unit") -> np.ndarray:
    """Candidate scales around the Black-Scholes fit, from one half to one times its volatility."""
    from .baselines import fit_black_scholes

    bs = fit_black_scholes(quotes, ctx, weight_mode)
    return np.array(DEFAULT_CV_MULTIPLIERS) * bs.vol * math.sqrt(ctx.tau)


def loocv_select_sigma(
    quotes: Sequence[Quote],
    ctx: MarketContext,
    config_template: FitConfig | None = None,
    sigma_grid: Sequence[float] | None = None,
) -> CVSelection:
    """Choose ``sigma_floor`` by leave-one-out weighted squared price error.

    A candidate whose leave-one-out fits fail scores ``+inf``.  Ties go to
    the larger scale.
    """
    quotes = _canonical(quotes)
    if len(quotes) < 3:
        raise DomainError("cross-validation needs at least 3 quotes")
    template = config_template or FitConfig(sigma_floor=1.0)
    if sigma_grid is None:
        sigma_grid = default_sigma_grid(quotes, ctx, template.weight_mode)
    grid = np.asarray(sigma_grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise DomainError("sigma grid must be nonempty and positive")
    strikes, prices, w = quote_arrays(quotes, template.weight_mode)

    scores = np.empty(grid.size)
    for k, sigma in enumerate(grid):
        cfg = replace(template, sigma_floor=float(sigma))
        total = 0.0
        try:
            for i in range(len(quotes)):
                train = quotes[:i] + quotes[i + 1 :]
                res = fit(train, ctx, cfg)
                pred = mixture_call_price(res.model, strikes[i])
                total += w[i] * (prices[i] - pred) ** 2
        except SpdError:
            total = math.inf
        scores[k] = total

    best = scores.min()
    if not math.isfinite(best):
        raise DomainError("every sigma candidate failed cross-validation")
    tied = np.flatnonzero(scores <= best * (1 + 1e-12))
    chosen = tied[np.argmax(grid[tied])]
    return CVSelection(float(grid[chosen]), grid, scores)
