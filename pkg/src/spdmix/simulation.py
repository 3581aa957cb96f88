"""Synthetic smile market and Monte Carlo replication of the estimator.

The market has an implied volatility linear in strike and observation noise
that is uniform with a half-width proportional to the option value, the
proportion itself growing linearly in strike.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .baselines import fit_black_scholes
from .errors import DomainError, SpdError, StudyAbortedError
from .estimator import FitConfig, Quote, WeightMode, fit, loocv_select_sigma
from .pricing import MarketContext, bs_call_price, mixture_call_price, mixture_density

TRUE_DENSITY_STEP = 0.01
MAX_FAILURE_RATE = 0.10
DEFAULT_GRID_POINTS = 141

# Noise in the smile market is proportional to the option value, so quotes are
# weighted by inverse price unless a configuration says otherwise.
DEFAULT_STUDY_CONFIG = FitConfig(sigma_floor=1.0, weight_mode="inverse-price")


@dataclass(frozen=True)
class SmileScenario:
    ctx: MarketContext
    strike_lo: float
    strike_hi: float
    n_quotes: int
    vol_lo: float
    vol_hi: float
    noise_lo: float
    noise_hi: float

    def __post_init__(self):
        if not self.strike_lo < self.strike_hi or self.strike_lo <= 0:
            raise DomainError("need 0 < strike_lo < strike_hi")
        if self.n_quotes < 2:
            raise DomainError("n_quotes must be >= 2")
        if not (self.vol_lo > 0 and self.vol_hi > 0):
            raise DomainError("volatilities must be > 0")
        if self.noise_lo < 0 or self.noise_hi < 0:
            raise DomainError("noise half-widths must be >= 0")

    def _lerp(self, x, lo, hi):
        t = (np.asarray(x, dtype=float) - self.strike_lo) / (self.strike_hi - self.strike_lo)
        return lo + t * (hi - lo)

    def vol(self, strike):
        """Implied volatility at ``strike``, extended linearly outside the quoted range."""
        v = self._lerp(strike, self.vol_lo, self.vol_hi)
        if np.any(v <= 0):
            raise DomainError("smile volatility is not positive at the requested strike")
        return v

    def noise_pct(self, strike):
        return self._lerp(strike, self.noise_lo, self.noise_hi)

    @property
    def strikes(self) -> np.ndarray:
        return np.linspace(self.strike_lo, self.strike_hi, self.n_quotes)

    def true_price(self, strike):
        """Noise-free call price, each strike valued at its own smile volatility."""
        strike = np.asarray(strike, dtype=float)
        return bs_call_price(self.ctx, strike, self.vol(strike))

    def true_density(self, s, step: float = TRUE_DENSITY_STEP):
        """Risk-neutral density of the smile market by a central second difference of prices."""
        s = np.asarray(s, dtype=float)
        c = self.true_price
        second = (c(s - step) - 2.0 * c(s) + c(s + step)) / (step * step)
        return math.exp(self.ctx.rate * self.ctx.tau) * second

    def with_quotes(self, n_quotes: int) -> "SmileScenario":
        return SmileScenario(
            self.ctx, self.strike_lo, self.strike_hi, n_quotes, self.vol_lo, self.vol_hi, self.noise_lo, self.noise_hi
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ctx"] = asdict(self.ctx)
        return d


def asd_scenario() -> SmileScenario:
    """S=1365, r=4.5%, d=2.5%, 30 days; 25 strikes on [1000, 1700].

    Volatility falls from 40% to 20% and the noise half-width rises from 3% to
    18% of the option value across the strike range.
    """
    ctx = MarketContext(spot=1365.0, rate=0.045, dividend_yield=0.025, tau=30 / 365)
    return SmileScenario(ctx, 1000.0, 1700.0, 25, 0.40, 0.20, 0.03, 0.18)


def simulate_quotes(scenario: SmileScenario, seed: int) -> list[Quote]:
    """One noisy draw of unit-weight quotes; prices are floored at zero."""
    rng = np.random.default_rng(seed)
    x = scenario.strikes
    c = scenario.true_price(x)
    half = scenario.noise_pct(x) * c
    obs = np.maximum(c + rng.uniform(-1.0, 1.0, x.size) * half, 0.0)
    return [Quote(float(a), float(b)) for a, b in zip(x, obs)]


# ---------------------------------------------------------------------------
# Monte Carlo study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunResult:
    seed: int
    sigma_floor: float
    price: np.ndarray
    density: np.ndarray
    price_ise: float
    density_ise: float


@dataclass(frozen=True)
class StudyReport:
    scenario: SmileScenario
    seeds: tuple[int, ...]
    strike_grid: np.ndarray
    density_grid: np.ndarray
    true_price: np.ndarray
    true_density: np.ndarray
    price_mean: np.ndarray
    price_lo: np.ndarray
    price_hi: np.ndarray
    density_mean: np.ndarray
    density_lo: np.ndarray
    density_hi: np.ndarray
    price_ise: np.ndarray
    density_ise: np.ndarray
    sigma_floors: np.ndarray
    failures: tuple[tuple[int, str], ...] = field(default=())

    @property
    def n_runs(self) -> int:
        return len(self.seeds) + len(self.failures)

    def price_coverage(self) -> float:
        """Share of strike-grid points where the true price lies inside the band."""
        inside = (self.price_lo <= self.true_price) & (self.true_price <= self.price_hi)
        return float(np.mean(inside))

    def to_dict(self) -> dict:
        def arr(a):
            return [float(v) for v in a]

        return {
            "scenario": self.scenario.to_dict(),
            "seeds": list(self.seeds),
            "failures": [{"seed": s, "error": e} for s, e in self.failures],
            "price": {
                "grid": arr(self.strike_grid),
                "true": arr(self.true_price),
                "mean": arr(self.price_mean),
                "q025": arr(self.price_lo),
                "q975": arr(self.price_hi),
                "coverage": self.price_coverage(),
            },
            "density": {
                "grid": arr(self.density_grid),
                "true": arr(self.true_density),
                "mean": arr(self.density_mean),
                "q025": arr(self.density_lo),
                "q975": arr(self.density_hi),
            },
            "runs": {
                "price_ise": arr(self.price_ise),
                "density_ise": arr(self.density_ise),
                "sigma_floor": arr(self.sigma_floors),
            },
        }


def _ise(grid, a, b) -> float:
    d = np.asarray(a) - np.asarray(b)
    return float(np.trapezoid(d * d, grid))


def rule_of_thumb_sigma(quotes: Sequence[Quote], ctx: MarketContext, weight_mode: WeightMode = "unit") -> float:
    """Three quarters of the Black-Scholes fitted volatility, on the horizon scale."""
    return 0.75 * fit_black_scholes(quotes, ctx, weight_mode).vol * math.sqrt(ctx.tau)


def _one_run(args) -> RunResult | tuple[int, str]:
    scenario, seed, config, sigma_rule, strike_grid, density_grid, true_price, true_density = args
    quotes = simulate_quotes(scenario, seed)
    ctx = scenario.ctx
    try:
        if sigma_rule == "cv":
            sigma = loocv_select_sigma(quotes, ctx, config).sigma_floor
        elif sigma_rule == "rule-of-thumb":
            sigma = rule_of_thumb_sigma(quotes, ctx, config.weight_mode)
        else:
            sigma = config.sigma_floor
        res = fit(quotes, ctx, replace(config, sigma_floor=sigma))
    except SpdError as exc:
        return seed, f"{exc.code}: {exc}"
    price = np.asarray(mixture_call_price(res.model, strike_grid))
    density = np.asarray(mixture_density(res.model, density_grid))
    return RunResult(
        seed,
        sigma,
        price,
        density,
        _ise(strike_grid, price, true_price),
        _ise(density_grid, density, true_density),
    )


def default_workers() -> int:
    raw = os.environ.get("THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


SIGMA_RULES = ("fixed", "cv", "rule-of-thumb")


def monte_carlo_study(
    scenario: SmileScenario,
    n_runs: int,
    fit_config: FitConfig | None = None,
    density_grid=None,
    seed0: int = 0,
    *,
    sigma_rule: str | None = None,
    strike_grid=None,
    workers: int | None = None,
) -> StudyReport:
    """Simulate, fit and summarize ``n_runs`` independent draws.

    Run ``k`` uses seed ``seed0 + k``.  ``sigma_rule`` picks the component scale
    per run: ``"cv"`` (leave-one-out, the default when no ``fit_config`` is
    given), ``"rule-of-thumb"`` (0.75 of the fitted Black-Scholes volatility)
    or ``"fixed"`` (``fit_config.sigma_floor``, the default otherwise).
    Without a ``fit_config`` quotes are weighted by inverse price.
    Failed runs are recorded and excluded; more than 10% failures abort.
    """
    if n_runs < 1:
        raise DomainError("n_runs must be >= 1")
    if sigma_rule is None:
        sigma_rule = "cv" if fit_config is None else "fixed"
    if sigma_rule not in SIGMA_RULES:
        raise DomainError(f"sigma_rule must be one of {SIGMA_RULES}")
    if fit_config is None:
        fit_config = DEFAULT_STUDY_CONFIG
    lo, hi = scenario.strike_lo, scenario.strike_hi
    strike_grid = np.linspace(lo, hi, DEFAULT_GRID_POINTS) if strike_grid is None else np.asarray(strike_grid, float)
    density_grid = np.linspace(lo, hi, DEFAULT_GRID_POINTS) if density_grid is None else np.asarray(density_grid, float)
    true_price = np.asarray(scenario.true_price(strike_grid))
    true_density = np.asarray(scenario.true_density(density_grid))

    jobs = [
        (scenario, seed0 + k, fit_config, sigma_rule, strike_grid, density_grid, true_price, true_density)
        for k in range(n_runs)
    ]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_one_run, jobs))
    else:
        outcomes = [_one_run(j) for j in jobs]
    return summarize(scenario, strike_grid, density_grid, true_price, true_density, outcomes)


def summarize(scenario, strike_grid, density_grid, true_price, true_density, outcomes) -> StudyReport:
    """Aggregate run outcomes; the result does not depend on their order."""
    runs = sorted((o for o in outcomes if isinstance(o, RunResult)), key=lambda r: r.seed)
    failures = tuple(sorted(o for o in outcomes if not isinstance(o, RunResult)))
    total = len(runs) + len(failures)
    if len(failures) > MAX_FAILURE_RATE * total or not runs:
        raise StudyAbortedError(f"{len(failures)} of {total} runs failed")
    prices = np.vstack([r.price for r in runs])
    dens = np.vstack([r.density for r in runs])
    p_lo, p_hi = np.quantile(prices, [0.025, 0.975], axis=0)
    d_lo, d_hi = np.quantile(dens, [0.025, 0.975], axis=0)
    return StudyReport(
        scenario=scenario,
        seeds=tuple(r.seed for r in runs),
        strike_grid=strike_grid,
        density_grid=density_grid,
        true_price=true_price,
        true_density=true_density,
        price_mean=prices.mean(axis=0),
        price_lo=p_lo,
        price_hi=p_hi,
        density_mean=dens.mean(axis=0),
        density_lo=d_lo,
        density_hi=d_hi,
        price_ise=np.array([r.price_ise for r in runs]),
        density_ise=np.array([r.density_ise for r in runs]),
        sigma_floors=np.array([r.sigma_floor for r in runs]),
        failures=failures,
    )
