import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import norm

import oracles
import spdmix.estimator as est
from spdmix.errors import DomainError, EmptyQuotesError, InfeasibleConstraintError
from spdmix.estimator import (
    FitConfig,
    Quote,
    design_matrix,
    fit,
    forward_equality,
    init_equispaced_means,
    loocv_select_sigma,
    quote_arrays,
    refine_means_newton,
    residual_jacobian,
)
from spdmix.pricing import (
    MarketContext,
    MixtureComponent,
    MixtureModel,
    bs_call_price,
    mixture_call_price,
    mixture_density,
    mixture_mean,
)

CTX = MarketContext(1365.0, 0.045, 0.025, 30 / 365)
STRIKES = np.linspace(1000.0, 1700.0, 25)
SQRT_TAU = math.sqrt(CTX.tau)


def bs_quotes(vol=0.2, strikes=STRIKES, ctx=CTX):
    return [Quote(float(x), float(c)) for x, c in zip(strikes, bs_call_price(ctx, strikes, vol))]


def smile_quotes(seed, n=25):
    """Noisy quotes from a linear smile, built here without the simulation module."""
    rng = np.random.default_rng(seed)
    x = np.linspace(1000.0, 1700.0, n)
    vol = 0.40 - 0.20 * (x - 1000.0) / 700.0
    p = 0.03 + 0.15 * (x - 1000.0) / 700.0
    c = np.array([bs_call_price(CTX, xi, vi) for xi, vi in zip(x, vol)])
    obs = np.maximum(c + rng.uniform(-1, 1, n) * p * c, 0.0)
    return [Quote(float(a), float(b)) for a, b in zip(x, obs)]


# -- initialization and design matrix ------------------------------------------


@pytest.mark.parametrize(
    "M, m, want",
    [(0.5, 3, [-0.5, 0.0, 0.5]), (0.5, 1, [0.0]), (1.0, 5, [-1, -0.5, 0, 0.5, 1])],
)
def test_init_equispaced(M, m, want):
    got = init_equispaced_means(FitConfig(sigma_floor=0.1, mu_bound=M, n_components=m))
    np.testing.assert_allclose(got, want, atol=1e-15)
    assert np.all(np.diff(got) > 0)


def test_resolved_config_defaults():
    cfg = FitConfig(sigma_floor=0.05).resolved(CTX, 25)
    assert cfg.n_components == 26
    assert cfg.mu_bound == pytest.approx(0.25)
    assert cfg.mu_center == pytest.approx(0.02 * CTX.tau)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(sigma_floor=0.0),
        dict(sigma_floor=0.1, mu_bound=-1.0),
        dict(sigma_floor=0.1, n_components=0),
        dict(sigma_floor=0.1, newton_iters=-1),
        dict(sigma_floor=0.1, kkt_tol=0.0),
        dict(sigma_floor=0.1, weight_mode="bid-ask"),
        dict(sigma_floor=0.1, forward_constraint=-5.0),
    ],
)
def test_config_rejects_invalid(kwargs):
    with pytest.raises(DomainError):
        FitConfig(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(strike=0.0, price=1.0), dict(strike=1.0, price=-1.0), dict(strike=1.0, price=1.0, weight=-1.0)])
def test_quote_rejects_invalid(kwargs):
    with pytest.raises(DomainError):
        Quote(**kwargs)


def test_design_column_is_black_scholes():
    comp = MixtureComponent.black_scholes(CTX, 0.2)
    A = design_matrix(bs_quotes(), [comp.mu], comp.sigma, CTX)
    np.testing.assert_allclose(A[:, 0], bs_call_price(CTX, STRIKES, 0.2), rtol=1e-12)


def test_design_entries_within_component_bounds():
    means = np.linspace(-0.3, 0.3, 7)
    A = design_matrix(STRIKES, means, 0.08, CTX)
    cap = CTX.discount * CTX.spot * np.exp(means.max() + 0.08**2 / 2)
    assert A.min() >= 0 and A.max() <= cap


def test_design_3x3_against_quadrature():
    strikes, means, sig = [1200.0, 1365.0, 1500.0], [-0.05, 0.0, 0.04], 0.07
    A = design_matrix(strikes, means, sig, CTX)
    for i, x in enumerate(strikes):
        for j, mu in enumerate(means):
            want = oracles.lognormal_call_integral(CTX.spot, CTX.rate, CTX.tau, x, mu, sig)
            assert A[i, j] == pytest.approx(want, rel=1e-9)


def test_design_rejects_bad_strikes():
    with pytest.raises(DomainError):
        design_matrix([1000.0, -1.0], [0.0], 0.1, CTX)
    with pytest.raises(EmptyQuotesError):
        design_matrix([], [0.0], 0.1, CTX)


def test_inverse_price_weights_with_floor():
    quotes = [Quote(1000.0, 4.0, 2.0), Quote(1100.0, 1e-8, 3.0)]
    _, _, w = quote_arrays(quotes, "inverse-price")
    np.testing.assert_allclose(w, [0.5, 3.0])


# -- Gauss-Newton refinement -----------------------------------------------------


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    means = np.array([-0.06, -0.01, 0.03, 0.08])
    pis = rng.dirichlet(np.ones(4))
    sig, h = 0.05, 1e-6
    J = residual_jacobian(STRIKES, means, pis, sig, CTX)
    prices = bs_call_price(CTX, STRIKES, 0.25)

    def resid(mu):
        return prices - design_matrix(STRIKES, mu, sig, CTX) @ pis

    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        fd = (resid(means + e) - resid(means - e)) / (2 * h)
        big = np.abs(fd) > 1e-6 * np.abs(fd).max()
        np.testing.assert_allclose(J[big, j], fd[big], rtol=1e-5)


def test_newton_zero_iterations_is_noop():
    model = MixtureModel.from_arrays([-0.02, 0.03], [0.4, 0.6], 0.05, CTX)
    out = refine_means_newton(bs_quotes(), model, FitConfig(sigma_floor=0.05, newton_iters=0))
    np.testing.assert_array_equal(out, model.mus)


def test_newton_recovers_perturbed_bs_mean():
    comp = MixtureComponent.black_scholes(CTX, 0.2)
    start = MixtureModel.from_arrays([comp.mu + 0.01], [1.0], comp.sigma, CTX)
    out = refine_means_newton(bs_quotes(), start, FitConfig(sigma_floor=comp.sigma, newton_iters=5))
    assert abs(out[0] - comp.mu) <= 1e-8


def test_newton_objective_never_increases():
    quotes = smile_quotes(1)
    strikes, prices, w = quote_arrays(quotes)
    model = MixtureModel.from_arrays([-0.08, -0.02, 0.01, 0.05], [0.1, 0.3, 0.4, 0.2], 0.04, CTX)

    def obj(mus):
        r = prices - design_matrix(strikes, mus, 0.04, CTX) @ model.pis
        return float(np.sum(w * r * r))

    prev = obj(model.mus)
    for k in range(1, 8):
        cur = obj(refine_means_newton(quotes, model, FitConfig(sigma_floor=0.04, newton_iters=k)))
        assert cur <= prev
        prev = cur


def test_newton_respects_box():
    quotes = bs_quotes(0.2)
    # the unconstrained optimum sits near 0, below the box [0.04, 0.06]
    model = MixtureModel.from_arrays([0.05], [1.0], 0.05, CTX)
    cfg = FitConfig(sigma_floor=0.05, mu_bound=0.01, mu_center=0.05, newton_iters=5)
    out = refine_means_newton(quotes, model, cfg)
    assert out[0] == pytest.approx(0.04, abs=1e-15)


# -- full fit --------------------------------------------------------------------


def test_exact_recovery_of_black_scholes():
    cfg = FitConfig(sigma_floor=0.2 * SQRT_TAU, newton_iters=30)
    res = fit(bs_quotes(0.2), CTX, cfg)
    assert math.sqrt(np.mean(res.per_quote_residuals**2)) <= 1e-7
    truth = MixtureModel((MixtureComponent.black_scholes(CTX, 0.2),), (1.0,), CTX)
    comp = truth.components[0]
    s = CTX.spot * np.exp(comp.mu + comp.sigma * norm.ppf(np.linspace(0.005, 0.995, 401)))
    got, want = mixture_density(res.model, s), mixture_density(truth, s)
    assert np.max(np.abs(got - want) / want) <= 1e-4


def test_one_step_default_beats_black_scholes_on_smile():
    from spdmix.baselines import fit_black_scholes

    quotes = smile_quotes(0)
    bs = fit_black_scholes(quotes, CTX)
    res = fit(quotes, CTX, FitConfig(sigma_floor=0.75 * bs.vol * SQRT_TAU))
    assert res.objective < bs.objective
    assert res.iterations_used == 1


def test_fitted_model_invariants():
    res = fit(smile_quotes(2), CTX, FitConfig(sigma_floor=0.03))
    pis = np.array(res.model.weights)
    assert np.all(pis >= 1e-12)
    assert abs(math.fsum(pis) - 1) <= 1e-12
    assert len(res.model) <= 26
    assert np.all(res.model.sigmas == 0.03)
    assert res.kkt_residual <= 1e-8
    assert res.objective >= 0


@pytest.mark.parametrize("iters", [1, 3, 10])
def test_objective_trace_is_monotone(iters):
    res = fit(smile_quotes(3), CTX, FitConfig(sigma_floor=0.03, newton_iters=iters))
    trace = np.array(res.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12 * trace[0])
    assert trace[-1] / len(res.per_quote_residuals) == pytest.approx(res.objective, rel=1e-9)


def test_forward_constraint_is_exact():
    F = CTX.forward()
    res = fit(smile_quotes(4), CTX, FitConfig(sigma_floor=0.03, forward_constraint=F))
    assert abs(mixture_mean(res.model) - F) <= 1e-8 * F


def test_forward_constraint_out_of_reach():
    cfg = FitConfig(sigma_floor=0.03, mu_bound=0.01, forward_constraint=2 * CTX.forward())
    with pytest.raises(InfeasibleConstraintError):
        fit(smile_quotes(4), CTX, cfg)


def test_forward_equality_coefficients():
    coeffs, rhs = forward_equality([0.0, 0.1], 0.05, CTX, 1400.0)
    np.testing.assert_allclose(coeffs, CTX.spot * np.exp(0.05**2 / 2 + np.array([0.0, 0.1])))
    assert rhs == 1400.0


def test_permutation_invariance():
    quotes = smile_quotes(5)
    cfg = FitConfig(sigma_floor=0.03, newton_iters=2)
    a = fit(quotes, CTX, cfg)
    perm = np.random.default_rng(0).permutation(len(quotes))
    b = fit([quotes[i] for i in perm], CTX, cfg)
    np.testing.assert_allclose(b.model.mus, a.model.mus, atol=1e-12)
    np.testing.assert_allclose(b.model.pis, a.model.pis, atol=1e-12)
    grid = np.linspace(900, 1800, 50)
    np.testing.assert_allclose(mixture_call_price(b.model, grid), mixture_call_price(a.model, grid), atol=1e-12)


def test_weight_scale_invariance():
    quotes = smile_quotes(6)
    cfg = FitConfig(sigma_floor=0.03)
    a = fit(quotes, CTX, cfg)
    b = fit([replace(q, weight=7.5) for q in quotes], CTX, cfg)
    grid = np.linspace(900, 1800, 50)
    np.testing.assert_allclose(mixture_call_price(b.model, grid), mixture_call_price(a.model, grid), atol=1e-9)
    assert b.objective == pytest.approx(7.5 * a.objective, rel=1e-6)


def test_zero_weight_quote_is_ignored():
    quotes = smile_quotes(7)
    cfg = FitConfig(sigma_floor=0.03, n_components=26)
    a = fit(quotes, CTX, cfg)
    b = fit(quotes + [Quote(1350.0, 999.0, 0.0)], CTX, cfg)
    grid = np.linspace(900, 1800, 50)
    np.testing.assert_allclose(mixture_call_price(b.model, grid), mixture_call_price(a.model, grid), atol=1e-9)


def test_duplicate_strikes_allowed():
    quotes = smile_quotes(8)
    res = fit(quotes + [replace(quotes[10], price=quotes[10].price * 1.01)], CTX, FitConfig(sigma_floor=0.03))
    assert len(res.per_quote_residuals) == 26


def test_inverse_price_mode_runs():
    res = fit(smile_quotes(9), CTX, FitConfig(sigma_floor=0.03, weight_mode="inverse-price"))
    assert res.kkt_residual <= 1e-8


def test_fit_rejects_empty():
    with pytest.raises(EmptyQuotesError):
        fit([], CTX, FitConfig(sigma_floor=0.03))


# -- cross-validation ------------------------------------------------------------


def test_loocv_single_candidate():
    sel = loocv_select_sigma(smile_quotes(0), CTX, sigma_grid=[0.03])
    assert sel.sigma_floor == 0.03
    assert sel.scores.shape == (1,) and math.isfinite(sel.scores[0])


def test_loocv_prefers_true_scale_on_noiseless_data():
    v = 0.2 * SQRT_TAU
    grid = [0.5 * v, v, 1.5 * v]
    template = FitConfig(sigma_floor=v, newton_iters=30)
    sel = loocv_select_sigma(bs_quotes(0.2), CTX, template, grid)
    assert sel.scores[np.argmin(np.abs(np.array(grid) - sel.sigma_floor))] <= sel.scores.min() + 1e-10
    assert sel.scores[1] <= sel.scores.min()
    assert sel.sigma_floor == v


def test_loocv_default_grid_centres_on_three_quarters_bs_vol():
    from spdmix.baselines import fit_black_scholes

    quotes = smile_quotes(1)
    sel = loocv_select_sigma(quotes, CTX)
    base = fit_black_scholes(quotes, CTX).vol * SQRT_TAU
    np.testing.assert_allclose(sel.sigma_grid, np.array([0.5, 0.625, 0.75, 0.875, 1.0]) * base, rtol=1e-14)
    assert sel.sigma_grid[2] == pytest.approx(0.75 * base)


def test_loocv_failed_candidate_scores_infinity(monkeypatch):
    real_fit = est.fit

    def flaky(quotes, ctx, config):
        if config.sigma_floor == 0.02:
            raise InfeasibleConstraintError("forced")
        return real_fit(quotes, ctx, config)

    monkeypatch.setattr(est, "fit", flaky)
    sel = loocv_select_sigma(smile_quotes(2), CTX, sigma_grid=[0.02, 0.03])
    assert sel.scores[0] == math.inf
    assert sel.sigma_floor == 0.03


def test_loocv_ties_go_to_larger_sigma(monkeypatch):
    monkeypatch.setattr(
        est, "fit", lambda q, c, cfg: est.FitResult(
            MixtureModel.from_arrays([0.0], [1.0], cfg.sigma_floor, c), 0.0, 0.0, 0, np.zeros(1), cfg
        )
    )
    monkeypatch.setattr(est, "mixture_call_price", lambda model, x: 0.0)
    sel = loocv_select_sigma(smile_quotes(3), CTX, sigma_grid=[0.02, 0.04, 0.03])
    assert sel.sigma_floor == 0.04


def test_loocv_needs_three_quotes():
    with pytest.raises(DomainError):
        loocv_select_sigma(smile_quotes(0)[:2], CTX, sigma_grid=[0.03])
    with pytest.raises(DomainError):
        loocv_select_sigma(smile_quotes(0), CTX, sigma_grid=[])
