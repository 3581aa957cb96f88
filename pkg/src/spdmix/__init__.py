"""State price densities as lognormal mixtures fitted to call option quotes."""

from .baselines import BsFit, GridDensity, fit_black_scholes, naive_second_difference_spd
from .errors import (
    ConvergenceError,
    DomainError,
    EmptyQuotesError,
    InfeasibleConstraintError,
    ModelFormatError,
    ParityError,
    QuoteParseError,
    SpdError,
    StudyAbortedError,
)
from .estimator import (
    CVSelection,
    FitConfig,
    FitResult,
    Quote,
    default_sigma_grid,
    design_matrix,
    fit,
    init_equispaced_means,
    loocv_select_sigma,
    refine_means_newton,
)
from .io import ModelDocument, load_model, parse_quotes_csv, save_model
from .pricing import (
    MarketContext,
    MixtureComponent,
    MixtureModel,
    bs_call_price,
    component_call_price,
    component_price_dmu,
    implied_dividend_from_parity,
    mixture_call_price,
    mixture_density,
    mixture_mean,
    mixture_price_derivatives,
    normal_ccdf,
    normal_cdf,
)
from .qp import KKTCertificate, QPResult, solve_weights_qp
from .simulation import SmileScenario, StudyReport, asd_scenario, monte_carlo_study, simulate_quotes

__version__ = "0.1.0"

__all__ = [
    "BsFit",
    "CVSelection",
    "ConvergenceError",
    "DomainError",
    "EmptyQuotesError",
    "FitConfig",
    "FitResult",
    "GridDensity",
    "InfeasibleConstraintError",
    "KKTCertificate",
    "MarketContext",
    "MixtureComponent",
    "MixtureModel",
    "ModelDocument",
    "ModelFormatError",
    "ParityError",
    "QPResult",
    "Quote",
    "QuoteParseError",
    "SmileScenario",
    "SpdError",
    "StudyAbortedError",
    "StudyReport",
    "asd_scenario",
    "bs_call_price",
    "component_call_price",
    "component_price_dmu",
    "default_sigma_grid",
    "design_matrix",
    "fit",
    "fit_black_scholes",
    "implied_dividend_from_parity",
    "init_equispaced_means",
    "load_model",
    "loocv_select_sigma",
    "mixture_call_price",
    "mixture_density",
    "mixture_mean",
    "mixture_price_derivatives",
    "monte_carlo_study",
    "naive_second_difference_spd",
    "normal_ccdf",
    "normal_cdf",
    "parse_quotes_csv",
    "refine_means_newton",
    "save_model",
    "simulate_quotes",
    "solve_weights_qp",
]
