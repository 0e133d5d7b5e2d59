"""Arbitrage-free simulation of a forward implied-variance curve.

The market state is a curve of forward implied variance densities indexed
by time-to-maturity together with the stock price; the curve diffuses under
user-chosen vol-of-vol loadings while a short-end feedback condition pins
the stock's instantaneous volatility, which is what keeps the joint model
arbitrage-free.  This package simulates the regularized dynamics, rebuilds
total implied variances and option prices from the curve, and ships the
verifiers (martingale z-tests, positivity accounting, admissibility checks,
refinement studies) that make the numerics falsifiable.
"""

__version__ = "0.1.0"

from .curve import Curve, Grid, derivative, h1_norm, integrate_prefix, shift, sup_norm
from .errors import (
    DegenerateRoot,
    FwdVolError,
    InsufficientSample,
    NegativeTotalVariance,
    NonPositiveTimeToMaturity,
    NumericalBlowup,
    ScenarioError,
)
from .volvol import (
    AdversarialVolVol,
    ConstantVolVol,
    TotalVarianceVolVol,
    VolVolModel,
    ZeroVolVol,
    spot_var_discriminant,
    spot_vol,
    spot_vol_abs,
)
from .params import SimParams, VolVolSpec, build_model, load_scenario, parse_scenario
from .dynamics import (
    Coefficients,
    MarketState,
    PathRecord,
    StoppingDiagnostics,
    compute_coefficients,
    simulate_path,
    step,
)
from .variance import (
    TotalVarianceSeries,
    feedback_residual,
    implied_vol,
    positivity_report,
    positivity_slack,
    simulate_total_variance,
    total_variance_from_curve,
    total_variance_slice,
)
from .pricing import (
    MartingaleReport,
    OptionSpec,
    PriceSeries,
    bs_price,
    martingale_test,
    norm_cdf,
    option_price_process,
)
from .admissibility import SampleSpec, ValidationReport, validate_hypotheses
from .engine import (
    ConvergenceReport,
    EnsembleResult,
    convergence_study,
    run_ensemble,
    write_run,
)

__all__ = [
    "__version__",
    # curve
    "Grid", "Curve", "integrate_prefix", "shift", "derivative",
    "h1_norm", "sup_norm",
    # errors
    "FwdVolError", "DegenerateRoot", "NumericalBlowup", "InsufficientSample",
    "NegativeTotalVariance", "NonPositiveTimeToMaturity", "ScenarioError",
    # volvol
    "VolVolModel", "ZeroVolVol", "ConstantVolVol", "TotalVarianceVolVol",
    "AdversarialVolVol", "spot_vol", "spot_vol_abs", "spot_var_discriminant",
    # params
    "SimParams", "VolVolSpec", "build_model", "load_scenario", "parse_scenario",
    # dynamics
    "Coefficients", "MarketState", "StoppingDiagnostics", "PathRecord",
    "compute_coefficients", "step", "simulate_path",
    # variance
    "TotalVarianceSeries", "total_variance_from_curve", "simulate_total_variance",
    "total_variance_slice", "implied_vol", "feedback_residual",
    "positivity_slack", "positivity_report",
    # pricing
    "OptionSpec", "norm_cdf", "bs_price", "PriceSeries", "option_price_process",
    "MartingaleReport", "martingale_test",
    # admissibility
    "SampleSpec", "ValidationReport", "validate_hypotheses",
    # engine
    "EnsembleResult", "run_ensemble", "write_run",
    "ConvergenceReport", "convergence_study",
]
