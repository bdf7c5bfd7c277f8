"""Finite-horizon extinction risk for a drifted Wiener process, with w-z confidence intervals."""

__version__ = "0.1.0"

from .errors import (
    ConvergenceError,
    DegenerateSeriesError,
    DomainError,
    MethodInapplicableError,
    ParseError,
    WzRiskError,
)
from .stable_eval import (
    DualScaleProb,
    EvalConfig,
    RiskCoordinates,
    eval_hybrid,
    g_linear,
    log_g,
    log_q,
    mills_s7,
)
from .nct import NctParams, invert_delta, nct_cdf
from .estimate import DriftEstimate, HorizonSpec, TimeSeries, fit_drift, log_distance, transform_wz
from .ci_methods import (
    IntervalResult,
    ci_bootstrap,
    ci_delta_logit,
    ci_tmu,
    ci_w,
    ci_wz,
    point_estimate,
)
from .risk_analysis import (
    DesignConstants,
    SpanRequest,
    ci_width_grid,
    corr_wz,
    design_constants,
    gradient_g,
    horizon_trajectory,
    required_span,
    var_g_delta,
    var_g_mixture,
)
from .mc_harness import CoverageResult, GridSpec, coverage_experiment, report, sample_estimates

__all__ = [name for name in dir() if not name.startswith("_")]
