"""Multi-stream capture-recapture case-count estimation.

Observed frequency tables over capture histories, exhaustive Poisson
log-linear model sweeps with AIC/BIC, closed-form cross-checks, conditional
estimates of the total case count indexed by an inestimable dependency
parameter, and a Monte Carlo harness for AIC model-selection experiments.
"""

__version__ = "0.1.0"

from .tables import (
    CaptureHistory,
    FrequencyTable,
    lex_histories,
    lex_labels,
    observed_labels,
    n_captured,
)
from .models import (
    ModelSpec,
    ConventionFlags,
    usual_conventions,
    all_terms,
    design_matrix,
    is_hierarchical,
    matches_conventions,
    enumerate_all,
    enumerate_conventional,
)
from .loglinear import (
    FitResult,
    PoissonLogLinear,
    fit_poisson,
    fit_models,
    fit_all,
    psi_hat,
    phi_hat,
    aic_tie_set,
)
from .estimators import (
    CurvePoint,
    OverlayPoint,
    CurveResult,
    mle_psi_two,
    mle_phi_two,
    mle_psi_k,
    var_psi_k,
    feasible_phi_lb,
    psi_for_phi,
    wald_interval,
    curve,
    conditional_loglik_two,
)
from .oracle import (
    TwoStreamOracleRow,
    ThreeStreamOracleRow,
    two_stream_row,
    three_stream_row,
    oracle_check,
)
from .simulate import (
    ConditionalParams,
    ScenarioResult,
    SCENARIO_PRESETS,
    cell_probs,
    expected_table,
    draw_table,
    run_scenario,
)

__all__ = [
    "__version__",
    "CaptureHistory",
    "FrequencyTable",
    "lex_histories",
    "lex_labels",
    "observed_labels",
    "n_captured",
    "ModelSpec",
    "ConventionFlags",
    "usual_conventions",
    "all_terms",
    "design_matrix",
    "is_hierarchical",
    "matches_conventions",
    "enumerate_all",
    "enumerate_conventional",
    "FitResult",
    "PoissonLogLinear",
    "fit_poisson",
    "fit_models",
    "fit_all",
    "psi_hat",
    "phi_hat",
    "aic_tie_set",
    "CurvePoint",
    "OverlayPoint",
    "CurveResult",
    "mle_psi_two",
    "mle_phi_two",
    "mle_psi_k",
    "var_psi_k",
    "feasible_phi_lb",
    "psi_for_phi",
    "wald_interval",
    "curve",
    "conditional_loglik_two",
    "TwoStreamOracleRow",
    "ThreeStreamOracleRow",
    "two_stream_row",
    "three_stream_row",
    "oracle_check",
    "ConditionalParams",
    "ScenarioResult",
    "SCENARIO_PRESETS",
    "cell_probs",
    "expected_table",
    "draw_table",
    "run_scenario",
]
