"""Interbank contagion stress tests against a maximum-entropy null model."""
__version__ = "0.1.0"

from .contagion import (
    DefaultOne,
    EquityTrajectory,
    ProportionalAll,
    RunConfig,
    aggregate_loss_H,
    apply_shock,
    default_cascades,
    impact,
    run,
    shock_scenarios,
    vulnerability,
)
from .ensemble import (
    AggregateScenario,
    EnsembleStats,
    RelevanceScenario,
    compare,
    decile_aggregate,
    observed_vs_expected,
    run_ensemble,
)
from .equity import RegressionFit, fit_log_regression, impute_equity
from .network import (
    BalanceSheets,
    InterbankNetwork,
    NodeMargins,
    compute_margins,
    derive_balance_sheets,
    validate,
)
from .sdecm import (
    FitTargets,
    SdecmParams,
    analytic_margins,
    expected_weight,
    fit,
    fit_binary,
    fit_weights,
    link_probability,
    sample_network,
)
from .valuation import ValuationSpec, furfine_value, linear_dr_value, nonlinear_dr_value
