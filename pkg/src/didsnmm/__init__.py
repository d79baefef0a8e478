"""didsnmm: g-estimation of structural nested mean models for panel data
identified by conditional parallel trends among the not-yet-treated.

Library layout:
  panel        long-CSV ingestion, staggered-adoption checks, history views
  blip         blip bases, transforms (standard/coarse/multiplicative/regime)
  nuisance     treatment hazard and trend models, cross-fit folds
  gest         estimating equations, closed-form/iterative/cross-fit solvers,
               sandwich and bootstrap inference
  derived      counterfactual means, effect curves, direct effects
  regime       optimal dynamic regimes under utility weights
  sensitivity  bias-function adjustment for parallel-trends violations
  sim          data-generating processes with exact oracles
  cli          batch front end (`didsnmm <subcommand>`)
"""

from .blip import (BlipModel, bias_adjusted_coarse, blip_design,
                   blip_down_coarse, blip_down_multiplicative,
                   blip_down_regime, blip_down_standard, eval_blip,
                   optimal_actions_at, regime_scores)
from .derived import (DerivedResult, Predicate, blip_query, coarse_cde,
                      conditional_mean, effect_curve, lag_average_effect,
                      lag_curve, mean_never_treated, observed_vs_never,
                      write_plot_csv)
from .errors import (ConfigError, DataError, DidsnmmError, EstimationError,
                     VerificationError)
from .gest import (BootstrapResult, GEstimate, SolverConfig, bootstrap,
                   closed_form_fit, crossfit_estimate, evaluate_U,
                   fit_gestimation, solve_iterative)
from .nuisance import (NuisanceSpec, TreatmentModelSpec, TrendModelSpec,
                       fit_treatment_model, split_folds)
from .panel import (NEVER, PanelDataset, initiation_time, initiation_times,
                    is_staggered_adoption, load_panel_csv, write_panel_csv)
from .regime import (decision_table, fit_optimal_regime, fitted_rule_fn,
                     optimal_action, regime_value, value_of_rule)
from .sensitivity import (BiasFunction, SensitivityCurve, breakdown_value,
                          sensitivity_fit, sensitivity_grid)
from .sim import DgpConfig, gallery, oracle_truth, simulate_panel

__version__ = "0.1.0"

__all__ = [
    "BiasFunction", "BlipModel", "BootstrapResult", "ConfigError", "DataError",
    "DerivedResult", "DgpConfig", "DidsnmmError", "EstimationError",
    "GEstimate", "NEVER", "NuisanceSpec", "PanelDataset", "Predicate",
    "SensitivityCurve", "SolverConfig", "TreatmentModelSpec", "TrendModelSpec",
    "VerificationError", "bias_adjusted_coarse", "blip_design",
    "blip_down_coarse", "blip_down_multiplicative", "blip_down_regime",
    "blip_down_standard", "blip_query", "bootstrap", "breakdown_value",
    "closed_form_fit", "coarse_cde", "conditional_mean", "crossfit_estimate",
    "decision_table", "effect_curve", "eval_blip", "evaluate_U",
    "fit_gestimation", "fit_optimal_regime", "fit_treatment_model",
    "fitted_rule_fn", "gallery", "initiation_time", "initiation_times",
    "is_staggered_adoption", "lag_average_effect", "lag_curve",
    "load_panel_csv", "mean_never_treated", "observed_vs_never",
    "optimal_action", "optimal_actions_at", "oracle_truth", "regime_scores",
    "regime_value", "sensitivity_fit", "sensitivity_grid", "simulate_panel",
    "solve_iterative", "split_folds", "value_of_rule", "write_panel_csv",
    "write_plot_csv",
]
