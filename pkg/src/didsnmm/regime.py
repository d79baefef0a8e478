"""Optimal-regime estimation: fit, rule extraction, and value.

The regime-flavor transform replaces treatments from each anchor onward with
the utility-maximizing action before stripping, which makes the estimating
equations piecewise in psi — so the solver here always multi-starts.  The
identifying premises are strictly stronger than for the other flavors and
cannot be checked from data; every output of this module carries them as
text rather than silently assuming them.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ._util import jsonable
from .blip import BlipModel, blip_design, blip_down_regime, optimal_actions_at, regime_scores
from .derived import DerivedResult, _bootstrap_ci
from .errors import ConfigError
from .gest import GEstimate, SolverConfig, solve_iterative
from .nuisance import NuisanceSpec
from .panel import PanelDataset

ASSUMPTIONS = (
    "untreated parallel trends holds given observed history for EVERY "
    "candidate regime's counterfactuals, not only the factual path",
    "sequential exchangeability holds jointly with the unobserved factor "
    "(the factor may shift levels but not act as a time-varying confounder "
    "beyond what the observed history captures)",
    "the unobserved factor does not additively modify treatment effects",
)

CAUTION = (
    "Optimal-regime output: the premises listed under 'assumptions' are "
    "strictly stronger than what the other estimators need, are untestable "
    "from the observed data, and are recorded here rather than verified. "
    "Treat the fitted rule and its value as conditional on them."
)


def _check_tau(tau, n_periods):
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (n_periods,):
        raise ConfigError(
            f"tau must have one weight per period ({n_periods}); got shape {tau.shape}"
        )
    if not np.any(tau != 0.0):
        raise ConfigError("tau must have at least one nonzero weight")
    return tau


def fit_optimal_regime(panel: PanelDataset, model: BlipModel, tau,
                       nuisance: NuisanceSpec, *, s=None, solver=None,
                       seed: int = 0, ridge: float = 0.0) -> GEstimate:
    """G-estimate the regime-referenced blip parameters.

    The inner argmax is re-evaluated at every candidate psi, so the moment
    map is piecewise; multi-start is mandatory (at least 5 starts are used
    regardless of the solver config).  Returns an ordinary GEstimate whose
    diagnostics carry the utility weights and the premise text.
    """
    if model.flavor != "regime":
        raise ConfigError(
            f"optimal-regime fitting needs a regime-flavor model; got {model.flavor!r}"
        )
    tau = _check_tau(tau, panel.n_periods)
    solver = solver or SolverConfig()
    if solver.n_starts < 5:
        solver = replace(solver, n_starts=5)
    fit = solve_iterative(panel, model, nuisance, s=s, tau=tau, seed=seed,
                          solver=solver, ridge=ridge)
    fit.diagnostics["utility_weights"] = [float(t) for t in tau]
    fit.diagnostics["assumptions"] = list(ASSUMPTIONS)
    fit.diagnostics["caution"] = CAUTION
    return fit


def _fit_tau(fit: GEstimate, tau):
    if tau is not None:
        return tau
    stored = fit.diagnostics.get("utility_weights")
    if stored is None:
        raise ConfigError(
            "no utility weights: pass tau or use a fit from fit_optimal_regime"
        )
    return stored


def optimal_action(fit: GEstimate, panel: PanelDataset, m, i=None, tau=None):
    """Fitted optimal action at period m (label): the grid argmax of the
    tau-weighted future blips, ties toward the smallest action.

    With ``i`` (subject row or id) returns that subject's action; otherwise
    an (n,) array.  An all-zero psi gives the baseline action everywhere.
    """
    tau = _check_tau(_fit_tau(fit, tau), panel.n_periods)
    m_idx = panel.time_index(m)
    acts = optimal_actions_at(fit.model, fit.psi, panel, m_idx, tau)
    if i is None:
        return acts
    if isinstance(i, str):
        if i not in panel.subject_ids:
            raise ConfigError(f"unknown subject id {i!r}")
        i = panel.subject_ids.index(i)
    return float(acts[int(i)])


def fitted_rule_fn(fit: GEstimate, panel: PanelDataset, tau=None):
    """Wrap the fitted rule as fn(m, cov_hist, act_hist) -> (n,) actions,
    the shape simulation arms consume.  Future periods are padded with zeros,
    which the design never reads (anchor-m terms only look backward)."""
    tau = _check_tau(_fit_tau(fit, tau), panel.n_periods)
    P = panel.n_periods
    labels = panel.time_labels
    cov_names = panel.covariate_names
    trt_names = panel.treatment_names
    model, psi = fit.model, fit.psi

    def fn(m, cov_hist, act_hist):
        n = cov_hist.shape[0]
        z = np.zeros((n, P, len(cov_names)))
        z[:, : m + 1, 0] = cov_hist
        a = np.zeros((n, P, len(trt_names)))
        if m > 0:
            a[:, :m, 0] = act_hist
        shadow = PanelDataset(
            outcomes=np.zeros((n, P)), treatments=a, covariates=z,
            subject_ids=tuple(f"g{j}" for j in range(n)), time_labels=labels,
            treatment_names=trt_names, covariate_names=cov_names,
        )
        return optimal_actions_at(model, psi, shadow, m, tau)

    return fn


def decision_table(fit: GEstimate, panel: PanelDataset, tau=None) -> dict:
    """JSON-ready decision tables: per decision period, the distinct
    tau-weighted basis rows observed in the panel, their per-action scores,
    the chosen action, and how many subjects share the row."""
    tau = _check_tau(_fit_tau(fit, tau), panel.n_periods)
    model = fit.model
    P = panel.n_periods
    out = {
        "action_grid": [float(a) for a in model.action_grid],
        "assumptions": list(ASSUMPTIONS),
        "caution": CAUTION,
        "periods": {},
    }
    for m in range(P):
        if not np.any(tau[m + 1:] != 0.0):
            continue  # no downstream utility: the rule is vacuous here
        # tau-weighted unit-action design rows determine the scores
        w = np.zeros((panel.n_subjects, model.dim(panel)))
        for r in range(m + 1, P):
            if tau[r] != 0.0:
                w += tau[r] * blip_design(model, panel, m, r, 1.0)
        scores = regime_scores(model, fit.psi, panel, m, tau)
        chosen = optimal_actions_at(model, fit.psi, panel, m, tau)
        key = np.round(w, 10)
        _, first, inv = np.unique(key, axis=0, return_index=True,
                                  return_inverse=True)
        rows = []
        for g, row0 in enumerate(first):
            members = inv == g
            rows.append({
                "weighted_basis": [float(v) for v in key[row0]],
                "scores": {str(float(a)): float(scores[ai, row0])
                           for ai, a in enumerate(model.action_grid)},
                "action": float(chosen[row0]),
                "n_subjects": int(members.sum()),
                "example_subject": panel.subject_ids[int(row0)],
            })
        rows.sort(key=lambda r: -r["n_subjects"])
        out["periods"][str(panel.time_labels[m])] = rows
    return jsonable(out)


def regime_value(fit: GEstimate, panel: PanelDataset, tau=None, *, B: int = 200,
                 seed: int = 0, threads: int = 1) -> DerivedResult:
    """Plug-in value of the fitted rule: the tau-weighted average of the
    regime-transformed outcomes, sum_k tau_k * mean(H_0k(psi)).

    The bootstrap refits the whole regime estimate inside each replicate.
    A one-hot tau reduces to the plain mean of that period's transform.
    """
    tau = _check_tau(_fit_tau(fit, tau), panel.n_periods)

    def scalar(f, p):
        total = 0.0
        for k in range(p.n_periods):
            if tau[k] == 0.0:
                continue
            h = blip_down_regime(f.model, f.psi, p, 0, k, tau=tau)
            total += float(tau[k]) * float(np.mean(h))
        return total

    est = scalar(fit, panel)
    se = ci = None
    n_failed = 0
    if B:
        se, ci, n_failed = _bootstrap_ci(fit, panel, scalar, B, seed, threads)
    return DerivedResult(
        name="regime_value", estimate=est, se=se, ci=ci,
        ci_method="bootstrap" if B else None, n=panel.n_subjects,
        detail={"tau": [float(t) for t in tau], "caution": CAUTION,
                "assumptions": list(ASSUMPTIONS), "bootstrap_failed": n_failed},
    )


def value_of_rule(fit: GEstimate, panel: PanelDataset, actions_by_period,
                  tau=None) -> float:
    """Plug-in value of an arbitrary rule given as per-period action arrays
    {period index: (n,) actions}: tau-weighted mean of Y_k adjusted by the
    modeled blip difference between the rule's actions and the observed ones.
    Used for dominance comparisons against the fitted rule."""
    tau = _check_tau(_fit_tau(fit, tau), panel.n_periods)
    model, psi = fit.model, fit.psi
    total = 0.0
    for k in range(panel.n_periods):
        if tau[k] == 0.0:
            continue
        h = panel.outcomes[:, k].astype(float).copy()
        for j in range(k):
            acts = actions_by_period.get(j)
            if acts is None:
                raise ConfigError(f"rule is missing actions for period index {j}")
            h += blip_design(model, panel, j, k, acts) @ psi
            h -= blip_design(model, panel, j, k, panel.treatments[:, j, :]) @ psi
        total += float(tau[k]) * float(np.mean(h))
    return total
