"""Plug-in summaries computed from a fitted blip model.

Everything here post-processes a GEstimate: counterfactual means under
never-treatment, subgroup versions of those means, observed-vs-never
contrasts, lag-averaged initiation effects, direct blip queries, and the
two-stage controlled-direct-effect contrast for a panel with two treatment
components.  Confidence intervals default to a pipeline bootstrap (the whole
fit is redone inside every replicate); the delta method is available for
blip queries as a fast approximation and is labeled as such in the output.
"""

from __future__ import annotations

import csv
import operator
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ._util import jsonable
from .blip import (BlipModel, blip_design, blip_down_coarse,
                   blip_down_multiplicative, blip_down_regime,
                   blip_down_standard, build_term_matrix, eval_blip, pair_grid)
from .errors import ConfigError, DataError
from .gest import GEstimate, SolverConfig, bootstrap, fit_gestimation
from .nuisance import NuisanceSpec, TreatmentModelSpec, TrendModelSpec
from .panel import NEVER, PanelDataset, _initiation_index

_COMPARATORS = {
    "==": operator.eq, "!=": operator.ne,
    "<": operator.lt, "<=": operator.le,
    ">": operator.gt, ">=": operator.ge,
}


@dataclass(frozen=True)
class Predicate:
    """One declarative subgroup condition, serializable into configs.

    column: a covariate name, a treatment name, "initiation" (the joint first
        initiation over all components), or "initiation:<component>".
    comparator: one of ==, !=, <, <=, >, >=.
    value: a number; for initiation columns, a period label or "never".
    time: the period label at which a covariate/treatment column is read
        (required for those columns, ignored for initiation).

    Initiation comparisons order "never" after every period label, so
    ("initiation:r", ">", m) means "component r not yet initiated by m".
    """

    column: str
    comparator: str
    value: object
    time: object = None

    def __post_init__(self):
        if self.comparator not in _COMPARATORS:
            raise ConfigError(
                f"unknown comparator {self.comparator!r}; expected one of "
                f"{sorted(_COMPARATORS)}"
            )

    def describe(self) -> str:
        at = f" at {self.time}" if self.time is not None else ""
        return f"{self.column}{at} {self.comparator} {self.value}"

    def mask(self, panel: PanelDataset) -> np.ndarray:
        op = _COMPARATORS[self.comparator]
        if self.column == "initiation" or self.column.startswith("initiation:"):
            if self.column == "initiation":
                idx = _initiation_index(panel)
            else:
                name = self.column.split(":", 1)[1]
                if name not in panel.treatment_names:
                    raise ConfigError(
                        f"predicate names unknown treatment component {name!r}"
                    )
                c = panel.treatment_names.index(name)
                nz = panel.treatments[:, :, c] != 0.0
                idx = np.where(nz.any(axis=1), np.argmax(nz, axis=1),
                               panel.n_periods)
            labels = np.asarray(panel.time_labels, dtype=float)
            times = np.where(idx < panel.n_periods,
                             labels[np.minimum(idx, panel.n_periods - 1)], np.inf)
            if self.value is NEVER or (isinstance(self.value, str)
                                       and self.value == "never"):
                target = np.inf
            else:
                target = float(self.value)
            return op(times, target)
        if self.time is None:
            raise ConfigError(
                f"predicate on column {self.column!r} needs a time label"
            )
        t = panel.time_index(self.time)
        if self.column in panel.covariate_names:
            col = panel.covariates[:, t, panel.covariate_names.index(self.column)]
        elif self.column in panel.treatment_names:
            col = panel.treatments[:, t, panel.treatment_names.index(self.column)]
        else:
            raise ConfigError(
                f"predicate names unknown column {self.column!r}; panel has "
                f"covariates {list(panel.covariate_names)} and treatments "
                f"{list(panel.treatment_names)}"
            )
        return op(col, float(self.value))

    def to_dict(self) -> dict:
        value = "never" if self.value is NEVER else self.value
        return {"column": self.column, "comparator": self.comparator,
                "value": value, "time": self.time}

    @staticmethod
    def from_dict(obj) -> "Predicate":
        if not isinstance(obj, dict):
            raise ConfigError("predicate must be a JSON object")
        unknown = sorted(set(obj) - {"column", "comparator", "value", "time"})
        if unknown:
            raise ConfigError(f"/{unknown[0]}: unknown predicate field")
        for req in ("column", "comparator", "value"):
            if req not in obj:
                raise ConfigError(f"/{req}: required predicate field is missing")
        return Predicate(column=obj["column"], comparator=obj["comparator"],
                         value=obj["value"], time=obj.get("time"))


def subgroup_mask(panel: PanelDataset, predicates) -> np.ndarray:
    mask = np.ones(panel.n_subjects, dtype=bool)
    for p in predicates:
        mask &= p.mask(panel)
    return mask


@dataclass
class DerivedResult:
    """One derived estimate with its uncertainty and provenance."""

    name: str
    estimate: float
    se: float | None = None
    ci: tuple | None = None
    ci_method: str | None = None
    n: int = 0
    detail: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return jsonable({
            "name": self.name, "estimate": self.estimate, "se": self.se,
            "ci": list(self.ci) if self.ci is not None else None,
            "ci_method": self.ci_method, "n": self.n, "detail": self.detail,
        })


def _blip_down(model: BlipModel, psi, panel, m, k):
    if model.flavor == "coarse":
        return blip_down_coarse(model, psi, panel, m, k)
    if model.flavor == "standard":
        return blip_down_standard(model, psi, panel, m, k)
    if model.flavor == "multiplicative":
        return blip_down_multiplicative(model, psi, panel, m, k)
    return blip_down_regime(model, psi, panel, m, k, tau=None)


def _refit(panel: PanelDataset, fit: GEstimate) -> GEstimate:
    if fit.refitter is not None:
        return fit.refitter(panel)
    kw = {"inference": False}  # replicates only need psi, not a sandwich
    ridge = fit.diagnostics.get("ridge", 0.0)
    if ridge:
        kw["ridge"] = ridge
    tau = fit.diagnostics.get("utility_weights")
    if fit.flavor == "regime" and tau is not None:
        kw["tau"] = np.asarray(tau, dtype=float)
        kw["solver"] = SolverConfig(n_starts=5)
    return fit_gestimation(panel, fit.model, fit.nuisance, method=fit.method, **kw)


def _bootstrap_ci(fit, panel, scalar_of_fit, B, seed, threads):
    """Pipeline bootstrap of a per-fit scalar; returns (se, ci, n_failed)."""

    def statistic(resampled):
        refit = _refit(resampled, fit)
        return scalar_of_fit(refit, resampled)

    res = bootstrap(panel, statistic, B=B, seed=seed, threads=threads)
    draws = np.asarray(res.estimates, dtype=float).reshape(res.n_ok, -1)[:, 0]
    se = float(draws.std(ddof=1)) if draws.size > 1 else None
    lo, hi = np.asarray(res.ci, dtype=float).reshape(-1, 2)[0]
    return se, (float(lo), float(hi)), res.n_failed


# -- counterfactual means ---------------------------------------------------------


def mean_never_treated(fit: GEstimate, panel: PanelDataset, k, *, B: int = 200,
                       seed: int = 0, threads: int = 1) -> DerivedResult:
    """Sample mean of the blipped-down period-k outcome: the plug-in estimate
    of E[Y_k(never treated)].  k is a period label; B=0 skips the CI."""
    k_idx = panel.time_index(k)

    def scalar(f, p):
        return float(np.mean(_blip_down(f.model, f.psi, p, 0, k_idx)))

    est = scalar(fit, panel)
    se = ci = None
    n_failed = 0
    if B:
        se, ci, n_failed = _bootstrap_ci(fit, panel, scalar, B, seed, threads)
    return DerivedResult(
        name="mean_never_treated", estimate=est, se=se, ci=ci,
        ci_method="bootstrap" if B else None, n=panel.n_subjects,
        detail={"k": k, "bootstrap_failed": n_failed},
    )


def conditional_mean(fit: GEstimate, panel: PanelDataset, m, k,
                     predicates=(), *, B: int = 200, seed: int = 0,
                     threads: int = 1) -> DerivedResult:
    """Subgroup mean of the blipped-down outcome anchored at period m.

    With predicates ("initiation", "==", m) this is the cohort-conditional
    never-treated mean E[Y_k(never) | T = m]; with no predicates and m at the
    first period it reduces to mean_never_treated.  m, k are period labels.
    """
    m_idx, k_idx = panel.time_index(m), panel.time_index(k)
    predicates = tuple(predicates)
    mask = subgroup_mask(panel, predicates)
    if not mask.any():
        desc = " and ".join(p.describe() for p in predicates) or "(empty list)"
        raise DataError(f"subgroup predicate [{desc}] matches no subjects")

    def scalar(f, p):
        sub = subgroup_mask(p, predicates)
        if not sub.any():
            desc = " and ".join(pr.describe() for pr in predicates)
            raise DataError(f"subgroup predicate [{desc}] matches no subjects")
        return float(np.mean(_blip_down(f.model, f.psi, p, m_idx, k_idx)[sub]))

    est = scalar(fit, panel)
    se = ci = None
    n_failed = 0
    if B:
        se, ci, n_failed = _bootstrap_ci(fit, panel, scalar, B, seed, threads)
    return DerivedResult(
        name="conditional_mean", estimate=est, se=se, ci=ci,
        ci_method="bootstrap" if B else None, n=int(mask.sum()),
        detail={"m": m, "k": k,
                "predicates": [p.describe() for p in predicates],
                "bootstrap_failed": n_failed},
    )


def observed_vs_never(fit: GEstimate, panel: PanelDataset, k, *, B: int = 200,
                      seed: int = 0, threads: int = 1) -> DerivedResult:
    """mean(Y_k) - mean_never_treated(k): the average effect of the factual
    treatment paths on the period-k outcome."""
    k_idx = panel.time_index(k)

    def scalar(f, p):
        h0 = _blip_down(f.model, f.psi, p, 0, k_idx)
        return float(np.mean(p.outcomes[:, k_idx]) - np.mean(h0))

    est = scalar(fit, panel)
    se = ci = None
    n_failed = 0
    if B:
        se, ci, n_failed = _bootstrap_ci(fit, panel, scalar, B, seed, threads)
    return DerivedResult(
        name="observed_vs_never", estimate=est, se=se, ci=ci,
        ci_method="bootstrap" if B else None, n=panel.n_subjects,
        detail={"k": k, "bootstrap_failed": n_failed},
    )


def lag_average_effect(fit: GEstimate, panel: PanelDataset, lag: int, *,
                       B: int = 200, seed: int = 0,
                       threads: int = 1) -> DerivedResult:
    """Average fitted blip among initiators observed `lag` periods out:
    mean over {i : T_i = m, m + lag within the panel} of γ̂(m, m+lag; history).
    Coarse fits only."""
    if fit.flavor != "coarse":
        raise ConfigError("lag-averaged effects are defined for coarse fits")
    lag = int(lag)
    if lag < 1:
        raise ConfigError("lag must be at least 1")

    def scalar(f, p):
        tidx = _initiation_index(p)
        P = p.n_periods
        num = 0.0
        den = 0
        for m in range(P):
            if m + lag > P - 1:
                continue
            sel = tidx == m
            if not sel.any():
                continue
            blips = eval_blip(f.model, f.psi, p, m, m + lag,
                              actions=p.treatments[:, m, :])
            num += float(blips[sel].sum())
            den += int(sel.sum())
        if den == 0:
            raise DataError(
                f"no treated subjects observed at lag {lag}; cannot average"
            )
        return num / den

    est = scalar(fit, panel)
    tidx = _initiation_index(panel)
    n_used = int(sum((tidx == m).sum() for m in range(panel.n_periods)
                     if m + lag <= panel.n_periods - 1))
    se = ci = None
    n_failed = 0
    if B:
        se, ci, n_failed = _bootstrap_ci(fit, panel, scalar, B, seed, threads)
    return DerivedResult(
        name="lag_average_effect", estimate=est, se=se, ci=ci,
        ci_method="bootstrap" if B else None, n=n_used,
        detail={"lag": lag, "bootstrap_failed": n_failed},
    )


# -- direct blip queries ------------------------------------------------------------


def _query_panel(panel: PanelDataset, covariates=None, outcomes=None,
                 treatments=None) -> PanelDataset:
    """One-subject panel holding user-supplied history values (zeros where
    unspecified), with the template panel's period labels and column names."""
    P = panel.n_periods
    z = np.zeros((1, P, panel.n_covariates))
    a = np.zeros((1, P, panel.n_treatment_components))
    y = np.zeros((1, P))
    for name, vals in (covariates or {}).items():
        if name not in panel.covariate_names:
            raise ConfigError(f"unknown covariate {name!r} in blip query history")
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (P,):
            raise ConfigError(f"covariate {name!r} history must list all {P} periods")
        z[0, :, panel.covariate_names.index(name)] = vals
    for name, vals in (treatments or {}).items():
        if name not in panel.treatment_names:
            raise ConfigError(f"unknown treatment {name!r} in blip query history")
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (P,):
            raise ConfigError(f"treatment {name!r} history must list all {P} periods")
        a[0, :, panel.treatment_names.index(name)] = vals
    if outcomes is not None:
        vals = np.asarray(outcomes, dtype=float)
        if vals.shape != (P,):
            raise ConfigError(f"outcome history must list all {P} periods")
        y[0] = vals
    return PanelDataset(
        outcomes=y, treatments=a, covariates=z, subject_ids=("query",),
        time_labels=panel.time_labels, treatment_names=panel.treatment_names,
        covariate_names=panel.covariate_names,
    )


def _support_warnings(panel: PanelDataset, covariates) -> list:
    out = []
    for name, vals in (covariates or {}).items():
        if name not in panel.covariate_names:
            continue
        col = panel.covariates[:, :, panel.covariate_names.index(name)]
        lo, hi = float(col.min()), float(col.max())
        vals = np.asarray(vals, dtype=float)
        if vals.min() < lo or vals.max() > hi:
            out.append(
                f"covariate {name!r} includes values outside the observed "
                f"range [{lo:g}, {hi:g}]"
            )
    return out


def blip_query(fit: GEstimate, panel: PanelDataset, m, k, *, actions=1.0,
               subject=None, covariates=None, outcomes=None, treatments=None,
               ci_method: str = "delta", B: int = 200, seed: int = 0,
               threads: int = 1) -> DerivedResult:
    """γ(history, action; ψ̂) at anchor m, horizon k (period labels).

    The history comes either from a panel subject (``subject`` as id or row
    index) or from explicit per-period values.  ``ci_method="delta"`` uses the
    fit covariance (fast approximation: treats the query design as fixed);
    ``"bootstrap"`` redoes the whole fit per replicate.  Action 0 gives
    exactly 0 with a zero-width interval.  Query values outside the observed
    covariate range are flagged, not rejected.
    """
    m_idx, k_idx = panel.time_index(m), panel.time_index(k)
    warnings = []
    if subject is not None:
        if covariates or outcomes or treatments:
            raise ConfigError("pass either a subject or explicit history values")
        if isinstance(subject, str):
            if subject not in panel.subject_ids:
                raise DataError(f"unknown subject id {subject!r}")
            row = panel.subject_ids.index(subject)
        else:
            row = int(subject)
            if not (0 <= row < panel.n_subjects):
                raise DataError(f"subject row {row} outside 0..{panel.n_subjects - 1}")
        qpanel = panel.take([row])
    else:
        qpanel = _query_panel(panel, covariates, outcomes, treatments)
        warnings = _support_warnings(panel, covariates)

    def scalar(f, _p, qp=qpanel):
        return float(eval_blip(f.model, f.psi, qp, m_idx, k_idx,
                               actions=actions, i=0))

    est = scalar(fit, panel)
    se = ci = None
    n_failed = 0
    if ci_method == "delta":
        if fit.vcov is None:
            raise ConfigError(
                "delta-method interval needs a fit with a covariance estimate"
            )
        g = blip_design(fit.model, qpanel, m_idx, k_idx, actions)[0]
        se = float(np.sqrt(max(g @ fit.vcov @ g, 0.0)))
        zq = norm.ppf(0.975)
        ci = (est - zq * se, est + zq * se)
    elif ci_method == "bootstrap":
        if B:
            se, ci, n_failed = _bootstrap_ci(fit, panel, scalar, B, seed, threads)
    elif ci_method is not None:
        raise ConfigError(
            f"unknown ci_method {ci_method!r}; expected 'delta', 'bootstrap', or None"
        )
    detail = {"m": m, "k": k, "actions": actions,
              "out_of_support": bool(warnings), "warnings": warnings,
              "bootstrap_failed": n_failed}
    if ci_method == "delta":
        detail["note"] = ("delta-method interval: fast approximation that "
                          "ignores nuisance refitting")
    return DerivedResult(
        name="blip_query", estimate=est, se=se, ci=ci, ci_method=ci_method,
        n=1, detail=detail,
    )


# -- controlled direct effects --------------------------------------------------------


def _restricted_coarse_model(terms, pairs, live):
    """Coarse blip model with per-pair blocks only at identifiable anchors.

    Anchors without any initiation in the cohort get no parameters (their
    design rows are zero), so the closed form stays nonsingular.
    """
    live_pairs = [pq for pq in pairs if pq[0] in live]
    width = len(terms)
    d = width * len(live_pairs)
    index = {pq: i for i, pq in enumerate(live_pairs)}

    def basis(p, m, k, actions):
        n = p.n_subjects
        out = np.zeros((n, d))
        pos = index.get((m, k))
        if pos is None:
            return out
        cols = build_term_matrix(p, terms, m, k)
        acts = np.asarray(actions, dtype=float)
        if acts.ndim == 0:
            acts = np.full(n, float(acts))
        elif acts.ndim == 2:
            acts = acts[:, 0]
        out[:, pos * width:(pos + 1) * width] = cols * acts[:, None]
        return out

    model = BlipModel(flavor="coarse", basis=basis, d=d)
    return model, live_pairs


def _single_component(panel: PanelDataset, comp: int) -> PanelDataset:
    return PanelDataset(
        outcomes=panel.outcomes,
        treatments=panel.treatments[:, :, comp:comp + 1],
        covariates=panel.covariates,
        subject_ids=panel.subject_ids,
        time_labels=panel.time_labels,
        treatment_names=(panel.treatment_names[comp],),
        covariate_names=panel.covariate_names,
    )


def _default_stage2_nuisance(panel: PanelDataset) -> NuisanceSpec:
    trend_terms = (("const",),) + tuple(("z", nm, 0) for nm in panel.covariate_names)
    return NuisanceSpec(
        treatment=TreatmentModelSpec(family="saturated"),
        trend=TrendModelSpec(terms=trend_terms, per_pair=True),
    )


def coarse_cde(fit: GEstimate, panel: PanelDataset, m, k, *, a_m: float = 1.0,
               a_component=0, r_component=1, stage2_nuisance=None,
               stage2_blip_terms=None, force_zero_r: bool = False,
               B: int = 200, seed: int = 0, threads: int = 1) -> DerivedResult:
    """Controlled direct effect of starting component A at period m on the
    period-k outcome with component R held at never, among the cohort that
    started A at m without prior R.

    Two plug-in terms: the cohort mean of Y_k with the *R* blips stripped
    (a second coarse model for R, fitted inside the cohort), minus the
    cohort mean of Y_k with the joint first-initiation blip stripped (the
    main fit's estimate of the never-never mean).  ``force_zero_r`` asserts
    the R blip is zero instead of fitting it — only sensible when R never
    initiates, where the contrast reduces to the ordinary treated-vs-never
    comparison.
    """
    if fit.flavor != "coarse":
        raise ConfigError("controlled direct effects here require a coarse fit")
    if panel.n_treatment_components < 2:
        raise ConfigError(
            "controlled direct effects need two treatment components; panel "
            f"has {panel.n_treatment_components}"
        )
    a_idx = (panel.treatment_names.index(a_component)
             if isinstance(a_component, str) else int(a_component))
    r_idx = (panel.treatment_names.index(r_component)
             if isinstance(r_component, str) else int(r_component))
    if a_idx == r_idx:
        raise ConfigError("a_component and r_component must differ")
    m_idx, k_idx = panel.time_index(m), panel.time_index(k)
    if not (m_idx < k_idx):
        raise ConfigError(f"need m < k; got m={m}, k={k}")
    if a_m == 0.0:
        return DerivedResult(
            name="coarse_cde", estimate=0.0, se=0.0, ci=(0.0, 0.0),
            ci_method=None, n=0,
            detail={"m": m, "k": k, "a_m": 0.0,
                    "note": "baseline action: the contrast is zero by definition"},
        )
    if a_m != 1.0:
        raise ConfigError(
            "only the binary initiation contrast (a_m = 1) is supported"
        )
    a_name = panel.treatment_names[a_idx]
    r_name = panel.treatment_names[r_idx]

    stage2_spec = stage2_nuisance or _default_stage2_nuisance(panel)
    blip_terms = stage2_blip_terms or (
        (("const",),) + tuple(("z", nm, 0) for nm in panel.covariate_names)
    )

    def compute(f, p):
        t_a = np.where((p.treatments[:, :, a_idx] != 0).any(axis=1),
                       np.argmax(p.treatments[:, :, a_idx] != 0, axis=1),
                       p.n_periods)
        t_r = np.where((p.treatments[:, :, r_idx] != 0).any(axis=1),
                       np.argmax(p.treatments[:, :, r_idx] != 0, axis=1),
                       p.n_periods)
        cohort = (t_a == m_idx) & (t_r > m_idx)
        if not cohort.any():
            raise DataError(
                f"no subjects start component {a_name!r} at period {m} "
                f"without prior {r_name!r}; the cohort is empty"
            )
        sub = _single_component(p.take(np.flatnonzero(cohort)), r_idx)
        t_r_sub = t_r[cohort]
        live = sorted({int(j) for j in t_r_sub
                       if m_idx < j <= p.n_periods - 2})
        r_started = bool((t_r_sub < p.n_periods).any())
        if not r_started and not force_zero_r:
            raise DataError(
                f"component {r_name!r} never initiates inside the cohort; "
                "the second-stage model is unidentifiable (pass "
                "force_zero_r=True to assume a zero R effect)"
            )
        if force_zero_r or not live:
            # either the R blip is asserted zero, or the only R starts are at
            # the final period and cannot move any in-panel outcome
            term1 = float(np.mean(sub.outcomes[:, k_idx]))
            stage2 = None
        else:
            model2, _pairs = _restricted_coarse_model(
                blip_terms, pair_grid(p.n_periods), live)
            stage2 = fit_gestimation(sub, model2, stage2_spec,
                                     method="closed_form", inference=False)
            h_r = blip_down_coarse(model2, stage2.psi, sub, m_idx, k_idx)
            term1 = float(np.mean(h_r))
        h_joint = _blip_down(f.model, f.psi, p, m_idx, k_idx)
        term2 = float(np.mean(h_joint[cohort]))
        return term1 - term2, int(cohort.sum()), stage2

    est, n_cohort, stage2 = compute(fit, panel)

    def scalar(f, p):
        return compute(f, p)[0]

    se = ci = None
    n_failed = 0
    if B:
        se, ci, n_failed = _bootstrap_ci(fit, panel, scalar, B, seed, threads)
    detail = {"m": m, "k": k, "a_m": a_m, "a_component": a_name,
              "r_component": r_name, "cohort_size": n_cohort,
              "force_zero_r": force_zero_r, "bootstrap_failed": n_failed}
    if stage2 is not None:
        detail["stage2_psi"] = [float(v) for v in stage2.psi]
        detail["stage2_residual_norm"] = stage2.residual_norm
    return DerivedResult(
        name="coarse_cde", estimate=est, se=se, ci=ci,
        ci_method="bootstrap" if B else None, n=n_cohort, detail=detail,
    )


# -- plot-ready output -----------------------------------------------------------------


def effect_curve(fit: GEstimate, panel: PanelDataset, *, B: int = 200,
                 seed: int = 0, threads: int = 1) -> list:
    """observed_vs_never at every horizon after the first period."""
    out = []
    for j, label in enumerate(panel.time_labels):
        if j == 0:
            continue
        out.append(observed_vs_never(fit, panel, label, B=B,
                                     seed=seed + j, threads=threads))
    return out


def lag_curve(fit: GEstimate, panel: PanelDataset, *, B: int = 200,
              seed: int = 0, threads: int = 1) -> list:
    """lag_average_effect at every observable lag."""
    out = []
    for lag in range(1, panel.n_periods):
        try:
            out.append(lag_average_effect(fit, panel, lag, B=B,
                                          seed=seed + lag, threads=threads))
        except DataError:
            break  # no cohort is observable this far out
    return out


def write_plot_csv(results, fileobj, x_key: str) -> None:
    """rows: x, estimate, lo, hi (empty lo/hi when no interval was computed)."""
    w = csv.writer(fileobj, lineterminator="\n")
    w.writerow([x_key, "estimate", "lo", "hi"])
    for r in results:
        lo, hi = (r.ci if r.ci is not None else ("", ""))
        w.writerow([r.detail.get(x_key), repr(float(r.estimate)),
                    "" if lo == "" else repr(float(lo)),
                    "" if hi == "" else repr(float(hi))])
