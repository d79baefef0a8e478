"""Sensitivity analysis for departures from untreated parallel trends.

An analyst-specified bias function c(history_j, k) states, in outcome-trend
units, how much the one-step untreated trend of initiators at j differs from
that of comparable not-yet-treated subjects.  The adjusted estimator subtracts
sum_{j=m}^{k} 1{T >= j} (A_j - pi_j) c(hist_j, k) from each pair's outcome
change, which restores the conditional-independence property when c is the
true deviation.  Everything downstream of the transform (trend profiling,
solving, inference, derived quantities) is the unadjusted pipeline.

The j = k term in the adjustment sum is mean zero at the truth given the
anchor-period information, so it adds noise but no bias; the sum's displayed
upper limit is kept verbatim.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._util import jsonable, parallel_map, spawn_rngs
from .blip import BlipModel
from .derived import (Predicate, conditional_mean, lag_average_effect,
                      mean_never_treated, observed_vs_never)
from .errors import ConfigError, DataError, EstimationError
from .gest import GEstimate, fit_gestimation, moment_pairs
from .nuisance import NuisanceSpec, fit_treatment_model
from .panel import PanelDataset, _initiation_index

_FAMILIES = ("constant", "horizon", "covariate", "custom")


@dataclass(frozen=True)
class BiasFunction:
    """Parametric deviation from parallel trends, c(history_j, k).

    families:
      constant   c0
      horizon    c0 * (k - j)  (grows with the gap to the outcome period)
      covariate  c0 + c1 . l_j (linear in the period-j covariates)
      custom     fn(panel, j, k) -> (n,) values (not serializable)
    """

    family: str = "constant"
    c0: float = 0.0
    c1: tuple = ()
    fn: object = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigError(
                f"unknown bias family {self.family!r}; expected one of {_FAMILIES}"
            )
        if self.family == "custom" and not callable(self.fn):
            raise ConfigError("custom bias family needs a callable fn(panel, j, k)")
        if self.family != "custom" and self.fn is not None:
            raise ConfigError("fn is only allowed with the custom family")
        object.__setattr__(self, "c0", float(self.c0))
        object.__setattr__(self, "c1", tuple(float(v) for v in self.c1))
        if self.c1 and self.family != "covariate":
            raise ConfigError("covariate slopes c1 require the covariate family")

    def is_zero(self) -> bool:
        if self.family == "custom":
            return False  # cannot introspect a callable; treat as nonzero
        return self.c0 == 0.0 and not any(self.c1)

    def __call__(self, panel: PanelDataset, j: int, k: int) -> np.ndarray:
        n = panel.n_subjects
        if self.family == "constant":
            return np.full(n, self.c0)
        if self.family == "horizon":
            return np.full(n, self.c0 * (k - j))
        if self.family == "covariate":
            out = np.full(n, self.c0)
            if self.c1:
                if len(self.c1) != panel.n_covariates:
                    raise ConfigError(
                        f"c1 has {len(self.c1)} slopes but the panel has "
                        f"{panel.n_covariates} covariates"
                    )
                out = out + panel.covariates[:, j, :] @ np.asarray(self.c1)
            return out
        vals = np.asarray(self.fn(panel, j, k), dtype=float)
        if vals.shape != (n,):
            raise ConfigError(
                f"custom bias fn must return shape ({n},); got {vals.shape}"
            )
        return vals

    def describe(self) -> str:
        if self.family == "constant":
            return f"c = {self.c0:g}"
        if self.family == "horizon":
            return f"c = {self.c0:g} * (k - j)"
        if self.family == "covariate":
            slopes = " + " + " + ".join(
                f"{v:g}*l{idx}" for idx, v in enumerate(self.c1)
            ) if self.c1 else ""
            return f"c = {self.c0:g}{slopes}"
        return "custom bias function"

    def to_dict(self) -> dict:
        if self.family == "custom":
            raise ConfigError("custom bias functions are not serializable")
        out = {"family": self.family, "c0": self.c0}
        if self.family == "covariate":
            out["c1"] = list(self.c1)
        return out

    @staticmethod
    def from_dict(obj: dict) -> "BiasFunction":
        if not isinstance(obj, dict):
            raise ConfigError("bias function spec must be an object (/)")
        fam = obj.get("family", "constant")
        known = {"family", "c0", "c1"}
        for key in obj:
            if key not in known:
                raise ConfigError(f"unknown bias function field (/{key})")
        try:
            return BiasFunction(family=fam, c0=obj.get("c0", 0.0),
                                c1=tuple(obj.get("c1", ())))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad bias function spec: {exc}") from None


def bias_offsets(panel: PanelDataset, c: BiasFunction, treatment_fit) -> np.ndarray:
    """Per-pair outcome-change corrections, aligned to the moment stack.

    offset[(m,k)] = sum_{j=m}^{k} 1{T >= j} (A_j - pi_j) c(hist_j, k).
    """
    if panel.n_treatment_components != 1:
        raise ConfigError("bias adjustment is defined for a single binary treatment")
    a = panel.treatments[:, :, 0]
    if not np.all((a == 0.0) | (a == 1.0)):
        raise ConfigError("bias adjustment requires a binary treatment")
    pi = treatment_fit.fitted[:, :, 0]
    tidx = _initiation_index(panel)
    pairs, _ = moment_pairs(panel, treatment_fit)
    off = np.zeros((len(pairs), panel.n_subjects))
    for pi_row, (m, k) in enumerate(pairs):
        for j in range(m, k + 1):
            at_risk = tidx >= j
            c_j = c(panel, j, k)
            contrib = np.where(at_risk, (a[:, j] - pi[:, j]) * c_j, 0.0)
            if np.any(at_risk & ~np.isfinite(contrib)):
                raise EstimationError(
                    f"bias adjustment hit a non-finite propensity at period {j}"
                )
            off[pi_row] += contrib
    return off


def sensitivity_fit(panel: PanelDataset, model: BlipModel, c: BiasFunction,
                    nuisance: NuisanceSpec, *, s=None, method: str = "closed_form",
                    ridge: float = 0.0, treatment_fit=None, seed: int = 0,
                    inference: bool = True, **fit_kw) -> GEstimate:
    """G-estimate under an assumed parallel-trends deviation c.

    The treatment model is fitted once and shared between the adjustment and
    the estimating equations.  c identically zero returns the unadjusted fit
    (bit-for-bit: the zero offset never touches the outcome changes).
    """
    if model.flavor != "coarse":
        raise ConfigError(
            f"sensitivity adjustment is defined for the coarse flavor; got {model.flavor!r}"
        )
    at_risk_only = nuisance.treatment.at_risk_only
    if at_risk_only is None:
        at_risk_only = True
    if treatment_fit is None:
        treatment_fit = fit_treatment_model(panel, nuisance.treatment, at_risk_only)
    off = bias_offsets(panel, c, treatment_fit)
    kw = dict(fit_kw)
    kw.update(dy_offsets=off, treatment_fit=treatment_fit, s=s, ridge=ridge,
              inference=inference)
    if method != "closed_form":
        kw["seed"] = seed
    fit = fit_gestimation(panel, model, nuisance, method=method, **kw)
    try:
        fit.diagnostics["bias_function"] = c.to_dict()
    except ConfigError:
        fit.diagnostics["bias_function"] = c.describe()
    fit.refitter = lambda p: sensitivity_fit(
        p, model, c, nuisance, s=s, method=method, ridge=ridge, seed=seed,
        inference=False, **fit_kw
    )
    return fit


# -- grids of bias parameters -------------------------------------------------------


def _as_bias(family: str, point) -> BiasFunction:
    if isinstance(point, BiasFunction):
        if point.family != family:
            raise ConfigError(
                f"grid point family {point.family!r} does not match {family!r}"
            )
        return point
    if family == "custom":
        raise ConfigError("custom-family grids must contain BiasFunction objects")
    if isinstance(point, dict):
        spec = dict(point)
        spec.setdefault("family", family)
        return BiasFunction.from_dict(spec)
    return BiasFunction(family=family, c0=float(point))


def _param_label(c: BiasFunction):
    if c.family == "covariate" and any(c.c1):
        return [c.c0, *c.c1]
    return c.c0


_TARGET_KINDS = ("psi", "mean_never", "observed_vs_never", "conditional_mean",
                 "lag_average")


def evaluate_target(fit: GEstimate, panel: PanelDataset, target: dict, *,
                    B: int = 0, seed: int = 0, threads: int = 1) -> dict:
    """One derived quantity on one fit: {'name', 'estimate', 'lo', 'hi'}.

    kinds: psi (component), mean_never (k), observed_vs_never (k),
    conditional_mean (m, k, predicates), lag_average (lag).  B > 0 adds
    pipeline-bootstrap intervals to the derived kinds; psi always reports the
    fit's own interval.
    """
    kind = target.get("kind")
    if kind not in _TARGET_KINDS:
        raise ConfigError(
            f"unknown sensitivity target kind {kind!r}; expected one of {_TARGET_KINDS}"
        )
    if kind == "psi":
        comp = int(target.get("component", 0))
        if not 0 <= comp < len(fit.psi):
            raise ConfigError(
                f"psi target component {comp} out of range [0, {len(fit.psi)})"
            )
        lo, hi = (fit.ci[comp] if fit.ci is not None else (np.nan, np.nan))
        return {"name": f"psi[{comp}]", "estimate": float(fit.psi[comp]),
                "lo": float(lo), "hi": float(hi)}
    common = dict(B=B, seed=seed, threads=threads)
    if kind == "mean_never":
        res = mean_never_treated(fit, panel, target["k"], **common)
    elif kind == "observed_vs_never":
        res = observed_vs_never(fit, panel, target["k"], **common)
    elif kind == "conditional_mean":
        preds = tuple(
            p if isinstance(p, Predicate) else Predicate.from_dict(p)
            for p in target.get("predicates", ())
        )
        res = conditional_mean(fit, panel, target["m"], target["k"],
                               predicates=preds, **common)
    else:
        res = lag_average_effect(fit, panel, int(target["lag"]), **common)
    lo, hi = res.ci if res.ci is not None else (np.nan, np.nan)
    return {"name": res.name, "estimate": res.estimate,
            "lo": float(lo), "hi": float(hi)}


@dataclass
class SensitivityCurve:
    """Estimates as a function of the assumed bias parameter."""

    family: str
    points: list = field(default_factory=list)  # per grid point, in grid order
    n_failed: int = 0

    def to_json_dict(self) -> dict:
        return jsonable({
            "family": self.family,
            "n_points": len(self.points),
            "n_failed": self.n_failed,
            "points": self.points,
        })

    def write_plot_csv(self, fileobj) -> None:
        """Long-format plot table: target, param, estimate, lo, hi."""
        writer = csv.writer(fileobj)
        writer.writerow(["target", "param", "estimate", "lo", "hi"])
        for pt in self.points:
            if not pt["ok"]:
                continue
            param = pt["param"]
            if isinstance(param, list):
                param = param[0]
            for tg in pt["targets"]:
                writer.writerow([tg["name"], repr(float(param)),
                                 repr(float(tg["estimate"])),
                                 repr(float(tg["lo"])), repr(float(tg["hi"]))])


def sensitivity_grid(panel: PanelDataset, model: BlipModel, nuisance: NuisanceSpec,
                     family: str, grid, targets=({"kind": "psi", "component": 0},),
                     *, s=None, method: str = "closed_form", ridge: float = 0.0,
                     B: int = 0, seed: int = 0, threads: int = 1) -> SensitivityCurve:
    """Refit over a grid of bias parameters and track derived targets.

    The grid must contain the zero bias function (the unadjusted fit is the
    curve's anchor point).  Points are independent work units with their own
    seeds; failures are recorded per point, and the curve is returned as long
    as at least 80% of points succeed.
    """
    grid = [_as_bias(family, pt) for pt in grid]
    if not grid:
        raise ConfigError("sensitivity grid is empty")
    if family != "custom" and not any(c.is_zero() for c in grid):
        raise ConfigError("sensitivity grid must contain the zero bias function")
    targets = list(targets)
    for tg in targets:
        if tg.get("kind") not in _TARGET_KINDS:
            raise ConfigError(
                f"unknown sensitivity target kind {tg.get('kind')!r}; "
                f"expected one of {_TARGET_KINDS}"
            )
    seeds = [int(r.integers(2**63)) for r in spawn_rngs(seed, len(grid))]
    # the treatment model never depends on c: fit once, share across points
    at_risk_only = nuisance.treatment.at_risk_only
    if at_risk_only is None:
        at_risk_only = True
    shared_tfit = fit_treatment_model(panel, nuisance.treatment, at_risk_only)

    def one_point(args):
        c, pt_seed = args
        entry = {"param": _param_label(c), "bias": None, "ok": True,
                 "targets": [], "error": None}
        try:
            entry["bias"] = c.to_dict()
        except ConfigError:
            entry["bias"] = c.describe()
        try:
            fit = sensitivity_fit(panel, model, c, nuisance, s=s, method=method,
                                  ridge=ridge, treatment_fit=shared_tfit,
                                  seed=pt_seed)
            entry["psi"] = [float(v) for v in fit.psi]
            entry["se"] = None if fit.se is None else [float(v) for v in fit.se]
            entry["ci"] = None if fit.ci is None else np.asarray(fit.ci).tolist()
            sub = spawn_rngs(pt_seed, max(len(targets), 1))
            for tg, rng in zip(targets, sub):
                entry["targets"].append(
                    evaluate_target(fit, panel, tg, B=B,
                                    seed=int(rng.integers(2**63)))
                )
        except (ConfigError, DataError, EstimationError) as exc:
            entry.update(ok=False, error=f"{type(exc).__name__}: {exc}")
        return entry

    points = parallel_map(one_point, zip(grid, seeds), threads=threads)
    n_failed = sum(not p["ok"] for p in points)
    if n_failed > 0.2 * len(points):
        bad = "; ".join(p["error"] for p in points if not p["ok"])
        raise EstimationError(
            f"sensitivity grid failed at {n_failed}/{len(points)} points: {bad}"
        )
    return SensitivityCurve(family=family, points=points, n_failed=n_failed)


# -- breakdown ---------------------------------------------------------------------


def breakdown_value(panel: PanelDataset, model: BlipModel, nuisance: NuisanceSpec,
                    *, family: str = "constant", target=None, hull=(-2.0, 2.0),
                    tol: float = 1e-3, s=None, method: str = "closed_form",
                    ridge: float = 0.0, B: int = 0, seed: int = 0) -> dict:
    """Smallest |c0| at which the target's CI first reaches zero.

    A target significant at c = 0 loses significance when the CI endpoint
    nearer zero crosses it.  That endpoint moves monotonically in c0 for the
    scalar families (the estimate is affine in c0 for linear coarse models and
    the width varies slowly), so each sign of the hull is bisected on the
    endpoint's sign — the raw covers-zero indicator is an interior band, not
    monotone, once c0 is large enough to drag the estimate out the far side.
    breakdown None means the conclusion survives every c0 in the hull.
    """
    if family not in ("constant", "horizon"):
        raise ConfigError("breakdown search needs a scalar bias family")
    target = target or {"kind": "psi", "component": 0}
    lo_hull, hi_hull = (float(hull[0]), float(hull[1]))
    if not lo_hull <= 0.0 <= hi_hull:
        raise ConfigError(f"hull {hull} must contain 0")
    if target.get("kind") not in _TARGET_KINDS:
        raise ConfigError(
            f"unknown sensitivity target kind {target.get('kind')!r}; "
            f"expected one of {_TARGET_KINDS}"
        )
    at_risk_only = nuisance.treatment.at_risk_only
    if at_risk_only is None:
        at_risk_only = True
    shared_tfit = fit_treatment_model(panel, nuisance.treatment, at_risk_only)

    n_evals = 0

    def interval(c0):
        nonlocal n_evals
        n_evals += 1
        c = BiasFunction(family=family, c0=c0)
        fit = sensitivity_fit(panel, model, c, nuisance, s=s, method=method,
                              ridge=ridge, treatment_fit=shared_tfit)
        tg = evaluate_target(fit, panel, target, B=B, seed=seed)
        return tg

    report = {"family": family, "target": dict(target), "hull": [lo_hull, hi_hull],
              "tol": tol, "breakdown": None, "side": None, "bracket": None}
    base = interval(0.0)
    report["unadjusted"] = base
    if base["lo"] <= 0.0 <= base["hi"]:
        report.update(breakdown=0.0, side="at zero", bracket=[0.0, 0.0],
                      n_evals=n_evals)
        return report
    # margin: distance from zero to the nearer CI endpoint; positive while
    # the conclusion survives, first hits zero exactly at the breakdown
    sign0 = 1.0 if base["estimate"] > 0 else -1.0

    def margin(c0):
        tg = interval(c0)
        return tg["lo"] if sign0 > 0 else -tg["hi"]

    candidates = []
    for side, end in (("positive", hi_hull), ("negative", lo_hull)):
        if end == 0.0 or margin(end) > 0.0:
            continue  # conclusion holds at the hull edge on this side
        inner, outer = 0.0, end  # margin(inner) > 0 >= margin(outer)
        while abs(outer - inner) > tol:
            mid = 0.5 * (inner + outer)
            if margin(mid) > 0.0:
                inner = mid
            else:
                outer = mid
        candidates.append((abs(outer), outer, side, [inner, outer]))
    if candidates:
        _, value, side, bracket = min(candidates)
        report.update(breakdown=value, side=side, bracket=sorted(bracket))
    report["n_evals"] = n_evals
    return report
