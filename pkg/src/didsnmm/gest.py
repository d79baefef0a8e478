"""G-estimation of blip parameters from difference-in-differences moments.

For every period pair m < k the estimating function contrasts the one-step
change of the blipped-down outcome against its modeled conditional trend,
in the direction of the centered treatment residual:

    U_mk(psi) = w_m * { H_mk(psi) - H_{m,k-1}(psi) - v_mk } * q_mk

where w_m is the at-risk indicator (one-shot flavors) or 1, v_mk is the
trend fit (weighted least squares, refit at every psi because the regressand
depends on psi), and q_mk are the blip-design rows evaluated at the centered
treatment residual A_m - Ê[A_m | history].  Summing over subjects and pairs
gives the moment vector; the estimate is its root.

The moment is affine in psi for the additive flavors, which yields an exact
closed form: profiling the trend out of the moment leaves a d x d linear
system whose solution coincides with the root of the profiled iterative map
(block elimination of the joint normal equations).  The damped-Newton solver
is kept as an independent route and must agree to solver tolerance; the
multiplicative and optimal-regime flavors, whose maps are genuinely
nonlinear, use it exclusively.

Inference: per-subject influence contributions J^{-1} U_i with J the
finite-difference Jacobian of the pooled profiled moment map, plus a
subject-level nonparametric bootstrap with percentile intervals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ._util import jsonable, parallel_map, spawn_rngs
from .blip import (
    BlipModel,
    blip_design,
    blip_down_coarse,
    blip_down_multiplicative,
    blip_down_regime,
    blip_down_standard,
    pair_grid,
)
from .errors import ConfigError, DidsnmmError, EstimationError
from .nuisance import (
    NuisanceSpec,
    TrendOperator,
    fit_treatment_model,
    split_folds,
)
from .panel import PanelDataset, _initiation_index


@dataclass(frozen=True)
class SolverConfig:
    """Damped-Newton settings for the iterative root-finder."""

    tol_scale: float = 1e-8       # tolerance = tol_scale * (1 + max|Y|)
    max_iter: int = 100
    damping: float = 0.5          # step-halving factor
    fd_step: float = 1e-6         # relative finite-difference step
    n_starts: int = 1
    start_spread: float = 1.0
    root_match_tol: float = 1e-6  # distinct-roots threshold (relative)
    max_halvings: int = 40


@dataclass
class GEstimate:
    """A fitted blip model with inference byproducts."""

    psi: np.ndarray
    method: str
    flavor: str
    model: BlipModel
    nuisance: NuisanceSpec
    residual_norm: float
    tolerance: float
    n_subjects: int
    jacobian: np.ndarray | None = None
    vcov: np.ndarray | None = None
    se: np.ndarray | None = None
    ci: np.ndarray | None = None
    fold_psis: list | None = None
    diagnostics: dict = field(default_factory=dict)
    treatment_fit: object = None
    trend_tables: dict | None = None
    # optional panel -> GEstimate closure for pipelines whose refit needs more
    # than (model, nuisance, method) — e.g. bias-adjusted fits recompute their
    # offsets on the resampled panel.  Bootstraps use it when present.
    refitter: object = None

    def to_json_dict(self) -> dict:
        diag = dict(self.diagnostics)
        diag.setdefault("residual_norm", self.residual_norm)
        diag["tolerance"] = self.tolerance
        if self.fold_psis is not None:
            diag["fold_estimates"] = [list(map(float, p)) for p in self.fold_psis]
        return jsonable(
            {
                "psi_hat": list(self.psi),
                "method": self.method,
                "flavor": self.flavor,
                "covariance": None if self.vcov is None else self.vcov,
                "se": None if self.se is None else self.se,
                "ci": None if self.ci is None else self.ci,
                "n_subjects": self.n_subjects,
                "diagnostics": diag,
            }
        )


# -- moment machinery ----------------------------------------------------------


def moment_pairs(panel: PanelDataset, treatment_fit):
    """(kept, dropped) (m, k) pairs for a fit using this treatment model.

    A pair is dropped when its anchor period was excluded from the treatment
    model or (at-risk designs) nobody is still untreated there.  Anything
    aligned to the moment stack (dy offsets, per-pair weights) must follow
    this order.
    """
    tidx = _initiation_index(panel)
    excluded = set(treatment_fit.excluded_periods)
    kept, dropped = [], []
    for (m, k) in pair_grid(panel.n_periods):
        usable = m not in excluded and (
            not treatment_fit.at_risk_only or bool(np.any(tidx >= m))
        )
        (kept if usable else dropped).append((m, k))
    return kept, dropped


class _MomentMachine:
    """Precomputed tensors + trend operators for one estimation problem.

    Pairs whose anchor period has no at-risk subjects (or whose treatment
    model was excluded) are dropped and recorded.  Estimation contexts are
    (est_mask, trend_operator) pairs: the plain fit has one context covering
    everyone; a cross-fit has one per fold with the trend trained on the
    complement.
    """

    def __init__(self, panel: PanelDataset, model: BlipModel, nuisance: NuisanceSpec,
                 treatment_fit, folds=None, ridge: float = 0.0, s_fn=None,
                 tau=None, dy_offsets=None):
        self.panel = panel
        self.model = model
        self.nuisance = nuisance
        self.treatment_fit = treatment_fit
        self.tau = tau
        self.d = model.dim(panel)
        self.flavor = model.flavor
        n = panel.n_subjects
        tidx = _initiation_index(panel)
        at_risk_only = treatment_fit.at_risk_only

        self.pairs, self.dropped_pairs = moment_pairs(panel, treatment_fit)
        if not self.pairs:
            raise EstimationError("no usable (m, k) pairs: every period was excluded")
        self.w = np.asarray(
            [(tidx >= m).astype(float) if at_risk_only else np.ones(n)
             for (m, _) in self.pairs]
        )                                                  # (Pn, n)
        Pn = len(self.pairs)

        # outcome one-step changes per pair
        y = panel.outcomes
        self.dy = np.asarray([y[:, k] - y[:, k - 1] for (_, k) in self.pairs])
        if dy_offsets is not None:
            off = np.asarray(dy_offsets, dtype=float)
            if off.shape != self.dy.shape:
                raise ConfigError(
                    f"dy_offsets must have shape {self.dy.shape}; got {off.shape}"
                )
            if np.any(off):
                self.dy = self.dy - off

        # estimating direction q: blip design at the centered treatment residual
        pi_hat = treatment_fit.fitted                      # (n, P, q) NaN off-support
        self.q = np.empty((Pn, n, self.d))
        for pi, (m, k) in enumerate(self.pairs):
            resid = panel.treatments[:, m, :] - pi_hat[:, m, :]
            resid = np.where((self.w[pi] > 0)[:, None], resid, 0.0)
            if np.any(~np.isfinite(resid)):
                raise EstimationError(
                    f"treatment residuals are not finite at period {m}"
                )
            if s_fn is None:
                self.q[pi] = blip_design(model, panel, m, k, resid)
            else:
                s_obs = np.asarray(s_fn(panel, m, k, panel.treatments[:, m, :]), dtype=float)
                if s_obs.shape != (n, self.d):
                    raise ConfigError(
                        f"custom s must return shape {(n, self.d)}; got {s_obs.shape}"
                    )
                a_m = panel.treatments[:, m, 0]
                if panel.n_treatment_components != 1 or not np.all((a_m == 0) | (a_m == 1)):
                    raise ConfigError(
                        "custom s functions require a single binary treatment "
                        "(centering integrates over {0,1})"
                    )
                s1 = np.asarray(s_fn(panel, m, k, np.ones(n)), dtype=float)
                s0 = np.asarray(s_fn(panel, m, k, np.zeros(n)), dtype=float)
                p1 = pi_hat[:, m, 0]
                mean_s = np.where(
                    (self.w[pi] > 0)[:, None], p1[:, None] * s1 + (1 - p1[:, None]) * s0, 0.0
                )
                self.q[pi] = np.where((self.w[pi] > 0)[:, None], s_obs, 0.0) - mean_s

        # affine flavors: precompute the blip-sum designs B_mk - B_{m,k-1};
        # a regime model without utility weights strips observed treatments
        # additively, so it is affine too
        self._affine = self.flavor in ("standard", "coarse") or (
            self.flavor == "regime" and tau is None
        )
        if self._affine:
            self.dB = self._blip_sum_deltas(tidx)

        # estimation contexts
        self.contexts = []
        if folds is None:
            op = TrendOperator(panel, nuisance.trend, self.pairs, self.w,
                               train_mask=None, ridge=ridge)
            self.contexts.append((np.ones(n, dtype=bool), op))
        else:
            folds = np.asarray(folds)
            for f in sorted(set(folds.tolist())):
                est = folds == f
                op = TrendOperator(panel, nuisance.trend, self.pairs, self.w,
                                   train_mask=~est, ridge=ridge)
                self.contexts.append((est, op))
        self.ridge = float(ridge)

    # ---- blip-sum tensors (affine flavors) ----

    def _blip_sum_deltas(self, tidx) -> np.ndarray:
        panel, model = self.panel, self.model
        n = panel.n_subjects
        cache = {}

        def obs_design(j, k):
            if (j, k) not in cache:
                cache[(j, k)] = blip_design(model, panel, j, k, panel.treatments[:, j, :])
            return cache[(j, k)]

        def B(m, k):
            total = np.zeros((n, self.d))
            if self.flavor == "coarse":
                # only the subject's own initiation pair contributes
                for t in range(m, k):
                    mask = tidx == t
                    if mask.any():
                        total[mask] = obs_design(t, k)[mask]
            else:  # standard / plain regime: every treated period contributes
                for j in range(m, k):
                    total += obs_design(j, k)
            return total

        out = np.empty((len(self.pairs), n, self.d))
        for pi, (m, k) in enumerate(self.pairs):
            out[pi] = B(m, k) - (B(m, k - 1) if k - 1 > m else 0.0)
        return out

    # ---- targets: H_mk(psi) - H_{m,k-1}(psi) rows ----

    def targets(self, psi) -> np.ndarray:
        if self._affine:
            return self.dy - np.einsum("pnd,d->pn", self.dB, psi)
        panel, model = self.panel, self.model
        rows = np.empty_like(self.dy)
        for pi, (m, k) in enumerate(self.pairs):
            if self.flavor == "multiplicative":
                hi = blip_down_multiplicative(model, psi, panel, m, k)
                lo = blip_down_multiplicative(model, psi, panel, m, k - 1)
            elif self.flavor == "regime":
                hi = blip_down_regime(model, psi, panel, m, k, tau=self.tau)
                lo = blip_down_regime(model, psi, panel, m, k - 1, tau=self.tau)
            else:  # pragma: no cover
                raise ConfigError(f"unsupported flavor {self.flavor!r}")
            rows[pi] = hi - lo
        return rows

    # ---- moments ----

    def per_subject_U(self, psi) -> np.ndarray:
        """(n, d) per-subject moment contributions, each subject evaluated
        with the trend operator of its own estimation context."""
        t = self.targets(psi)
        out = np.zeros((self.panel.n_subjects, self.d))
        for est, op in self.contexts:
            resid = (t - op.predict(t)) * self.w
            contrib = np.einsum("pn,pnd->nd", resid, self.q)
            out[est] = contrib[est]
        return out

    def moment(self, psi, context=None) -> np.ndarray:
        """Mean moment over one context's subjects (or pooled over all)."""
        if context is None:
            return self.per_subject_U(psi).mean(axis=0)
        est, op = context
        t = self.targets(psi)
        resid = (t - op.predict(t)) * self.w
        contrib = np.einsum("pn,pnd->nd", resid, self.q)
        return contrib[est].mean(axis=0)

    def closed_form(self, context) -> np.ndarray:
        """Solve the profiled linear system directly (affine flavors only).

        Residualizing both the outcome changes and the blip-sum columns
        through the trend projection turns the moment into b - A psi = 0.
        """
        if not self._affine:
            raise ConfigError(
                f"closed form requires an additive linear flavor; "
                f"{self.flavor!r} is nonlinear — use the iterative solver"
            )
        est, op = context
        n_est = int(est.sum())
        dy_t = self.dy - op.predict(self.dy)
        A = np.empty((self.d, self.d))
        wq = self.q * self.w[:, :, None]
        for r in range(self.d):
            col = self.dB[:, :, r]
            col_t = col - op.predict(col)
            A[:, r] = np.einsum("pn,pnd->d", col_t * (self.w * est), self.q) / n_est
        b = np.einsum("pn,pnd->d", dy_t * (self.w * est), self.q) / n_est
        if self.ridge > 0.0:
            A = A + self.ridge * np.eye(self.d)
        cond_ok = np.linalg.matrix_rank(A) == self.d
        if not cond_ok:
            raise EstimationError(
                "blip parameter system is singular (rank "
                f"{np.linalg.matrix_rank(A)} of {self.d}); the blip design "
                "carries no independent variation in some direction — "
                "reconsider the basis or pass an explicit ridge"
            )
        try:
            return np.linalg.solve(A, b)
        except np.linalg.LinAlgError:  # pragma: no cover - rank check above
            raise EstimationError("blip parameter system is singular") from None


def _build_machine(panel, model, nuisance, folds=None, ridge=0.0, s=None, tau=None,
                   dy_offsets=None, treatment_fit=None):
    model.validate(panel)
    at_risk_only = nuisance.treatment.at_risk_only
    if at_risk_only is None:
        at_risk_only = model.flavor == "coarse"
    if treatment_fit is None:
        treatment_fit = fit_treatment_model(panel, nuisance.treatment, at_risk_only,
                                            folds=folds)
    return _MomentMachine(panel, model, nuisance, treatment_fit, folds=folds,
                          ridge=ridge, s_fn=s, tau=tau, dy_offsets=dy_offsets)


def evaluate_U(panel: PanelDataset, model: BlipModel, psi, nuisance: NuisanceSpec,
               s=None, ridge: float = 0.0, tau=None) -> np.ndarray:
    """Per-subject stacked moment contributions at a given psi.

    Trend nuisances are profiled at this psi (trained on everyone); treatment
    nuisances are fit in-sample.  Mainly a diagnostic/teaching device: the
    estimate is the psi that makes the column means vanish.
    """
    machine = _build_machine(panel, model, nuisance, ridge=ridge, s=s, tau=tau)
    return machine.per_subject_U(np.asarray(psi, dtype=float))


# -- solvers ---------------------------------------------------------------------


def _tolerance(panel, solver: SolverConfig) -> float:
    return solver.tol_scale * (1.0 + float(np.max(np.abs(panel.outcomes))))


def _fd_jacobian(fn, psi, rel_step):
    d = len(psi)
    J = np.empty((d, d))
    for r in range(d):
        h = rel_step * (1.0 + abs(psi[r]))
        up = psi.copy(); up[r] += h
        dn = psi.copy(); dn[r] -= h
        J[:, r] = (fn(up) - fn(dn)) / (2.0 * h)
    return J


def _newton(machine, context, start, solver: SolverConfig, tol):
    """Damped Newton from one start; returns (psi, norm, iters, trace) or None."""
    psi = np.asarray(start, dtype=float).copy()
    g = machine.moment(psi, context)
    norm = float(np.max(np.abs(g)))
    trace = [norm]
    for it in range(solver.max_iter):
        if norm <= tol:
            return psi, norm, it, trace
        J = _fd_jacobian(lambda p: machine.moment(p, context), psi, solver.fd_step)
        try:
            step = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        for _ in range(solver.max_halvings):
            cand = psi + lam * step
            g_cand = machine.moment(cand, context)
            n_cand = float(np.max(np.abs(g_cand)))
            if n_cand < norm or n_cand <= tol:
                psi, g, norm = cand, g_cand, n_cand
                trace.append(norm)
                break
            lam *= solver.damping
        else:
            return None  # no improving step
    if norm <= tol:
        return psi, norm, solver.max_iter, trace
    return None


def _solve_context(machine, context, solver: SolverConfig, tol, seed, label=""):
    """Multi-start Newton on one context; errors on multiple distinct roots."""
    d = machine.d
    rngs = spawn_rngs(seed, max(solver.n_starts, 1))
    starts = [np.zeros(d)]
    for r in range(1, max(solver.n_starts, 1)):
        starts.append(rngs[r].normal(scale=solver.start_spread, size=d))
    roots, traces = [], []
    for start in starts:
        res = _newton(machine, context, start, solver, tol)
        if res is not None:
            roots.append(res)
            traces.append(res[3])
    if not roots:
        raise EstimationError(
            f"iterative solver failed to converge from {len(starts)} start(s)"
            + (f" ({label})" if label else "")
        )
    best = min(roots, key=lambda r: r[1])
    scale = 1.0 + max(float(np.max(np.abs(r[0]))) for r in roots)
    for other in roots:
        if np.max(np.abs(other[0] - best[0])) > solver.root_match_tol * scale:
            raise EstimationError(
                "estimating equation has multiple distinct roots: "
                f"{[np.round(r[0], 6).tolist() for r in roots]} — the model is "
                "not point-identified on this data"
            )
    return best, len(roots), len(starts)


# -- variance ----------------------------------------------------------------------


def _sandwich(machine, psi, solver: SolverConfig):
    """IF-based covariance: vcov = J^{-1} S J^{-T} / n with S the second
    moment of per-subject contributions and J the FD Jacobian of the pooled
    (out-of-fold) moment map."""
    n = machine.panel.n_subjects
    U = machine.per_subject_U(psi)
    Ubar = U.mean(axis=0)
    S = (U - Ubar).T @ (U - Ubar) / n
    J = _fd_jacobian(lambda p: machine.per_subject_U(p).mean(axis=0), psi, solver.fd_step)
    if machine.ridge > 0.0:
        # an explicitly ridged fit solves mean U(psi) - ridge*psi = 0; its
        # Jacobian picks up the ridge, which also keeps directions the data
        # cannot identify (zero-variation blocks) finite with zero variance
        J = J - machine.ridge * np.eye(len(psi))
    if np.linalg.matrix_rank(J) < len(psi):
        raise EstimationError("moment Jacobian is singular; no sandwich variance")
    try:
        Jinv = np.linalg.inv(J)
    except np.linalg.LinAlgError:
        raise EstimationError("moment Jacobian is singular; no sandwich variance") from None
    vcov = Jinv @ S @ Jinv.T / n
    return vcov, J


def _attach_inference(est: GEstimate, machine, solver):
    vcov, J = _sandwich(machine, est.psi, solver)
    se = np.sqrt(np.maximum(np.diag(vcov), 0.0))
    z = norm.ppf(0.975)
    est.vcov = vcov
    est.jacobian = J
    est.se = se
    est.ci = np.column_stack([est.psi - z * se, est.psi + z * se])
    return est


# -- public fits -------------------------------------------------------------------


def _base_diag(machine, extra=None):
    diag = {
        "n_pairs": len(machine.pairs),
        "dropped_pairs": [list(p) for p in machine.dropped_pairs],
        "ridge": machine.ridge,
    }
    ridged = [p for op in [c[1] for c in machine.contexts] for p in op.ridged_pairs]
    if ridged:
        diag["ridged_trend_blocks"] = [str(p) for p in ridged]
    if extra:
        diag.update(extra)
    return diag


def closed_form_fit(panel: PanelDataset, model: BlipModel, nuisance: NuisanceSpec,
                    s=None, ridge: float = 0.0, dy_offsets=None,
                    solver: SolverConfig = SolverConfig(),
                    treatment_fit=None, inference: bool = True) -> GEstimate:
    """Exact linear solve of the profiled moment (additive flavors)."""
    machine = _build_machine(panel, model, nuisance, ridge=ridge, s=s,
                             dy_offsets=dy_offsets, treatment_fit=treatment_fit)
    psi = machine.closed_form(machine.contexts[0])
    resid = float(np.max(np.abs(machine.moment(psi, machine.contexts[0]))))
    tol = _tolerance(panel, solver)
    est = GEstimate(
        psi=psi, method="closed_form", flavor=model.flavor, model=model,
        nuisance=nuisance, residual_norm=resid, tolerance=tol,
        n_subjects=panel.n_subjects,
        diagnostics=_base_diag(machine, {"iterations": 0, "seeds": {}}),
        treatment_fit=machine.treatment_fit,
    )
    est.trend_tables = machine.contexts[0][1].coef_tables(machine.targets(psi))
    if inference:
        _attach_inference(est, machine, solver)
    return est


def solve_iterative(panel: PanelDataset, model: BlipModel, nuisance: NuisanceSpec,
                    s=None, ridge: float = 0.0, dy_offsets=None, tau=None,
                    solver: SolverConfig = SolverConfig(), seed: int = 0,
                    treatment_fit=None, inference: bool = True) -> GEstimate:
    """Damped-Newton root of the profiled moment map (any flavor)."""
    machine = _build_machine(panel, model, nuisance, ridge=ridge, s=s, tau=tau,
                             dy_offsets=dy_offsets, treatment_fit=treatment_fit)
    tol = _tolerance(panel, solver)
    (psi, norm_, iters, trace), n_conv, n_starts = _solve_context(
        machine, machine.contexts[0], solver, tol, seed
    )
    est = GEstimate(
        psi=psi, method="iterative", flavor=model.flavor, model=model,
        nuisance=nuisance, residual_norm=norm_, tolerance=tol,
        n_subjects=panel.n_subjects,
        diagnostics=_base_diag(
            machine,
            {
                "iterations": iters,
                "newton_residual_trace": [float(v) for v in trace],
                "starts": n_starts,
                "converged_starts": n_conv,
                "seeds": {"starts": seed},
            },
        ),
        treatment_fit=machine.treatment_fit,
    )
    est.trend_tables = machine.contexts[0][1].coef_tables(machine.targets(psi))
    if inference:
        _attach_inference(est, machine, solver)
    return est


def crossfit_estimate(panel: PanelDataset, model: BlipModel, nuisance: NuisanceSpec,
                      s=None, ridge: float = 0.0, dy_offsets=None, tau=None,
                      solver: SolverConfig = SolverConfig(), seed=None,
                      treatment_fit=None, inference: bool = True) -> GEstimate:
    """Cross-fit estimate: nuisances trained out-of-fold, one root per fold,
    estimates averaged; variance from out-of-fold influence contributions."""
    if seed is None:
        seed = nuisance.fold_seed
    folds = split_folds(panel.n_subjects, nuisance.n_folds, seed)
    machine = _build_machine(panel, model, nuisance, folds=folds, ridge=ridge,
                             s=s, tau=tau, dy_offsets=dy_offsets,
                             treatment_fit=treatment_fit)
    tol = _tolerance(panel, solver)
    fold_psis, fold_resids, iters_total = [], [], 0
    for fi, context in enumerate(machine.contexts):
        if machine._affine:
            psi_f = machine.closed_form(context)
            resid_f = float(np.max(np.abs(machine.moment(psi_f, context))))
            if resid_f > tol:
                raise EstimationError(
                    f"fold {fi}: closed-form root has residual {resid_f:.3e} > "
                    f"tolerance {tol:.3e}"
                )
        else:
            (psi_f, resid_f, it_f, _), _, _ = _solve_context(
                machine, context, solver, tol, seed=(seed, fi), label=f"fold {fi}"
            )
            iters_total += it_f
        fold_psis.append(psi_f)
        fold_resids.append(resid_f)
    psi = np.mean(fold_psis, axis=0)
    pooled = float(np.max(np.abs(machine.per_subject_U(psi).mean(axis=0))))
    est = GEstimate(
        psi=psi, method="crossfit", flavor=model.flavor, model=model,
        nuisance=nuisance, residual_norm=max(fold_resids), tolerance=tol,
        n_subjects=panel.n_subjects, fold_psis=fold_psis,
        diagnostics=_base_diag(
            machine,
            {
                "iterations": iters_total,
                "n_folds": nuisance.n_folds,
                "fold_sizes": [int((folds == f).sum()) for f in range(nuisance.n_folds)],
                "fold_residual_norms": [float(r) for r in fold_resids],
                "pooled_residual_norm": pooled,
                "seeds": {"folds": seed},
            },
        ),
        treatment_fit=machine.treatment_fit,
    )
    if inference:
        _attach_inference(est, machine, solver)
    return est


def fit_gestimation(panel, model, nuisance, method: str = "closed_form", **kw) -> GEstimate:
    """Dispatch on method name ("closed_form" | "iterative" | "crossfit")."""
    if method == "closed_form":
        kw.pop("seed", None)  # nothing random in the linear solve
        if kw.pop("tau", None) is not None:
            raise ConfigError("utility weights need the iterative solver")
        return closed_form_fit(panel, model, nuisance, **kw)
    if method == "iterative":
        return solve_iterative(panel, model, nuisance, **kw)
    if method == "crossfit":
        return crossfit_estimate(panel, model, nuisance, **kw)
    raise ConfigError(f"unknown estimation method {method!r}")


# -- bootstrap ---------------------------------------------------------------------


@dataclass
class BootstrapResult:
    """Subject-level nonparametric bootstrap of a vector statistic."""

    estimates: np.ndarray          # (B_ok, d)
    ci: np.ndarray                 # (d, 2) percentile interval
    n_requested: int
    n_failed: int
    seed: object

    @property
    def n_ok(self) -> int:
        return self.estimates.shape[0]


def percentile_ci(estimates: np.ndarray, n_requested: int) -> np.ndarray:
    """95% percentile interval from order statistics at ranks
    floor(.025 B) and ceil(.975 B) (1-based, computed from the requested B,
    clamped to the successful draws)."""
    B_ok = estimates.shape[0]
    lo_rank = int(np.floor(0.025 * n_requested))
    hi_rank = int(np.ceil(0.975 * n_requested))
    lo_rank = min(max(lo_rank, 1), B_ok)
    hi_rank = min(max(hi_rank, 1), B_ok)
    srt = np.sort(estimates, axis=0)
    return np.column_stack([srt[lo_rank - 1], srt[hi_rank - 1]])


def bootstrap(panel: PanelDataset, statistic, B: int = 200, seed: int = 0,
              threads: int = 1, failure_budget: float = 0.05) -> BootstrapResult:
    """Resample subjects with replacement and re-run the full pipeline.

    statistic: callable (PanelDataset) -> 1-d array; replicates that raise a
    package error are dropped, up to ``failure_budget`` of B, beyond which the
    bootstrap itself fails.
    """
    if B < 100:
        raise ConfigError(f"bootstrap needs B >= 100; got {B}")
    n = panel.n_subjects
    rngs = spawn_rngs(seed, B)

    def one(b):
        idx = rngs[b].integers(0, n, size=n)
        sub = panel.take(idx, ids=tuple(f"b{b}_{j}" for j in range(n)))
        try:
            return np.asarray(statistic(sub), dtype=float)
        except DidsnmmError as e:
            return e

    results = parallel_map(one, range(B), threads=threads)
    good = [r for r in results if isinstance(r, np.ndarray)]
    n_failed = B - len(good)
    if n_failed > failure_budget * B:
        first = next(r for r in results if not isinstance(r, np.ndarray))
        raise EstimationError(
            f"bootstrap failure budget exceeded: {n_failed}/{B} replicates failed "
            f"(budget {failure_budget:.0%}); first failure: {first}"
        )
    est = np.vstack(good)
    return BootstrapResult(
        estimates=est,
        ci=percentile_ci(est, B),
        n_requested=B,
        n_failed=n_failed,
        seed=seed,
    )
