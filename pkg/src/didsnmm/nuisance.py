"""Nuisance models: fold splitting, treatment expectations, trend regressions.

Two nuisances feed the estimating equations:

* a treatment model Ê[A_m | history] used to center the estimating direction
  (for one-shot models it conditions on being still-untreated at m);
* a trend model for the expected one-step change of the blipped-down outcome
  given history — fit by weighted least squares on a declared design.  Its
  regressand depends on the blip parameters, so the full fit happens inside
  the estimation loop; this module owns the designs, the per-period training
  sets, and the fitted-coefficient reporting.

The trend design is a function of (k, covariate history at m, treatments
before m) only.  The term grammar structurally cannot reference the current
treatment (lag-0 treatment terms are rejected), which is what makes the
centering argument go through.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._util import jsonable
from .blip import build_term_matrix, normalize_terms, pair_grid, validate_terms
from .errors import ConfigError, DataError, EstimationError
from .panel import PanelDataset, _initiation_index

_SEPARATION_BOUND = 40.0  # |coef| beyond this on standardized columns => separation


def split_folds(n_subjects: int, n_folds: int, seed) -> np.ndarray:
    """Deterministic balanced fold assignment: a seeded permutation dealt
    round-robin, so fold sizes differ by at most one."""
    if n_folds < 2:
        raise ConfigError(f"need at least 2 folds; got {n_folds}")
    if n_subjects < n_folds:
        raise ConfigError(f"cannot split {n_subjects} subjects into {n_folds} folds")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    perm = rng.permutation(n_subjects)
    folds = np.empty(n_subjects, dtype=int)
    folds[perm] = np.arange(n_subjects) % n_folds
    return folds


# -- specs --------------------------------------------------------------------


@dataclass(frozen=True)
class TreatmentModelSpec:
    """How to estimate Ê[A_m | history].

    family "saturated" with terms=None discretizes the full covariate-and-
    past-treatment history (discrete-valued columns assumed); with explicit
    terms it saturates over those feature values.  "logistic" and "linear"
    regress on the term features.  "custom" calls ``trainer(panel, m,
    component, train_rows) -> predict(rows)`` and is not JSON-serializable.
    """

    family: str = "saturated"
    terms: tuple | None = None
    at_risk_only: bool | None = None
    trainer: object = None

    def __post_init__(self):
        if self.family not in ("saturated", "logistic", "linear", "custom"):
            raise ConfigError(f"unknown treatment model family {self.family!r}")
        if self.family == "custom" and not callable(self.trainer):
            raise ConfigError("custom treatment family requires a trainer callable")
        if self.terms is not None:
            object.__setattr__(self, "terms", normalize_terms(self.terms))
        if self.terms is None and self.family in ("logistic", "linear"):
            raise ConfigError(f"{self.family} treatment model requires explicit terms")

    def to_dict(self):
        if self.family == "custom":
            raise ConfigError("custom treatment models are not JSON-serializable")
        return {
            "family": self.family,
            "terms": None if self.terms is None else [list(t) for t in self.terms],
            "at_risk_only": self.at_risk_only,
        }


@dataclass(frozen=True)
class TrendModelSpec:
    """Design for the expected blipped-down one-step change given history.

    per_pair=True fits a separate coefficient block for every (m, k) pair;
    family "cells" replaces the linear design with cell dummies over the
    (discrete) term values.
    """

    terms: tuple = (("const",),)
    per_pair: bool = True
    family: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "terms", normalize_terms(self.terms))
        if self.family not in ("linear", "cells"):
            raise ConfigError(f"unknown trend model family {self.family!r}")
        if not self.terms:
            raise ConfigError("trend model needs at least one term")

    def to_dict(self):
        return {
            "terms": [list(t) for t in self.terms],
            "per_pair": self.per_pair,
            "family": self.family,
        }


@dataclass(frozen=True)
class NuisanceSpec:
    treatment: TreatmentModelSpec = field(default_factory=TreatmentModelSpec)
    trend: TrendModelSpec = field(default_factory=TrendModelSpec)
    n_folds: int = 2
    fold_seed: int = 0

    def to_dict(self):
        return {
            "treatment": self.treatment.to_dict(),
            "trend": self.trend.to_dict(),
            "n_folds": self.n_folds,
            "fold_seed": self.fold_seed,
        }

    @staticmethod
    def from_dict(obj) -> "NuisanceSpec":
        if not isinstance(obj, dict):
            raise ConfigError("nuisance spec must be a JSON object")

        def terms_of(sub, path):
            t = sub.get("terms")
            if t is None:
                return None
            if not isinstance(t, list):
                raise ConfigError(f"{path}/terms: expected a list of terms")
            return normalize_terms(t)

        tr = obj.get("treatment", {})
        if not isinstance(tr, dict):
            raise ConfigError("/treatment: expected an object")
        td = obj.get("trend", {})
        if not isinstance(td, dict):
            raise ConfigError("/trend: expected an object")
        try:
            treatment = TreatmentModelSpec(
                family=tr.get("family", "saturated"),
                terms=terms_of(tr, "/treatment"),
                at_risk_only=tr.get("at_risk_only"),
            )
        except ConfigError as e:
            raise ConfigError(f"/treatment: {e}") from None
        try:
            trend = TrendModelSpec(
                terms=normalize_terms(td.get("terms", [["const"]])),
                per_pair=bool(td.get("per_pair", True)),
                family=td.get("family", "linear"),
            )
        except ConfigError as e:
            raise ConfigError(f"/trend: {e}") from None
        n_folds = obj.get("n_folds", 2)
        if not isinstance(n_folds, int) or n_folds < 2:
            raise ConfigError("/n_folds: expected an integer >= 2")
        return NuisanceSpec(
            treatment=treatment,
            trend=trend,
            n_folds=n_folds,
            fold_seed=obj.get("fold_seed", 0),
        )


# -- treatment model ------------------------------------------------------------


def _history_feature_matrix(panel: PanelDataset, spec: TreatmentModelSpec, m: int):
    """Feature rows for the treatment model at period m."""
    if spec.terms is not None:
        return build_term_matrix(panel, spec.terms, m, k=None)
    # full-history default (saturated family): all covariates through m and
    # all treatments before m
    blocks = [panel.covariates[:, j, :] for j in range(m + 1)]
    blocks += [panel.treatments[:, j, :] for j in range(m)]
    blocks = [b for b in blocks if b.shape[1] > 0]
    if not blocks:
        return np.ones((panel.n_subjects, 1))
    return np.column_stack(blocks)


def _cells_of(rows: np.ndarray):
    """Map feature rows to integer cell ids (exact value patterns).

    Returns (ids, n_cells); rows with identical values share an id.
    """
    rows = np.ascontiguousarray(rows, dtype=float)
    if rows.shape[0] == 0:
        return np.zeros(0, dtype=int), 0
    if rows.shape[1] == 0:
        return np.zeros(rows.shape[0], dtype=int), 1
    _, ids = np.unique(rows, axis=0, return_inverse=True)
    ids = ids.reshape(-1)
    return ids, int(ids.max()) + 1


def _live_columns(X):
    """Columns with any nonzero training value.

    Structurally zero columns (e.g. a treatment lag that reaches before the
    panel starts) carry no information; they get coefficient 0 rather than
    making the design singular.
    """
    return np.any(X != 0.0, axis=0)


def _fit_logistic(X, y, m, columns):
    """IRLS logistic fit; raises on separation, naming the period and column."""
    live = _live_columns(X)
    if not live.all():
        beta = np.zeros(X.shape[1])
        beta[live] = _fit_logistic(X[:, live], y, m,
                                   [c for c, k in zip(columns, live) if k])
        return beta
    n, p = X.shape
    beta = np.zeros(p)
    for _ in range(60):
        eta = np.clip(X @ beta, -35, 35)
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1.0 - mu)
        wX = X * np.maximum(w, 1e-12)[:, None]
        try:
            step = np.linalg.solve(X.T @ wX, X.T @ (y - mu))
        except np.linalg.LinAlgError:
            raise EstimationError(
                f"treatment model design is singular at period {m} "
                f"(columns {columns})"
            ) from None
        beta = beta + step
        scale = np.abs(beta) * np.maximum(X.std(axis=0), 1e-12)
        if np.max(scale) > _SEPARATION_BOUND:
            worst = columns[int(np.argmax(scale))]
            raise EstimationError(
                f"perfect separation in treatment model at period {m}: "
                f"column {worst!r} separates the data"
            )
        if np.max(np.abs(step)) < 1e-10:
            break
    return beta


@dataclass
class TreatmentFit:
    """Fitted treatment expectations with out-of-fold predictions.

    fitted[i, m, c] is Ê[A_m[c] | history_i at m], predicted from the model
    trained without subject i's fold (or on everyone when folds is None).
    Periods with no eligible training subjects are excluded (NaN fitted
    values) and listed in ``excluded_periods``.
    """

    fitted: np.ndarray
    at_risk_only: bool
    excluded_periods: tuple
    coef_tables: dict
    unseen_cells: int
    spec: TreatmentModelSpec

    def to_json_dict(self):
        return jsonable(
            {
                "at_risk_only": self.at_risk_only,
                "excluded_periods": list(self.excluded_periods),
                "unseen_cells": self.unseen_cells,
                "coef_tables": self.coef_tables,
            }
        )


def _term_column_names(spec: TreatmentModelSpec, panel: PanelDataset, m: int):
    if spec.terms is not None:
        return [repr(t) for t in spec.terms]
    names = [f"z_{nm}@{j}" for j in range(m + 1) for nm in panel.covariate_names]
    names += [f"a_{nm}@{j}" for j in range(m) for nm in panel.treatment_names]
    return names or ["const"]


def fit_treatment_model(panel: PanelDataset, spec: TreatmentModelSpec,
                        at_risk_only: bool, folds=None) -> TreatmentFit:
    """Fit Ê[A_m | history] for every period, honouring fold structure.

    With ``at_risk_only`` the model for period m is trained and evaluated only
    on subjects still at baseline treatment at m; other subjects get NaN.
    Saturated fits on sparse cells are allowed: a single-subject cell yields a
    degenerate prediction equal to its own treatment, whose centered residual
    is exactly zero — that subject then simply carries no information, which
    is reported rather than "repaired".
    """
    if spec.terms is not None:
        validate_terms(spec.terms, panel, with_horizon=False)
    n, periods, q = panel.treatments.shape
    tidx = _initiation_index(panel)
    fold_ids = np.zeros(n, dtype=int) if folds is None else np.asarray(folds, dtype=int)
    unique_folds = [None] if folds is None else sorted(set(fold_ids.tolist()))

    fitted = np.full((n, periods, q), np.nan)
    excluded = []
    coef_tables = {}
    unseen = 0

    for m in range(periods):
        eligible = (tidx >= m) if at_risk_only else np.ones(n, dtype=bool)
        if not eligible.any():
            excluded.append(m)
            continue
        X = _history_feature_matrix(panel, spec, m)
        columns = _term_column_names(spec, panel, m)
        if spec.family in ("logistic", "linear") and X.shape[1] == 0:
            raise ConfigError("treatment model has an empty design")
        if spec.family == "saturated":
            ids_all, n_cells = _cells_of(X[eligible])
        for f in unique_folds:
            train = eligible if f is None else (eligible & (fold_ids != f))
            apply_to = eligible if f is None else (eligible & (fold_ids == f))
            if not apply_to.any():
                continue
            if not train.any():
                excluded.append(m)
                continue
            key = f"period_{m}" if f is None else f"fold_{f}/period_{m}"
            for c in range(q):
                y = panel.treatments[train, m, c]
                if spec.family == "saturated":
                    # cell numbering shared by train and apply rows (computed
                    # once per period over all eligible rows)
                    ids_train = ids_all[train[eligible]]
                    ids_apply = ids_all[apply_to[eligible]]
                    sums = np.bincount(ids_train, weights=y, minlength=n_cells)
                    cnts = np.bincount(ids_train, minlength=n_cells)
                    fallback = float(y.mean())
                    means = np.where(cnts > 0, sums / np.maximum(cnts, 1), fallback)
                    unseen += int(np.sum(cnts[ids_apply] == 0))
                    fitted[apply_to, m, c] = means[ids_apply]
                    coef_tables[f"{key}/component_{c}"] = {
                        "family": "saturated",
                        "n_cells": int(n_cells),
                        "n_train_cells": int(np.sum(cnts > 0)),
                    }
                elif spec.family == "logistic":
                    vals = panel.treatments[:, m, c]
                    if not np.all((vals == 0.0) | (vals == 1.0)):
                        raise ConfigError(
                            f"logistic treatment model needs a binary component; "
                            f"component {panel.treatment_names[c]!r} is not 0/1"
                        )
                    beta = _fit_logistic(X[train], y, m, columns)
                    eta = np.clip(X[apply_to] @ beta, -35, 35)
                    fitted[apply_to, m, c] = 1.0 / (1.0 + np.exp(-eta))
                    coef_tables[f"{key}/component_{c}"] = {
                        "family": "logistic",
                        "columns": columns,
                        "coef": [float(b) for b in beta],
                    }
                elif spec.family == "linear":
                    live = _live_columns(X)
                    Xl = X[:, live]
                    try:
                        beta_l = np.linalg.solve(Xl[train].T @ Xl[train],
                                                 Xl[train].T @ y)
                    except np.linalg.LinAlgError:
                        raise EstimationError(
                            f"treatment model design is singular at period {m} "
                            f"(columns {columns})"
                        ) from None
                    beta = np.zeros(X.shape[1])
                    beta[live] = beta_l
                    fitted[apply_to, m, c] = X[apply_to] @ beta
                    coef_tables[f"{key}/component_{c}"] = {
                        "family": "linear",
                        "columns": columns,
                        "coef": [float(b) for b in beta],
                    }
                else:  # custom
                    predict = spec.trainer(panel, m, c, np.flatnonzero(train))
                    fitted[apply_to, m, c] = np.asarray(
                        predict(np.flatnonzero(apply_to)), dtype=float
                    )
                    coef_tables[f"{key}/component_{c}"] = {"family": "custom"}

    excluded = tuple(sorted(set(excluded)))
    return TreatmentFit(
        fitted=fitted,
        at_risk_only=at_risk_only,
        excluded_periods=excluded,
        coef_tables=coef_tables,
        unseen_cells=unseen,
        spec=spec,
    )


# -- trend model -----------------------------------------------------------------


def _trend_design_matrix(panel: PanelDataset, spec: TrendModelSpec, m: int, k: int):
    return build_term_matrix(panel, spec.terms, m, k)


class TrendOperator:
    """Weighted least-squares trend predictor over a fixed pair grid.

    Designs and normal-equation factorizations depend only on the data, the
    weights, and the training mask — not on the regressand — so they are
    precomputed once and each evaluation of the estimating equation reduces to
    matrix products.  ``predict`` maps regressand rows (one per pair) to
    fitted conditional trends for all subjects.
    """

    def __init__(self, panel: PanelDataset, spec: TrendModelSpec, pairs, weights,
                 train_mask=None, ridge: float = 0.0):
        validate_terms(spec.terms, panel, with_horizon=True)
        self.spec = spec
        self.pairs = list(pairs)
        self.ridge = float(ridge)
        self.ridged_pairs = []
        n = panel.n_subjects
        train_mask = np.ones(n, dtype=bool) if train_mask is None else np.asarray(train_mask)
        self._designs = []
        self._train_w = []
        self._solvers = []
        self._cell_maps = []
        self._live = []
        if spec.family == "cells":
            self._init_cells(panel, weights, train_mask)
            return
        if spec.per_pair:
            for pi, (m, k) in enumerate(self.pairs):
                D = _trend_design_matrix(panel, spec, m, k)
                # terms whose lags reach before the panel are identically zero
                # at early anchors; they get coefficient 0 instead of breaking
                # the factorization
                live = np.any(D != 0.0, axis=0)
                if not live.any():
                    live = np.zeros(D.shape[1], dtype=bool)
                    live[0] = True
                w = weights[pi] * train_mask
                self._designs.append(D)
                self._live.append(live)
                self._train_w.append(w)
                self._solvers.append(self._factor(D[:, live], w, (m, k)))
        else:
            designs = [
                _trend_design_matrix(panel, spec, m, k) for (m, k) in self.pairs
            ]
            self._designs = designs
            self._stacked = np.vstack(designs)
            live = np.any(self._stacked != 0.0, axis=0)
            if not live.any():
                live = np.zeros(self._stacked.shape[1], dtype=bool)
                live[0] = True
            self._live = [live]
            w_all = np.concatenate([weights[pi] * train_mask for pi in range(len(self.pairs))])
            self._solvers = [self._factor(self._stacked[:, live], w_all, None)]
            self._train_w = [w_all]

    def _factor(self, D, w, pair):
        sw = np.sqrt(w)
        Dw = D * sw[:, None]
        gram = Dw.T @ Dw
        p = D.shape[1]
        if self.ridge > 0.0:
            gram = gram + self.ridge * np.eye(p)
        rank = np.linalg.matrix_rank(gram)
        if rank < p:
            if self.ridge > 0.0:  # pragma: no cover - ridge>0 always full rank
                pass
            else:
                where = f"pair {pair}" if pair is not None else "the pooled design"
                raise EstimationError(
                    f"trend design is rank-deficient at {where}: "
                    f"{p} columns, rank {rank}; drop collinear terms or pass an "
                    "explicit ridge"
                )
        try:
            chol = np.linalg.cholesky(gram)
        except np.linalg.LinAlgError:
            where = f"pair {pair}" if pair is not None else "the pooled design"
            raise EstimationError(f"trend normal equations not positive definite at {where}") from None
        if self.ridge > 0.0:
            self.ridged_pairs.append(pair)
        return chol

    def _init_cells(self, panel, weights, train_mask):
        for pi, (m, k) in enumerate(self.pairs):
            D = _trend_design_matrix(panel, self.spec, m, k)
            ids, n_cells = _cells_of(D)
            w = weights[pi] * train_mask
            self._designs.append(ids)
            self._train_w.append(w)
            self._cell_maps.append(n_cells)

    def _coef(self, pi, target_rows):
        if self.spec.per_pair:
            D, w, chol = self._designs[pi], self._train_w[pi], self._solvers[pi]
            live = self._live[pi]
            rhs = D[:, live].T @ (w * target_rows[pi])
            beta = np.zeros(D.shape[1])
            beta[live] = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
            return beta
        y_all = np.concatenate([target_rows[q] for q in range(len(self.pairs))])
        w_all, chol = self._train_w[0], self._solvers[0]
        live = self._live[0]
        rhs = self._stacked[:, live].T @ (w_all * y_all)
        beta = np.zeros(self._stacked.shape[1])
        beta[live] = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        return beta

    def predict(self, target_rows: np.ndarray) -> np.ndarray:
        """(n_pairs, n) fitted trends from WLS of targets on the designs."""
        out = np.empty_like(target_rows)
        if self.spec.family == "cells":
            for pi in range(len(self.pairs)):
                ids = self._designs[pi]
                w = self._train_w[pi]
                n_cells = self._cell_maps[pi]
                sw = np.bincount(ids, weights=w, minlength=n_cells)
                sy = np.bincount(ids, weights=w * target_rows[pi], minlength=n_cells)
                overall = sy.sum() / sw.sum() if sw.sum() > 0 else 0.0
                means = np.where(sw > 0, sy / np.maximum(sw, 1e-300), overall)
                out[pi] = means[ids]
            return out
        if self.spec.per_pair:
            for pi in range(len(self.pairs)):
                out[pi] = self._designs[pi] @ self._coef(pi, target_rows)
        else:
            beta = self._coef(0, target_rows)
            for pi in range(len(self.pairs)):
                out[pi] = self._designs[pi] @ beta
        return out

    def coef_tables(self, target_rows) -> dict:
        """Fitted coefficients per pair for reporting/audit."""
        names = [repr(t) for t in self.spec.terms]
        tables = {}
        if self.spec.family == "cells":
            for pi, (m, k) in enumerate(self.pairs):
                ids = self._designs[pi]
                w = self._train_w[pi]
                n_cells = self._cell_maps[pi]
                sw = np.bincount(ids, weights=w, minlength=n_cells)
                sy = np.bincount(ids, weights=w * target_rows[pi], minlength=n_cells)
                means = np.where(sw > 0, sy / np.maximum(sw, 1e-300), np.nan)
                tables[f"pair_{m}_{k}"] = {
                    "family": "cells",
                    "cell_means": [None if not np.isfinite(v) else float(v) for v in means],
                }
            return tables
        if self.spec.per_pair:
            for pi, (m, k) in enumerate(self.pairs):
                beta = self._coef(pi, target_rows)
                tables[f"pair_{m}_{k}"] = {"columns": names, "coef": [float(b) for b in beta]}
        else:
            beta = self._coef(0, target_rows)
            tables["pooled"] = {"columns": names, "coef": [float(b) for b in beta]}
        return tables


def fit_trend_model(panel: PanelDataset, spec: TrendModelSpec, targets, weights,
                    train_mask=None, ridge: float = 0.0):
    """One-off trend fit for a fixed regressand.

    targets/weights: (n_pairs, n) arrays over pair_grid(panel.n_periods).
    Returns (predictions (n_pairs, n), coefficient tables).  The estimation
    loop uses the same operator internally with a parameter-dependent
    regressand.
    """
    pairs = pair_grid(panel.n_periods)
    targets = np.asarray(targets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if targets.shape != (len(pairs), panel.n_subjects):
        raise ConfigError(
            f"targets must have shape (n_pairs={len(pairs)}, n={panel.n_subjects})"
        )
    op = TrendOperator(panel, spec, pairs, weights, train_mask=train_mask, ridge=ridge)
    return op.predict(targets), op.coef_tables(targets)
