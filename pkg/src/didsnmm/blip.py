"""Blip models and the blip-down transforms.

A blip model specifies, for each pair of periods m < k, the effect on the
period-k outcome of the treatment actually taken at m (relative to baseline
0), as a function of the history at m.  All built-in bases are linear in the
parameter vector psi and linear in each treatment component separately, so a
blip is exactly 0 whenever the action is 0 or psi is 0 — by construction, not
by convention.

Blipping down removes modeled treatment effects from an observed outcome:
H_mk is the period-k outcome stripped of the effects of treatments from m
onward.  H_mm is always the raw Y_m (an empty sum, no special-casing).

Feature terms
-------------
Histories enter through a small declarative grammar shared with the nuisance
models.  A term is a tuple (JSON: a list):

    ("const",)            1
    ("z", name, lag)      covariate `name` at period m-lag (0 if m-lag < 0)
    ("y", lag)            outcome at m-lag, lag >= 1 (outcomes at m are not
                          part of the history at m)
    ("a", name, lag)      treatment component at m-lag, lag >= 1 (the current
                          treatment never appears as a regressor)
    ("etime", power)      (k - m)**power, for bases that vary with horizon
    ("calendar", origin)  calendar label of period m minus origin
    ("asum", name)        number of pre-m periods with component `name` on
    ("aindexsum", name)   sum of period indices j < m weighted by A_j[name]
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EstimationError
from .panel import PanelDataset, _initiation_index

_EXP_CLAMP = 700.0  # |log-scale exponent| beyond this overflows float64


def pair_grid(n_periods: int, start: int = 0):
    """All ordered period pairs (m, k) with start <= m < k <= K."""
    return [(m, k) for m in range(start, n_periods - 1) for k in range(m + 1, n_periods)]


# -- term grammar -------------------------------------------------------------


def normalize_terms(terms):
    out = []
    for t in terms:
        if isinstance(t, str):
            t = (t,)
        out.append(tuple(t))
    return tuple(out)


def validate_terms(terms, panel: PanelDataset, with_horizon: bool):
    """Raise ConfigError for malformed terms; with_horizon allows ("etime", p)."""
    for t in normalize_terms(terms):
        kind = t[0]
        if kind == "const":
            if len(t) != 1:
                raise ConfigError(f"term {t!r}: 'const' takes no arguments")
        elif kind == "z":
            if len(t) != 3:
                raise ConfigError(f"term {t!r}: expected ('z', name, lag)")
            if t[1] not in panel.covariate_names:
                raise ConfigError(f"term {t!r}: unknown covariate {t[1]!r}")
            if int(t[2]) < 0:
                raise ConfigError(f"term {t!r}: lag must be >= 0")
        elif kind == "y":
            if len(t) != 2 or int(t[1]) < 1:
                raise ConfigError(f"term {t!r}: expected ('y', lag) with lag >= 1")
        elif kind == "a":
            if len(t) != 3:
                raise ConfigError(f"term {t!r}: expected ('a', name, lag)")
            if t[1] not in panel.treatment_names:
                raise ConfigError(f"term {t!r}: unknown treatment {t[1]!r}")
            if int(t[2]) < 1:
                raise ConfigError(
                    f"term {t!r}: treatment lag must be >= 1 — the current "
                    "treatment cannot appear in a history feature"
                )
        elif kind in ("asum", "aindexsum"):
            if len(t) != 2 or t[1] not in panel.treatment_names:
                raise ConfigError(f"term {t!r}: expected ('{kind}', treatment_name)")
        elif kind == "etime":
            if not with_horizon:
                raise ConfigError(f"term {t!r}: horizon terms are not allowed here")
            if len(t) != 2 or int(t[1]) < 1:
                raise ConfigError(f"term {t!r}: expected ('etime', power) with power >= 1")
        elif kind == "calendar":
            if len(t) != 2:
                raise ConfigError(f"term {t!r}: expected ('calendar', origin)")
        else:
            raise ConfigError(f"unknown feature term kind {t[0]!r} in {t!r}")


def build_term_matrix(panel: PanelDataset, terms, m: int, k=None) -> np.ndarray:
    """(n, n_terms) feature matrix for the history at period m (pair horizon k)."""
    n = panel.n_subjects
    cols = []
    for t in normalize_terms(terms):
        kind = t[0]
        if kind == "const":
            cols.append(np.ones(n))
        elif kind == "z":
            idx = m - int(t[2])
            if idx < 0:
                cols.append(np.zeros(n))
            else:
                cols.append(panel.covariates[:, idx, panel.covariate_names.index(t[1])])
        elif kind == "y":
            idx = m - int(t[1])
            cols.append(np.zeros(n) if idx < 0 else panel.outcomes[:, idx])
        elif kind == "a":
            idx = m - int(t[2])
            if idx < 0:
                cols.append(np.zeros(n))
            else:
                cols.append(panel.treatments[:, idx, panel.treatment_names.index(t[1])])
        elif kind == "asum":
            c = panel.treatment_names.index(t[1])
            cols.append(panel.treatments[:, :m, c].sum(axis=1) if m > 0 else np.zeros(n))
        elif kind == "aindexsum":
            c = panel.treatment_names.index(t[1])
            if m > 0:
                cols.append(panel.treatments[:, :m, c] @ np.arange(m, dtype=float))
            else:
                cols.append(np.zeros(n))
        elif kind == "etime":
            if k is None:
                raise ConfigError(f"term {t!r} needs a horizon period k")
            cols.append(np.full(n, float(k - m) ** int(t[1])))
        elif kind == "calendar":
            cols.append(np.full(n, float(panel.time_labels[m]) - float(t[1])))
        else:  # pragma: no cover - validate_terms guards this
            raise ConfigError(f"unknown feature term {t!r}")
    return np.column_stack(cols) if cols else np.empty((n, 0))


# -- blip basis / model -------------------------------------------------------


@dataclass(frozen=True)
class BlipBasis:
    """Linear blip basis: some coefficients shared across (m, k) pairs, some
    specific to each pair (event-study style pair intercepts, etc.)."""

    shared_terms: tuple = ()
    per_pair_terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "shared_terms", normalize_terms(self.shared_terms))
        object.__setattr__(self, "per_pair_terms", normalize_terms(self.per_pair_terms))
        if not self.shared_terms and not self.per_pair_terms:
            raise ConfigError("blip basis needs at least one term")


@dataclass(frozen=True)
class BlipModel:
    """A blip model: flavor + basis (+ action grid for regime searches).

    flavor is one of "standard", "coarse", "multiplicative", "regime".
    basis is a BlipBasis, or a callable (panel, m, k, actions) -> (n, d)
    design matrix for fully custom blips (then ``d`` must be given).
    """

    flavor: str
    basis: object
    d: int | None = None
    action_grid: tuple = (0.0, 1.0)
    reference: str = "optimal"

    def __post_init__(self):
        if self.flavor not in ("standard", "coarse", "multiplicative", "regime"):
            raise ConfigError(f"unknown blip flavor {self.flavor!r}")
        if callable(self.basis):
            if self.d is None:
                raise ConfigError("custom blip basis requires an explicit dimension d")
        elif not isinstance(self.basis, BlipBasis):
            raise ConfigError("basis must be a BlipBasis or a callable design builder")
        grid = tuple(sorted(float(a) for a in self.action_grid))
        if len(set(grid)) != len(grid) or not grid:
            raise ConfigError("action_grid must be a non-empty set of distinct values")
        object.__setattr__(self, "action_grid", grid)

    # layout: one block per treatment component; within a block, shared-term
    # coefficients first, then per-pair coefficients in pair_grid order.

    def block_dim(self, panel: PanelDataset) -> int:
        if callable(self.basis):
            raise ConfigError("custom basis has no block layout")
        return len(self.basis.shared_terms) + len(pair_grid(panel.n_periods)) * len(
            self.basis.per_pair_terms
        )

    def dim(self, panel: PanelDataset) -> int:
        if callable(self.basis):
            return int(self.d)
        return panel.n_treatment_components * self.block_dim(panel)

    def validate(self, panel: PanelDataset):
        if callable(self.basis):
            return
        validate_terms(self.basis.shared_terms, panel, with_horizon=True)
        validate_terms(self.basis.per_pair_terms, panel, with_horizon=True)

    def to_dict(self) -> dict:
        if callable(self.basis):
            raise ConfigError("custom blip bases are not JSON-serializable")
        return {
            "flavor": self.flavor,
            "basis": {
                "shared_terms": [list(t) for t in self.basis.shared_terms],
                "per_pair_terms": [list(t) for t in self.basis.per_pair_terms],
            },
            "action_grid": list(self.action_grid),
            "reference": self.reference,
        }

    @staticmethod
    def from_dict(obj: dict) -> "BlipModel":
        if not isinstance(obj, dict):
            raise ConfigError("blip model must be a JSON object")
        basis = obj.get("basis")
        if basis == "custom" or callable(basis):
            raise ConfigError("custom blip bases cannot be loaded from JSON")
        if not isinstance(basis, dict):
            raise ConfigError("/basis: expected an object with shared_terms/per_pair_terms")
        return BlipModel(
            flavor=obj.get("flavor", ""),
            basis=BlipBasis(
                shared_terms=normalize_terms(basis.get("shared_terms", ())),
                per_pair_terms=normalize_terms(basis.get("per_pair_terms", ())),
            ),
            action_grid=tuple(obj.get("action_grid", (0.0, 1.0))),
            reference=obj.get("reference", "optimal"),
        )


def _as_actions(panel: PanelDataset, actions) -> np.ndarray:
    """Broadcast an action spec to (n, q)."""
    n, q = panel.n_subjects, panel.n_treatment_components
    a = np.asarray(actions, dtype=float)
    if a.ndim == 0:
        return np.full((n, q), float(a))
    if a.ndim == 1:
        if a.shape[0] == n and q == 1:
            return a[:, None]
        if a.shape[0] == q:
            return np.tile(a, (n, 1))
        raise ConfigError(f"cannot broadcast actions of shape {a.shape} to (n={n}, q={q})")
    if a.shape != (n, q):
        raise ConfigError(f"actions must have shape (n, q)=({n},{q}); got {a.shape}")
    return a


def blip_design(model: BlipModel, panel: PanelDataset, m: int, k: int, actions) -> np.ndarray:
    """(n, d) design rows for the blip at pair (m, k) under the given actions.

    gamma_mk(history, a) = design @ psi.  Each treatment component scales its
    own block of features, which makes the blip linear in every component and
    exactly zero at the baseline action.
    """
    acts = _as_actions(panel, actions)
    if callable(model.basis):
        out = np.asarray(model.basis(panel, m, k, acts), dtype=float)
        if out.shape != (panel.n_subjects, model.dim(panel)):
            raise ConfigError(
                f"custom basis returned shape {out.shape}, expected "
                f"{(panel.n_subjects, model.dim(panel))}"
            )
        return out
    n = panel.n_subjects
    d_block = model.block_dim(panel)
    pairs = pair_grid(panel.n_periods)
    n_shared = len(model.basis.shared_terms)
    feats = []
    if n_shared:
        feats.append(build_term_matrix(panel, model.basis.shared_terms, m, k))
    if model.basis.per_pair_terms:
        pp = build_term_matrix(panel, model.basis.per_pair_terms, m, k)
    out = np.zeros((n, panel.n_treatment_components * d_block))
    for c in range(panel.n_treatment_components):
        off = c * d_block
        if n_shared:
            out[:, off : off + n_shared] = acts[:, c : c + 1] * feats[0]
        if model.basis.per_pair_terms:
            pidx = pairs.index((m, k))
            lo = off + n_shared + pidx * len(model.basis.per_pair_terms)
            out[:, lo : lo + len(model.basis.per_pair_terms)] = acts[:, c : c + 1] * pp
    return out


def eval_blip(model: BlipModel, psi, panel: PanelDataset, m: int, k: int, actions, i=None):
    """gamma_mk values under the model at the given actions.

    Returns (n,) for i=None, else a scalar for subject i.
    """
    psi = np.asarray(psi, dtype=float)
    d = model.dim(panel)
    if psi.shape != (d,):
        raise ConfigError(f"psi has shape {psi.shape}; model dimension is {d}")
    if not (0 <= m < k <= panel.horizon):
        raise ConfigError(f"blip pair needs 0 <= m < k <= {panel.horizon}; got ({m}, {k})")
    vals = blip_design(model, panel, m, k, actions) @ psi
    return vals if i is None else float(vals[int(i)])


# -- blip-down transforms ------------------------------------------------------


def _check_pair(panel, m, k):
    if not (0 <= m <= k <= panel.horizon):
        raise ConfigError(f"need 0 <= m <= k <= {panel.horizon}; got ({m}, {k})")


def blip_down_standard(model: BlipModel, psi, panel: PanelDataset, m: int, k: int, i=None):
    """H_mk = Y_k minus the modeled effects of treatments taken at m..k-1.

    Satisfies H_mm = Y_m and the one-step peeling identity
    H_mk = H_{m+1,k} - gamma_mk(observed history).
    """
    _check_pair(panel, m, k)
    psi = np.asarray(psi, dtype=float)
    h = panel.outcomes[:, k].astype(float).copy()
    for j in range(m, k):
        h -= blip_design(model, panel, j, k, panel.treatments[:, j, :]) @ psi
    return h if i is None else float(h[int(i)])


def blip_down_coarse(model: BlipModel, psi, panel: PanelDataset, m: int, k: int, i=None):
    """H_mk for one-shot (coarse) models: remove the initiation blip when the
    subject initiated in [m, k-1], else leave Y_k alone."""
    _check_pair(panel, m, k)
    psi = np.asarray(psi, dtype=float)
    h = panel.outcomes[:, k].astype(float).copy()
    tidx = _initiation_index(panel)
    for t in range(m, k):
        mask = tidx == t
        if mask.any():
            h[mask] -= (blip_design(model, panel, t, k, panel.treatments[:, t, :]) @ psi)[mask]
    return h if i is None else float(h[int(i)])


def blip_down_multiplicative(model: BlipModel, psi, panel: PanelDataset, m: int, k: int, i=None):
    """H_mk = Y_k * exp(-sum of log-scale blips for treatments at m..k-1).

    The summed exponent is capped at |x| <= 700; beyond that float64 overflows
    and the transform raises rather than silently saturating.
    """
    _check_pair(panel, m, k)
    psi = np.asarray(psi, dtype=float)
    s = np.zeros(panel.n_subjects)
    for j in range(m, k):
        s += blip_design(model, panel, j, k, panel.treatments[:, j, :]) @ psi
    worst = float(np.max(np.abs(s))) if s.size else 0.0
    if worst > _EXP_CLAMP:
        raise EstimationError(
            f"multiplicative blip-down overflow: |log-scale exponent| reaches "
            f"{worst:.1f} > {_EXP_CLAMP:.0f} at pair ({m}, {k})"
        )
    h = panel.outcomes[:, k] * np.exp(-s)
    return h if i is None else float(h[int(i)])


def regime_scores(model: BlipModel, psi, panel: PanelDataset, j: int, tau) -> np.ndarray:
    """(n_actions, n) utility scores sum_{r>j} tau_r * gamma_jr(a) per action."""
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (panel.n_periods,):
        raise ConfigError(
            f"tau must have one weight per period ({panel.n_periods}); got shape {tau.shape}"
        )
    psi = np.asarray(psi, dtype=float)
    scores = np.zeros((len(model.action_grid), panel.n_subjects))
    for ai, a in enumerate(model.action_grid):
        for r in range(j + 1, panel.n_periods):
            if tau[r] != 0.0:
                scores[ai] += tau[r] * (blip_design(model, panel, j, r, a) @ psi)
    return scores


def optimal_actions_at(model: BlipModel, psi, panel: PanelDataset, j: int, tau) -> np.ndarray:
    """(n,) utility-maximizing action at period j; ties -> smallest action.

    The grid is kept sorted ascending, and argmax takes the first maximizer,
    which is exactly the smallest-action tie-break.
    """
    scores = regime_scores(model, psi, panel, j, tau)
    best = np.argmax(scores, axis=0)
    return np.asarray(model.action_grid, dtype=float)[best]


def blip_down_regime(model: BlipModel, psi, panel: PanelDataset, m: int, k: int,
                     tau=None, i=None):
    """H_mk for regime models.

    Without tau this is the standard additive strip-down (reference regime =
    observed baseline).  With utility weights tau, treatments from m onward
    are *replaced* by the utility-maximizing action:
        H_mk = Y_k + sum_{j=m}^{k-1} [gamma_jk(a*_j) - gamma_jk(A_j)].
    """
    _check_pair(panel, m, k)
    if tau is None:
        return blip_down_standard(model, psi, panel, m, k, i=i)
    psi = np.asarray(psi, dtype=float)
    h = panel.outcomes[:, k].astype(float).copy()
    for j in range(m, k):
        a_star = optimal_actions_at(model, psi, panel, j, tau)
        h += blip_design(model, panel, j, k, a_star[:, None]) @ psi
        h -= blip_design(model, panel, j, k, panel.treatments[:, j, :]) @ psi
    return h if i is None else float(h[int(i)])


def bias_adjusted_coarse(model: BlipModel, psi, panel: PanelDataset, m: int, k: int,
                         bias_values, propensity, i=None):
    """Coarse blip-down corrected for a known departure from parallel trends.

    bias_values: callable (panel, j, k) -> (n,) giving the assumed treated-
    minus-untreated difference in counterfactual untreated trends for subjects
    still at baseline at j.  propensity: (n, periods) fitted P(A_j = 1 | .)
    among the still-untreated (entries elsewhere are ignored).  Requires a
    single binary treatment component.

        H_adj = H_mk - sum_{j=m}^{k} (A_j - pi_j) * 1{T >= j} * c(hist_j, k)
    """
    _check_pair(panel, m, k)
    if panel.n_treatment_components != 1:
        raise ConfigError("bias adjustment is defined for a single binary treatment")
    a = panel.treatments[:, :, 0]
    if not np.all((a == 0.0) | (a == 1.0)):
        raise ConfigError("bias adjustment requires a binary treatment")
    pi = np.asarray(propensity, dtype=float)
    if pi.shape != a.shape:
        raise ConfigError(f"propensity must have shape {a.shape}; got {pi.shape}")
    h = blip_down_coarse(model, psi, panel, m, k)
    tidx = _initiation_index(panel)
    for j in range(m, k + 1):
        at_risk = tidx >= j
        c_j = np.asarray(bias_values(panel, j, k), dtype=float)
        if c_j.shape != (panel.n_subjects,):
            raise ConfigError("bias function must return one value per subject")
        contrib = np.where(at_risk, (a[:, j] - pi[:, j]) * c_j, 0.0)
        if np.any(at_risk & ~np.isfinite(contrib)):
            raise EstimationError(
                f"bias adjustment hit a non-finite propensity at period {j}"
            )
        h -= contrib
    return h if i is None else float(h[int(i)])
