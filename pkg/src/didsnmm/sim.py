"""Synthetic panels with known ground truth for the estimation pipeline.

Every DGP here plants (i) a covariate process, (ii) a treatment law that may
load on an unobserved confounder U, and (iii) outcomes whose untreated
*levels* load on U but whose untreated *trends*, given the observed history,
do not.  Naive level comparisons are then confounded while the trend moments
stay clean, and the declared nuisance bases (see ``nuisance_for``) are exact
by construction, so planted parameters are the literal estimands.

Counterfactual arms reuse the factual arm's random draws (common random
numbers): a contrast like Y_k(arm) - Y_k(never) is a deterministic function
of the planted effects, so oracle targets carry essentially no Monte Carlo
noise beyond sampling the histories themselves.

Families
--------
coarse          binary Markov covariate, staggered adoption, one-shot blips;
                optional planted parallel-trends violation (constant bias)
standard        same covariate, on/off treatment, additive constant-in-k blips
multiplicative  lognormal outcomes, log-scale blips
regime          on/off treatment, 2 effective decision periods, utility weights
two_treatment   two components with exclusive initiation (A or R, never both
                at once); R may start later inside the A cohort
flood           AR(1) exposure rate, event-time blip basis, calendar labels
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.special import expit

from .blip import (BlipBasis, BlipModel, blip_down_coarse,
                   blip_down_multiplicative, blip_down_regime,
                   blip_down_standard, pair_grid)
from .errors import ConfigError
from .nuisance import NuisanceSpec, TreatmentModelSpec, TrendModelSpec, _cells_of
from .panel import PanelDataset, _initiation_index

_KINDS = ("coarse", "standard", "multiplicative", "regime", "two_treatment", "flood")

# psi length per kind (coarse: const + covariate + elapsed-time; others: see
# blip_model_for)
_PSI_LEN = {"coarse": 3, "standard": 2, "multiplicative": 2, "regime": 2,
            "two_treatment": 2, "flood": 5}


@dataclass(frozen=True)
class DgpConfig:
    """One simulation design: laws + planted effects.

    Fields are a union over kinds; validate() enforces the combinations that
    make sense.  All probabilities refer to a binary covariate L except for
    kind="flood", where the covariate is an AR(1) "rate".
    """

    name: str
    kind: str
    n_periods: int
    psi: tuple                       # planted blip coefficients
    psi2: tuple | None = None        # second component's blips (two_treatment)

    # covariate process
    l_start: float = 0.5             # P(L_0 = 1)
    l_stay: float = 0.75             # P(L_m = L_{m-1})
    ar_rho: float = 0.6              # flood rate AR(1)
    ar_sd: float = 0.5

    # unobserved confounder U ~ N(0,1), constant over time
    conf_hazard: float = 0.0         # U weight in the treatment law
    conf_level: float = 0.0          # U weight in outcome levels

    # treatment law
    hazard_intercepts: tuple = ()
    hazard_cov: float = 0.0          # covariate weight
    hazard_lag: float = 0.0          # previous-treatment weight (on/off kinds)
    r_intercept: float = 0.0         # two_treatment: R logit in the start race
    r_cov: float = 0.0
    cohort_r_intercept: float = 0.0  # two_treatment: R hazard after A started
    cohort_r_cov: float = 0.0

    # outcome law
    base_levels: tuple = ()
    level_cov: float = 0.0
    noise_sd: float = 1.0

    # planted parallel-trends violation (kind="coarse" only; needs a
    # U-free hazard so the violation size is exactly the constant below)
    violation_c0: float = 0.0

    # regime utility weights (kind="regime")
    tau: tuple | None = None

    # calendar
    time0: int = 0                   # label of period 0
    cal_origin: int = 1980           # flood blip calendar offset

    def validate(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown DGP kind {self.kind!r}")
        P = self.n_periods
        if P < 2:
            raise ConfigError("need at least 2 periods")
        if len(self.hazard_intercepts) != P:
            raise ConfigError(
                f"hazard_intercepts needs one entry per period ({P}); "
                f"got {len(self.hazard_intercepts)}"
            )
        if len(self.base_levels) != P:
            raise ConfigError(
                f"base_levels needs one entry per period ({P}); got {len(self.base_levels)}"
            )
        if len(self.psi) != _PSI_LEN[self.kind]:
            raise ConfigError(
                f"kind {self.kind!r} takes {_PSI_LEN[self.kind]} blip "
                f"coefficients; got {len(self.psi)}"
            )
        if not (0.0 < self.l_start < 1.0 and 0.0 < self.l_stay < 1.0):
            raise ConfigError("l_start and l_stay must lie strictly in (0, 1)")
        if not (abs(self.ar_rho) < 1.0 and self.ar_sd > 0.0):
            raise ConfigError("rate process needs |ar_rho| < 1 and ar_sd > 0")
        if self.noise_sd <= 0.0:
            raise ConfigError("noise_sd must be positive")
        if self.kind == "two_treatment":
            if self.psi2 is None or len(self.psi2) != 2:
                raise ConfigError("two_treatment needs psi2 with 2 coefficients")
        elif self.psi2 is not None:
            raise ConfigError("psi2 only applies to kind='two_treatment'")
        if self.violation_c0 != 0.0:
            if self.kind != "coarse":
                raise ConfigError("planted trend violations are a coarse-kind feature")
            if self.conf_hazard != 0.0:
                raise ConfigError(
                    "a planted violation needs conf_hazard = 0 so the planted "
                    "bias constant is exact"
                )
        if self.kind == "regime":
            if self.tau is None or len(self.tau) != P:
                raise ConfigError(f"regime kind needs tau with one weight per period ({P})")
            if not any(t != 0.0 for t in self.tau):
                raise ConfigError("tau must have at least one nonzero weight")
        elif self.tau is not None:
            raise ConfigError("tau only applies to kind='regime'")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @staticmethod
    def from_dict(obj) -> "DgpConfig":
        if not isinstance(obj, dict):
            raise ConfigError("DGP config must be a JSON object")
        known = {f.name for f in fields(DgpConfig)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"/{unknown[0]}: unknown DGP config field")
        for req in ("name", "kind", "n_periods", "psi"):
            if req not in obj:
                raise ConfigError(f"/{req}: required DGP config field is missing")
        kw = {}
        for f in fields(DgpConfig):
            if f.name not in obj:
                continue
            v = obj[f.name]
            kw[f.name] = tuple(v) if isinstance(v, list) else v
        cfg = DgpConfig(**kw)
        cfg.validate()
        return cfg


def gallery() -> dict:
    """The shipped configs, keyed by name."""
    g = {}
    g["coarse_staggered"] = DgpConfig(
        name="coarse_staggered", kind="coarse", n_periods=4,
        psi=(1.0, 0.6, 0.25),
        hazard_intercepts=(-1.4, -1.2, -1.0, -0.8), hazard_cov=0.8,
        conf_hazard=0.7, conf_level=1.5,
        base_levels=(0.0, 0.3, 0.7, 1.2), level_cov=1.0, noise_sd=1.0,
    )
    g["coarse_null"] = replace(g["coarse_staggered"], name="coarse_null",
                               psi=(0.0, 0.0, 0.0))
    g["coarse_violated"] = replace(
        g["coarse_staggered"], name="coarse_violated",
        conf_hazard=0.0, violation_c0=0.5,
    )
    g["standard_binary"] = DgpConfig(
        name="standard_binary", kind="standard", n_periods=4,
        psi=(0.8, 0.5),
        hazard_intercepts=(-1.0, -0.9, -0.8, -0.7), hazard_cov=0.8, hazard_lag=0.6,
        conf_level=0.8,
        base_levels=(0.0, 0.3, 0.7, 1.2), level_cov=1.0, noise_sd=1.0,
    )
    g["standard_null"] = replace(g["standard_binary"], name="standard_null",
                                 psi=(0.0, 0.0))
    g["multiplicative"] = DgpConfig(
        name="multiplicative", kind="multiplicative", n_periods=4,
        psi=(0.3, 0.2),
        hazard_intercepts=(-0.8, -0.8, -0.8, -0.8), hazard_cov=0.6, hazard_lag=0.4,
        conf_level=0.5,
        base_levels=(0.0, 0.1, 0.2, 0.3), level_cov=0.4, noise_sd=0.5,
    )
    g["regime_2period"] = DgpConfig(
        name="regime_2period", kind="regime", n_periods=3,
        psi=(-0.5, 2.0), tau=(0.0, 1.0, 1.0),
        hazard_intercepts=(-0.6, -0.5, -0.4), hazard_cov=0.7,
        conf_hazard=0.6, conf_level=1.0,
        base_levels=(0.0, 0.4, 0.9), level_cov=1.0, noise_sd=1.0,
    )
    g["two_treatment"] = DgpConfig(
        name="two_treatment", kind="two_treatment", n_periods=3,
        psi=(0.9, 0.4), psi2=(-0.6, 0.3),
        hazard_intercepts=(-1.1, -1.1, -1.1), hazard_cov=0.7,
        r_intercept=-1.3, r_cov=0.5,
        cohort_r_intercept=-0.9, cohort_r_cov=0.5,
        conf_level=0.8,
        base_levels=(0.0, 0.4, 0.9), level_cov=1.0, noise_sd=1.0,
    )
    g["flood_event"] = DgpConfig(
        name="flood_event", kind="flood", n_periods=6,
        psi=(3.0, 0.15, 1.2, -0.2, 0.8),
        ar_rho=0.6, ar_sd=0.5,
        hazard_intercepts=(-1.6, -1.4, -1.2, -1.0, -0.8, -0.8),
        hazard_cov=0.7, hazard_lag=0.8,
        conf_level=0.8,
        base_levels=(10.0, 10.5, 11.2, 11.8, 12.3, 13.0), level_cov=1.0,
        noise_sd=0.8, time0=1990, cal_origin=1980,
    )
    return g


# -- factual treatment paths ---------------------------------------------------


def _first_on(a2: np.ndarray) -> np.ndarray:
    """(n,) first period index with a > 0; n_periods when never on."""
    nz = a2 > 0
    any_ = nz.any(axis=1)
    idx = np.argmax(nz, axis=1)
    idx[~any_] = a2.shape[1]
    return idx


def _staggered_path(cfg, x, u, hu):
    n, P = x.shape
    a = np.zeros((n, P))
    on = np.zeros(n, dtype=bool)
    for m in range(P):
        p = expit(cfg.hazard_intercepts[m] + cfg.hazard_cov * x[:, m]
                  + cfg.conf_hazard * u)
        on = on | (~on & (hu[:, m] < p))
        a[:, m] = on
    return a[:, :, None]


def _switching_path(cfg, x, u, hu):
    n, P = x.shape
    a = np.zeros((n, P))
    prev = np.zeros(n)
    for m in range(P):
        eta = (cfg.hazard_intercepts[m] + cfg.hazard_cov * x[:, m]
               + cfg.hazard_lag * prev + cfg.conf_hazard * u)
        a[:, m] = (hu[:, m] < expit(eta)).astype(float)
        prev = a[:, m]
    return a[:, :, None]


def _two_component_path(cfg, x, u, hu, ru):
    n, P = x.shape
    a = np.zeros((n, P))
    r = np.zeros((n, P))
    a_on = np.zeros(n, dtype=bool)
    r_on = np.zeros(n, dtype=bool)
    for m in range(P):
        # race among the never-initiated: start A, start R, or wait; the two
        # components can never start in the same period
        ua = np.exp(cfg.hazard_intercepts[m] + cfg.hazard_cov * x[:, m])
        ur = np.exp(cfg.r_intercept + cfg.r_cov * x[:, m])
        denom = 1.0 + ua + ur
        pa, pr = ua / denom, ur / denom
        never = ~a_on & ~r_on
        start_a = never & (hu[:, m] < pa)
        start_r = never & ~start_a & (hu[:, m] < pa + pr)
        # R can also start strictly after A did
        cohort = a_on & ~r_on
        pr2 = expit(cfg.cohort_r_intercept + cfg.cohort_r_cov * x[:, m])
        start_r2 = cohort & (ru[:, m] < pr2)
        a_on = a_on | start_a
        r_on = r_on | start_r | start_r2
        a[:, m] = a_on
        r[:, m] = r_on
    return np.stack([a, r], axis=2)


def _factual_path(cfg, x, u, hu, ru):
    if cfg.kind == "coarse":
        return _staggered_path(cfg, x, u, hu)
    if cfg.kind == "two_treatment":
        return _two_component_path(cfg, x, u, hu, ru)
    return _switching_path(cfg, x, u, hu)


# -- counterfactual arms ---------------------------------------------------------


def _arm_path(cfg, a_fact, x, arm):
    n, P, q = a_fact.shape
    if arm is None:
        return a_fact
    if isinstance(arm, str) and arm == "never":
        return np.zeros_like(a_fact)
    if not (isinstance(arm, tuple) and arm):
        raise ConfigError(f"unknown counterfactual arm {arm!r}")
    head = arm[0]
    if head == "initiate":
        t = int(arm[1])
        comp = 0
        if len(arm) == 3:
            names = _treatment_names(cfg)
            comp = names.index(arm[2]) if isinstance(arm[2], str) else int(arm[2])
        if not (0 <= t < P):
            raise ConfigError(f"initiation period {t} outside 0..{P - 1}")
        out = np.zeros_like(a_fact)
        out[:, t:, comp] = 1.0
        return out
    if head == "pattern":
        path = np.asarray(arm[1], dtype=float)
        if path.ndim == 1:
            path = path[:, None]
        if path.shape != (P, q):
            raise ConfigError(f"pattern must have shape ({P},) or ({P},{q})")
        return np.broadcast_to(path, (n, P, q)).copy()
    if head == "regime":
        fn = arm[1]
        out = np.zeros_like(a_fact)
        for m in range(P):
            acts = np.asarray(fn(m, x[:, : m + 1], out[:, :m, 0]), dtype=float)
            if acts.shape != (n,):
                raise ConfigError("regime rule must return one action per subject")
            out[:, m, 0] = acts
        return out
    raise ConfigError(f"unknown counterfactual arm {arm!r}")


def _treatment_names(cfg):
    return ("a", "r") if cfg.kind == "two_treatment" else ("a",)


def _covariate_name(cfg):
    return "rate" if cfg.kind == "flood" else "L"


# -- outcome assembly --------------------------------------------------------------


def _flood_gamma(cfg, x, j, k):
    """(n,) planted event blip for treatment at period j felt at period k."""
    p = cfg.psi
    n = x.shape[0]
    rate_lag = x[:, j - 1] if j > 0 else np.zeros(n)
    return (p[0] + p[1] * (cfg.time0 + j - cfg.cal_origin)
            + p[2] * (k - j) + p[3] * (k - j) ** 2 + p[4] * rate_lag)


def _violation_terms(cfg, x, a_fact):
    """(n, P) additive shifts tying the untreated outcome to the factual
    treatment path: each period-j treatment residual, scaled by how long ago
    it happened, moves all later untreated levels.  Built so the adjacent
    trend contrast between A_m = 1 and A_m = 0 equals violation_c0 for every
    pair, for every history."""
    n, P = x.shape
    out = np.zeros((n, P))
    if cfg.violation_c0 == 0.0:
        return out
    tidx = _first_on(a_fact[:, :, 0])
    for j in range(P - 1):
        pi_j = expit(cfg.hazard_intercepts[j] + cfg.hazard_cov * x[:, j])
        chi = np.where(tidx >= j, a_fact[:, j, 0] - pi_j, 0.0)
        for k in range(j + 1, P):
            out[:, k] += cfg.violation_c0 * (k - j) * chi
    return out


def _outcomes(cfg, x, u, eps, a_fact, a_arm):
    n, P = x.shape
    base = np.asarray(cfg.base_levels, dtype=float)
    psi = np.asarray(cfg.psi, dtype=float)

    if cfg.kind == "multiplicative":
        # log-scale levels + log-scale blips; everything positive
        log_clean = (base[None, :] + cfg.level_cov * x
                     + cfg.conf_level * u[:, None] + cfg.noise_sd * eps)
        log_eff = np.zeros((n, P))
        for k in range(P):
            for j in range(k):
                log_eff[:, k] += a_arm[:, j, 0] * (psi[0] + psi[1] * x[:, j])
        return np.exp(log_clean + log_eff)

    y = (base[None, :] + cfg.level_cov * x + cfg.conf_level * u[:, None]
         + cfg.noise_sd * eps)
    y = y + _violation_terms(cfg, x, a_fact)

    if cfg.kind == "coarse":
        t0 = _first_on(a_arm[:, :, 0])
        has = t0 < P
        lt = np.where(has, x[np.arange(n), np.minimum(t0, P - 1)], 0.0)
        for k in range(P):
            m = t0 < k
            y[m, k] += psi[0] + psi[1] * lt[m] + psi[2] * (k - t0[m])
    elif cfg.kind == "two_treatment":
        for comp, pp in ((0, cfg.psi), (1, cfg.psi2)):
            t0 = _first_on(a_arm[:, :, comp])
            has = t0 < P
            lt = np.where(has, x[np.arange(n), np.minimum(t0, P - 1)], 0.0)
            for k in range(P):
                m = t0 < k
                y[m, k] += pp[0] + pp[1] * lt[m]
    elif cfg.kind in ("standard", "regime"):
        for k in range(P):
            for j in range(k):
                y[:, k] += a_arm[:, j, 0] * (psi[0] + psi[1] * x[:, j])
    elif cfg.kind == "flood":
        for k in range(P):
            for j in range(k):
                y[:, k] += a_arm[:, j, 0] * _flood_gamma(cfg, x, j, k)
    else:  # pragma: no cover - validate() guards
        raise ConfigError(f"unknown DGP kind {cfg.kind!r}")
    return y


def simulate_panel(cfg: DgpConfig, n: int, seed, arm=None) -> PanelDataset:
    """Simulate a panel; deterministic given (cfg, n, seed).

    ``arm`` selects the treatment path used for the outcomes (the factual
    path is always generated first, off the same draws, so arms share all
    randomness):

        None                 factual panel
        "never"              treatment withheld everywhere
        ("initiate", t)      everyone starts component 0 at period t
        ("initiate", t, c)   ... component c (index or name)
        ("pattern", path)    a fixed (P,) or (P, q) path for everyone
        ("regime", fn)       fn(m, covariates[:, :m+1], actions[:, :m]) -> (n,)

    Under a planted violation the never arm is the untreated counterfactual
    *given the factual treatment path* — exactly the quantity trend-based
    estimation is about — so arm contrasts stay deterministic there too.
    """
    cfg.validate()
    n = int(n)
    if n < 1:
        raise ConfigError("need at least one subject")
    P = cfg.n_periods
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    # fixed draw order so every arm consumes the same randomness
    u = rng.standard_normal(n)
    if cfg.kind == "flood":
        innov = rng.standard_normal((n, P))
        x = np.empty((n, P))
        x[:, 0] = cfg.ar_sd / np.sqrt(1.0 - cfg.ar_rho ** 2) * innov[:, 0]
        for m in range(1, P):
            x[:, m] = cfg.ar_rho * x[:, m - 1] + cfg.ar_sd * innov[:, m]
    else:
        lu = rng.random((n, P))
        x = np.empty((n, P))
        x[:, 0] = (lu[:, 0] < cfg.l_start).astype(float)
        for m in range(1, P):
            stay = lu[:, m] < cfg.l_stay
            x[:, m] = np.where(stay, x[:, m - 1], 1.0 - x[:, m - 1])
    hu = rng.random((n, P))
    ru = rng.random((n, P)) if cfg.kind == "two_treatment" else None
    eps = rng.standard_normal((n, P))

    a_fact = _factual_path(cfg, x, u, hu, ru)
    a_arm = _arm_path(cfg, a_fact, x, arm)
    y = _outcomes(cfg, x, u, eps, a_fact, a_arm)

    return PanelDataset(
        outcomes=y,
        treatments=a_arm,
        covariates=x[:, :, None],
        subject_ids=tuple(f"s{i:07d}" for i in range(n)),
        time_labels=tuple(range(cfg.time0, cfg.time0 + P)),
        treatment_names=_treatment_names(cfg),
        covariate_names=(_covariate_name(cfg),),
    )


def planted_blip(cfg: DgpConfig, panel: PanelDataset, t: int, k: int,
                 component: int = 0) -> np.ndarray:
    """(n,) planted effect of initiating at t on the period-k outcome,
    evaluated on the panel's covariate histories (k > t)."""
    cfg.validate()
    if not (0 <= t < k <= cfg.n_periods - 1):
        raise ConfigError(f"need 0 <= t < k <= {cfg.n_periods - 1}; got ({t}, {k})")
    x = panel.covariates[:, :, 0]
    psi = cfg.psi
    if cfg.kind == "coarse":
        return psi[0] + psi[1] * x[:, t] + psi[2] * (k - t)
    if cfg.kind == "two_treatment":
        pp = cfg.psi if component == 0 else cfg.psi2
        return pp[0] + pp[1] * x[:, t]
    if cfg.kind in ("standard", "regime", "multiplicative"):
        return psi[0] + psi[1] * x[:, t]
    if cfg.kind == "flood":
        return _flood_gamma(cfg, x, t, k)
    raise ConfigError(f"unknown DGP kind {cfg.kind!r}")  # pragma: no cover


# -- model / nuisance builders -------------------------------------------------------


def blip_model_for(cfg: DgpConfig) -> BlipModel:
    """The blip model whose parameter vector is exactly the planted truth."""
    cfg.validate()
    cov = _covariate_name(cfg)
    if cfg.kind == "coarse":
        basis = BlipBasis(shared_terms=(("const",), ("z", cov, 0), ("etime", 1)))
        return BlipModel(flavor="coarse", basis=basis)
    if cfg.kind == "standard":
        basis = BlipBasis(shared_terms=(("const",), ("z", cov, 0)))
        return BlipModel(flavor="standard", basis=basis)
    if cfg.kind == "multiplicative":
        basis = BlipBasis(shared_terms=(("const",), ("z", cov, 0)))
        return BlipModel(flavor="multiplicative", basis=basis)
    if cfg.kind == "regime":
        basis = BlipBasis(shared_terms=(("const",), ("z", cov, 0)))
        return BlipModel(flavor="regime", basis=basis, action_grid=(0.0, 1.0))
    if cfg.kind == "two_treatment":
        # one (intercept, covariate) block per pair per component: the coarse
        # contrast for the first component absorbs the downstream-R drift, so
        # it genuinely varies by pair
        basis = BlipBasis(per_pair_terms=(("const",), ("z", cov, 0)))
        return BlipModel(flavor="coarse", basis=basis)
    if cfg.kind == "flood":
        basis = BlipBasis(shared_terms=(
            ("const",), ("calendar", cfg.cal_origin), ("etime", 1), ("etime", 2),
            ("z", cov, 1),
        ))
        return BlipModel(flavor="standard", basis=basis)
    raise ConfigError(f"unknown DGP kind {cfg.kind!r}")  # pragma: no cover


def nuisance_for(cfg: DgpConfig) -> NuisanceSpec:
    """Correctly specified nuisances for the config (exact by construction)."""
    cfg.validate()
    cov = _covariate_name(cfg)
    if cfg.kind == "flood":
        treatment = TreatmentModelSpec(
            family="logistic",
            terms=(("const",), ("z", cov, 0), ("a", "a", 1)),
        )
        trend = TrendModelSpec(
            terms=(("const",), ("z", cov, 0), ("asum", "a"), ("aindexsum", "a")),
            per_pair=True,
        )
    elif cfg.kind == "multiplicative":
        # lognormal outcomes make the trend a genuinely nonlinear function of
        # the discrete history: condition on full history cells instead
        lags = range(cfg.n_periods)
        terms = tuple(("z", cov, lag) for lag in lags) + tuple(
            ("a", "a", lag) for lag in range(1, cfg.n_periods)
        )
        treatment = TreatmentModelSpec(family="saturated")
        trend = TrendModelSpec(terms=terms, per_pair=True, family="cells")
    else:
        treatment = TreatmentModelSpec(family="saturated")
        trend = TrendModelSpec(terms=(("const",), ("z", cov, 0)), per_pair=True)
    return NuisanceSpec(treatment=treatment, trend=trend, n_folds=2, fold_seed=0)


def misspecify(nuisance: NuisanceSpec, mode: str) -> NuisanceSpec:
    """Deliberately wrong-basis variants for robustness experiments.

    "treatment-wrong" collapses the treatment model to a per-period constant;
    "trend-wrong" collapses the trend design to per-pair intercepts;
    "both-wrong" does both.
    """
    flat_treatment = TreatmentModelSpec(
        family="saturated", terms=(("const",),),
        at_risk_only=nuisance.treatment.at_risk_only,
    )
    flat_trend = TrendModelSpec(terms=(("const",),), per_pair=True)
    if mode == "treatment-wrong":
        return replace(nuisance, treatment=flat_treatment)
    if mode == "trend-wrong":
        return replace(nuisance, trend=flat_trend)
    if mode == "both-wrong":
        return replace(nuisance, treatment=flat_treatment, trend=flat_trend)
    raise ConfigError(
        f"unknown misspecification mode {mode!r}; expected 'treatment-wrong', "
        "'trend-wrong', or 'both-wrong'"
    )


# -- exact values: two-component first-stage truth ---------------------------------


def _markov_step(cfg, l_val):
    """P(L_{m+1} = 1 | L_m = l_val)."""
    return cfg.l_stay if l_val == 1 else 1.0 - cfg.l_stay


def _two_treatment_drift(cfg, t, k, l_t):
    """Expected downstream-R contribution to the period-k outcome for a
    subject that started component A at t with covariate l_t, summed over the
    R initiation times j in (t, k)."""
    pr1, pr2 = cfg.psi2
    total = 0.0
    # enumerate covariate paths l_{t+1}..l_{k-1} with exact chain probabilities
    span = range(t + 1, k)
    for path in itertools.product((0.0, 1.0), repeat=len(span)):
        prob = 1.0
        prev = l_t
        for l_next in path:
            step = _markov_step(cfg, prev)
            prob *= step if l_next == 1.0 else 1.0 - step
            prev = l_next
        survive = 1.0
        for offset, j in enumerate(span):
            h = expit(cfg.cohort_r_intercept + cfg.cohort_r_cov * path[offset])
            total += prob * survive * h * (pr1 + pr2 * path[offset])
            survive *= 1.0 - h
    return total


def planted_psi(cfg: DgpConfig) -> np.ndarray:
    """The model parameter vector blip_model_for(cfg) should recover.

    For most kinds that is cfg.psi verbatim.  The two-component coarse model
    targets the initiation contrast *marginalized over later R starts*, so the
    A blocks pick up an exactly computable drift term on multi-step pairs.
    """
    cfg.validate()
    if cfg.kind != "two_treatment":
        return np.asarray(cfg.psi, dtype=float)
    pairs = pair_grid(cfg.n_periods)
    blocks = []
    for t, k in pairs:  # component A: planted blip + downstream-R drift
        d0 = _two_treatment_drift(cfg, t, k, 0.0)
        d1 = _two_treatment_drift(cfg, t, k, 1.0)
        blocks.append(cfg.psi[0] + d0)
        blocks.append(cfg.psi[1] + (d1 - d0))
    for _t, _k in pairs:  # component R: nothing ever follows it
        blocks.append(cfg.psi2[0])
        blocks.append(cfg.psi2[1])
    return np.asarray(blocks, dtype=float)


# -- regime enumeration --------------------------------------------------------------


def _regime_gamma(cfg, l_val):
    return cfg.psi[0] + cfg.psi[1] * l_val


def enumerate_regimes(cfg: DgpConfig) -> list:
    """All deterministic rules for the 3-period regime design.

    A rule is ((a|L0=0, a|L0=1), g1) with g1 an 8-tuple indexed by
    4*l0 + 2*a0 + l1; the final period has no downstream outcome to move, so
    its action is pinned at baseline.
    """
    cfg.validate()
    if cfg.kind != "regime" or cfg.n_periods != 3:
        raise ConfigError("regime enumeration is built for the 3-period regime kind")
    rules = []
    for g0 in itertools.product((0.0, 1.0), repeat=2):
        for g1 in itertools.product((0.0, 1.0), repeat=8):
            rules.append((g0, g1))
    return rules


def exact_regime_value(cfg: DgpConfig, rule) -> float:
    """Exact expected utility of a rule under the DGP (no Monte Carlo)."""
    cfg.validate()
    if cfg.kind != "regime" or cfg.n_periods != 3:
        raise ConfigError("exact regime values are built for the 3-period regime kind")
    tau = np.asarray(cfg.tau, dtype=float)
    # baseline: E[Y_k(never)] = base_k + level_cov * E[L_k]
    p = cfg.l_start
    marginals = [p]
    for _ in range(cfg.n_periods - 1):
        p = p * cfg.l_stay + (1.0 - p) * (1.0 - cfg.l_stay)
        marginals.append(p)
    value = sum(
        tau[k] * (cfg.base_levels[k] + cfg.level_cov * marginals[k])
        for k in range(cfg.n_periods)
    )
    g0, g1 = rule
    w_after = [float(tau[j + 1:].sum()) for j in range(cfg.n_periods)]
    for l0 in (0, 1):
        p0 = cfg.l_start if l0 == 1 else 1.0 - cfg.l_start
        a0 = g0[l0]
        for l1 in (0, 1):
            step = _markov_step(cfg, l0)
            p01 = p0 * (step if l1 == 1 else 1.0 - step)
            a1 = g1[4 * l0 + 2 * int(a0) + l1]
            util = a0 * _regime_gamma(cfg, l0) * w_after[0]
            util += a1 * _regime_gamma(cfg, l1) * w_after[1]
            value += p01 * util
    return float(value)


def exact_best_rule(cfg: DgpConfig):
    """(rule, value) with the best exact value; ties toward all-baseline."""
    best, best_v = None, -np.inf
    for rule in enumerate_regimes(cfg):
        v = exact_regime_value(cfg, rule)
        if v > best_v + 1e-12:
            best, best_v = rule, v
    return best, best_v


def planted_optimal_rule(cfg: DgpConfig):
    """The blip-level optimal rule implied by the planted coefficients."""
    cfg.validate()
    if cfg.kind != "regime" or cfg.n_periods != 3:
        raise ConfigError("built for the 3-period regime kind")
    tau = np.asarray(cfg.tau, dtype=float)
    w0 = float(tau[1:].sum())
    w1 = float(tau[2:].sum())
    g0 = tuple(1.0 if _regime_gamma(cfg, l) * w0 > 0 else 0.0 for l in (0, 1))
    g1 = tuple(
        1.0 if _regime_gamma(cfg, l1) * w1 > 0 else 0.0
        for l0 in (0, 1) for a0 in (0, 1) for l1 in (0, 1)
    )
    return (g0, g1)


def rule_fn(rule):
    """Wrap a rule table as a vectorized ("regime", fn) arm callable."""
    g0, g1 = np.asarray(rule[0], dtype=float), np.asarray(rule[1], dtype=float)

    def fn(m, cov_hist, act_hist):
        n = cov_hist.shape[0]
        if m == 0:
            return g0[cov_hist[:, 0].astype(int)]
        if m == 1:
            idx = (4 * cov_hist[:, 0].astype(int)
                   + 2 * act_hist[:, 0].astype(int)
                   + cov_hist[:, 1].astype(int))
            return g1[idx]
        return np.zeros(n)

    return fn


def true_optimal_actions(cfg: DgpConfig, panel: PanelDataset, j: int) -> np.ndarray:
    """(n,) planted-truth optimal action at period j for each subject."""
    cfg.validate()
    if cfg.kind != "regime":
        raise ConfigError("optimal actions are defined for the regime kind")
    tau = np.asarray(cfg.tau, dtype=float)
    w = float(tau[j + 1:].sum())
    gain = (cfg.psi[0] + cfg.psi[1] * panel.covariates[:, j, 0]) * w
    return (gain > 0).astype(float)


# -- oracle targets ---------------------------------------------------------------


@dataclass
class OracleTruth:
    """Monte Carlo (and where possible exact) targets for one config."""

    name: str
    n_mc: int
    seed: int
    psi_star: list
    mean_factual: list
    se_factual: list
    mean_never: list
    se_never: list
    gap: list                        # E[Y_k - Y_k(never)], common-draw contrast
    se_gap: list
    never_by_group: dict = field(default_factory=dict)
    never_by_group_covariate: dict = field(default_factory=dict)
    lag_effects: dict = field(default_factory=dict)
    regime_values: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        from ._util import jsonable

        return jsonable(self.__dict__)


def _mean_se(arr, axis=0):
    arr = np.asarray(arr, dtype=float)
    n = arr.shape[axis]
    mean = arr.mean(axis=axis)
    se = arr.std(axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def oracle_truth(cfg: DgpConfig, n_mc: int = 100_000, seed: int = 0,
                 regimes=None) -> OracleTruth:
    """Simulate counterfactual arms with shared draws and average the targets.

    ``regimes``: optional {name: rule_fn} map; each gets a Monte Carlo value
    under the config's utility weights.
    """
    cfg.validate()
    fact = simulate_panel(cfg, n_mc, seed)
    nev = simulate_panel(cfg, n_mc, seed, arm="never")
    P = cfg.n_periods

    mean_f, se_f = _mean_se(fact.outcomes)
    mean_n, se_n = _mean_se(nev.outcomes)
    gap, se_gap = _mean_se(fact.outcomes - nev.outcomes)

    tidx = _initiation_index(fact)
    groups = {}
    groups_cov = {}
    for m in list(range(P)) + ["never"]:
        mask = (tidx == P) if m == "never" else (tidx == m)
        key = "never" if m == "never" else f"m={m}"
        if not mask.any():
            continue
        mu, se = _mean_se(nev.outcomes[mask])
        groups[key] = {"n": int(mask.sum()), "mean": mu.tolist(), "se": se.tolist()}
        if cfg.kind != "flood" and m != "never":
            for lval in (0.0, 1.0):
                sub = mask & (fact.covariates[:, m, 0] == lval)
                if not sub.any():
                    continue
                mu2, se2 = _mean_se(nev.outcomes[sub])
                groups_cov[f"m={m}/L={int(lval)}"] = {
                    "n": int(sub.sum()), "mean": mu2.tolist(), "se": se2.tolist(),
                }

    lag_effects = {}
    if cfg.kind == "coarse":
        for lag in range(1, P):
            vals = []
            for m in range(P):
                if m + lag > P - 1:
                    continue
                mask = tidx == m
                if mask.any():
                    vals.append(planted_blip(cfg, fact, m, m + lag)[mask])
            if vals:
                allv = np.concatenate(vals)
                mu, se = _mean_se(allv)
                lag_effects[lag] = {"n": int(allv.size), "mean": float(mu),
                                    "se": float(se)}

    regime_values = {}
    if regimes:
        if cfg.tau is None:
            raise ConfigError("regime values need a config with utility weights")
        tau = np.asarray(cfg.tau, dtype=float)
        for name, fn in regimes.items():
            arm_panel = simulate_panel(cfg, n_mc, seed, arm=("regime", fn))
            per_subject = arm_panel.outcomes @ tau
            mu, se = _mean_se(per_subject)
            regime_values[name] = {"value": float(mu), "se": float(se)}

    return OracleTruth(
        name=cfg.name, n_mc=n_mc, seed=seed,
        psi_star=[float(v) for v in planted_psi(cfg)],
        mean_factual=mean_f.tolist(), se_factual=se_f.tolist(),
        mean_never=mean_n.tolist(), se_never=se_n.tolist(),
        gap=gap.tolist(), se_gap=se_gap.tolist(),
        never_by_group=groups, never_by_group_covariate=groups_cov,
        lag_effects=lag_effects, regime_values=regime_values,
    )


def cde_truth(cfg: DgpConfig, panel: PanelDataset, m: int, k: int):
    """(value, se): realized-cohort mean of the planted direct effect of the
    first component at (m, k), holding the second component at baseline."""
    cfg.validate()
    if cfg.kind != "two_treatment":
        raise ConfigError("direct-effect truth is defined for the two_treatment kind")
    t_a = _first_on(panel.treatments[:, :, 0])
    t_r = _first_on(panel.treatments[:, :, 1])
    cohort = (t_a == m) & (t_r > m)
    if not cohort.any():
        raise ConfigError(f"no subjects start the first component at period {m}")
    vals = cfg.psi[0] + cfg.psi[1] * panel.covariates[cohort, m, 0]
    mu, se = _mean_se(vals)
    return float(mu), float(se)


# -- construction self-audit --------------------------------------------------------
#
# The estimating equations lean on one constructed fact: given the observed
# history, the *untreated* one-step outcome trend carries no information
# about the current treatment.  The audit regresses the never-arm trend on
# A_m after residualizing both on the history (exact cells for the discrete
# designs, the declared linear basis for the flood design) and reports the
# pooled coefficient with a subject-clustered standard error.  For violation
# configs the same machinery *measures* the planted bias instead: the
# per-pair coefficient is the constant the violation planted.


def _residualize_cells(ids, n_cells, v, mask):
    out = v.astype(float).copy()
    sums = np.bincount(ids[mask], weights=v[mask], minlength=n_cells)
    cnts = np.bincount(ids[mask], minlength=n_cells)
    means = sums / np.maximum(cnts, 1)
    out[mask] = v[mask] - means[ids[mask]]
    return out


def _residualize_linear(X, v, mask):
    out = v.astype(float).copy()
    beta, *_ = np.linalg.lstsq(X[mask], v[mask], rcond=None)
    out[mask] = v[mask] - X[mask] @ beta
    return out


def _audit_rows(cfg, fact, trend_of_pair):
    """Yield (m, k, comp, mask, ra, rt): residualized treatment and trend
    values per pair and component, with the eligible-row mask.

    trend_of_pair(m, k) supplies the (n,) outcome-change being audited —
    the never-arm change for the construction audit, the blipped-down
    factual change for the identification audit.
    """
    P = cfg.n_periods
    n = fact.n_subjects
    tidx = _initiation_index(fact)
    at_risk_kinds = cfg.kind in ("coarse", "two_treatment")
    x = fact.covariates[:, :, 0]
    for (m, k) in pair_grid(P):
        mask = (tidx >= m) if at_risk_kinds else np.ones(n, dtype=bool)
        if not mask.any():
            continue
        dy = np.asarray(trend_of_pair(m, k), dtype=float)
        if cfg.kind == "flood":
            asum = fact.treatments[:, :m, 0].sum(axis=1) if m else np.zeros(n)
            aidx = (fact.treatments[:, :m, 0] @ np.arange(m, dtype=float)
                    if m else np.zeros(n))
            X = np.column_stack([np.ones(n), x[:, m], asum, aidx])
            rt = _residualize_linear(X, dy, mask)
            resid = lambda v: _residualize_linear(X, v, mask)
        else:
            hist = np.column_stack(
                [x[:, : m + 1]] + ([fact.treatments[:, :m, :].reshape(n, -1)] if m else [])
            )
            ids, n_cells = _cells_of(hist)
            rt = _residualize_cells(ids, n_cells, dy, mask)
            resid = lambda v: _residualize_cells(ids, n_cells, v, mask)
        for comp in range(fact.n_treatment_components):
            ra = resid(fact.treatments[:, m, comp])
            if not np.any(ra[mask] != 0.0):
                continue  # no treatment variation left at this pair
            yield m, k, comp, mask, ra, rt


def _pooled_audit(cfg, fact, trend_of_pair) -> dict:
    rows = []
    num = den = 0.0
    scores = np.zeros(fact.n_subjects)
    kept = []
    for m, k, comp, mask, ra, rt in _audit_rows(cfg, fact, trend_of_pair):
        sa = float(np.sum(ra[mask] ** 2))
        sc = float(np.sum(ra[mask] * rt[mask]))
        coef = sc / sa
        e = rt[mask] - coef * ra[mask]
        se = float(np.sqrt(np.sum((ra[mask] * e) ** 2))) / sa
        rows.append({"pair": (m, k), "component": comp, "coef": coef, "se": se,
                     "n": int(mask.sum())})
        num += sc
        den += sa
        kept.append((mask, ra, rt))
    if den == 0.0:
        raise ConfigError("no treatment variation anywhere; nothing to audit")
    pooled = num / den
    for mask, ra, rt in kept:
        e = rt - pooled * ra
        scores[mask] += (ra * e)[mask]
    se = float(np.sqrt(np.sum(scores ** 2))) / den
    return {"coef": float(pooled), "se": se,
            "z": float(pooled / se) if se > 0 else np.inf, "pairs": rows}


def trend_independence_check(cfg: DgpConfig, n: int = 100_000, seed: int = 0) -> dict:
    """Pooled residualized regression of the untreated trend on the current
    treatment; near zero (|z| small) when the construction holds."""
    cfg.validate()
    fact = simulate_panel(cfg, n, seed)
    nev = simulate_panel(cfg, n, seed, arm="never")
    return _pooled_audit(
        cfg, fact, lambda m, k: nev.outcomes[:, k] - nev.outcomes[:, k - 1]
    )


_STRIP = {"coarse": blip_down_coarse, "standard": blip_down_standard,
          "multiplicative": blip_down_multiplicative}


def identification_check(cfg: DgpConfig, n: int = 100_000, seed: int = 0) -> dict:
    """Residualized regression of the blipped-down factual outcome change at
    the planted parameters on the current treatment: the moment condition the
    estimator exploits, measured as a regression coefficient (near zero when
    identification holds)."""
    cfg.validate()
    fact = simulate_panel(cfg, n, seed)
    model = blip_model_for(cfg)
    psi = planted_psi(cfg)

    def strip(m, k):
        if model.flavor == "regime":
            return blip_down_regime(model, psi, fact, m, k)
        return _STRIP[model.flavor](model, psi, fact, m, k)

    return _pooled_audit(cfg, fact, lambda m, k: strip(m, k) - strip(m, k - 1))


def measure_planted_bias(cfg: DgpConfig, n: int = 100_000, seed: int = 0) -> dict:
    """Estimate the planted trend-bias constant on a violation config.

    Uses the same residualized regressions as the audit; on a violation
    config every pair's coefficient estimates violation_c0.
    """
    cfg.validate()
    if cfg.violation_c0 == 0.0:
        raise ConfigError("this config plants no violation; nothing to measure")
    out = trend_independence_check(cfg, n=n, seed=seed)
    out["planted_c0"] = cfg.violation_c0
    return out
