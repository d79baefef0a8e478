"""Optimal-regime fitting, rule extraction, decision tables, and values."""

import numpy as np
import pytest

from didsnmm.blip import BlipBasis, BlipModel
from didsnmm.errors import ConfigError
from didsnmm.gest import GEstimate
from didsnmm.regime import (decision_table, fit_optimal_regime,
                            fitted_rule_fn, optimal_action, regime_value,
                            value_of_rule)
from didsnmm.sim import blip_model_for, nuisance_for, true_optimal_actions


def _hand_fit(panel, psi):
    model = BlipModel(flavor="regime",
                      basis=BlipBasis(shared_terms=(("const",), ("z", "L", 0))),
                      action_grid=(0.0, 1.0))
    return GEstimate(psi=np.asarray(psi, float), method="iterative",
                     flavor="regime", model=model, nuisance=None,
                     residual_norm=0.0, tolerance=1e-8,
                     n_subjects=panel.n_subjects)


def test_fit_records_premises_and_weights(regime_fit):
    cfg, panel, fit = regime_fit
    assert fit.flavor == "regime"
    assert fit.diagnostics["utility_weights"] == [0.0, 1.0, 1.0]
    assert len(fit.diagnostics["assumptions"]) == 3
    assert "untestable" in fit.diagnostics["caution"]
    # the solved moment is genuinely at a root
    assert fit.residual_norm <= fit.tolerance


def test_fit_rejects_bad_inputs(regime_fit):
    cfg, panel, fit = regime_fit
    coarse = BlipModel(flavor="coarse",
                       basis=BlipBasis(shared_terms=(("const",),)))
    with pytest.raises(ConfigError, match="needs a regime-flavor model"):
        fit_optimal_regime(panel, coarse, cfg.tau, nuisance_for(cfg))
    with pytest.raises(ConfigError, match="one weight per period"):
        fit_optimal_regime(panel, fit.model, (1.0, 1.0), nuisance_for(cfg))
    with pytest.raises(ConfigError, match="at least one nonzero weight"):
        fit_optimal_regime(panel, fit.model, (0.0, 0.0, 0.0), nuisance_for(cfg))


def test_optimal_action_forms(regime_fit):
    _, panel, fit = regime_fit
    acts = optimal_action(fit, panel, 0)
    assert acts.shape == (panel.n_subjects,)
    assert set(np.unique(acts)) <= {0.0, 1.0}
    assert optimal_action(fit, panel, 0, i=7) == acts[7]
    assert optimal_action(fit, panel, 0, i=panel.subject_ids[7]) == acts[7]
    with pytest.raises(ConfigError, match="unknown subject id 'nope'"):
        optimal_action(fit, panel, 0, i="nope")
    # last period has no downstream utility: rule falls back to baseline
    assert np.all(optimal_action(fit, panel, 2) == 0.0)


def test_rule_invariant_to_positive_tau_scaling(regime_fit):
    _, panel, fit = regime_fit
    for m in (0, 1):
        base = optimal_action(fit, panel, m)
        scaled = optimal_action(fit, panel, m, tau=(0.0, 10.0, 10.0))
        assert np.array_equal(base, scaled)


def test_fitted_rule_recovers_the_planted_rule(regime_fit):
    cfg, panel, fit = regime_fit
    for m in (0, 1):
        assert np.array_equal(optimal_action(fit, panel, m),
                              true_optimal_actions(cfg, panel, m))


def test_value_of_fitted_rule_matches_regime_value(regime_fit):
    _, panel, fit = regime_fit
    rv = regime_value(fit, panel, B=0)
    assert rv.name == "regime_value"
    assert rv.se is None and rv.ci is None
    assert rv.n == panel.n_subjects
    assert rv.detail["tau"] == [0.0, 1.0, 1.0]
    assert "assumptions" in rv.detail and "caution" in rv.detail
    actions = {m: optimal_action(fit, panel, m) for m in range(3)}
    assert value_of_rule(fit, panel, actions) == pytest.approx(
        rv.estimate, abs=1e-12)


def test_fitted_rule_dominates_hand_rules(regime_fit):
    _, panel, fit = regime_fit
    fitted = regime_value(fit, panel, B=0).estimate
    n = panel.n_subjects
    L = panel.covariates[:, :, 0]
    hand = (
        {m: np.zeros(n) for m in range(3)},
        {m: np.ones(n) for m in range(3)},
        {m: (L[:, m] > 0.5).astype(float) for m in range(3)},
        {m: (L[:, m] < 0.5).astype(float) for m in range(3)},
    )
    for rule in hand:
        assert value_of_rule(fit, panel, rule) <= fitted + 1e-9


def test_all_negative_blips_mean_never_treat(regime_fit):
    cfg, panel, _ = regime_fit
    fit = _hand_fit(panel, (-1.0, -0.1))
    for m in (0, 1, 2):
        assert np.all(optimal_action(fit, panel, m, tau=cfg.tau) == 0.0)
    # and a dominant positive blip treats everyone at decision periods
    eager = _hand_fit(panel, (2.0, 0.0))
    for m in (0, 1):
        assert np.all(optimal_action(eager, panel, m, tau=cfg.tau) == 1.0)


def test_plain_fit_needs_explicit_tau(regime_fit):
    _, panel, _ = regime_fit
    bare = _hand_fit(panel, (0.5, 0.5))
    with pytest.raises(ConfigError, match="no utility weights: pass tau"):
        regime_value(bare, panel, B=0)
    # works once tau is supplied
    got = regime_value(bare, panel, tau=(0.0, 1.0, 1.0), B=0)
    assert np.isfinite(got.estimate)


def test_value_of_rule_requires_every_period(regime_fit):
    _, panel, fit = regime_fit
    actions = {0: np.zeros(panel.n_subjects)}
    with pytest.raises(ConfigError, match="missing actions for period index 1"):
        value_of_rule(fit, panel, actions)


def test_decision_table_structure(regime_fit):
    _, panel, fit = regime_fit
    table = decision_table(fit, panel)
    assert table["action_grid"] == [0.0, 1.0]
    assert len(table["assumptions"]) == 3
    # only periods with downstream utility appear
    assert sorted(table["periods"]) == ["0", "1"]
    for period, rows in table["periods"].items():
        sizes = [r["n_subjects"] for r in rows]
        assert sizes == sorted(sizes, reverse=True)
        assert sum(sizes) == panel.n_subjects
        for row in rows:
            assert set(row["scores"]) == {"0.0", "1.0"}
            assert row["action"] in (0.0, 1.0)
            # the chosen action attains the best score, ties to the smaller
            best = max(row["scores"].values())
            assert row["scores"][str(row["action"])] == pytest.approx(best)
            if row["scores"]["0.0"] == row["scores"]["1.0"]:
                assert row["action"] == 0.0
            # the example subject really follows the row's action
            got = optimal_action(fit, panel, int(period),
                                 i=row["example_subject"])
            assert got == row["action"]


def test_fitted_rule_fn_matches_optimal_action(regime_fit):
    _, panel, fit = regime_fit
    fn = fitted_rule_fn(fit, panel)
    for m in range(3):
        acts = fn(m, panel.covariates[:, : m + 1, 0],
                  panel.treatments[:, :m, 0])
        assert np.array_equal(acts, optimal_action(fit, panel, m))
