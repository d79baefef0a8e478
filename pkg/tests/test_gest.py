"""Estimating-equation solvers, inference byproducts, and the bootstrap."""

import numpy as np
import pytest
from scipy.stats import norm

from didsnmm.errors import ConfigError, DataError, EstimationError
from didsnmm.gest import (SolverConfig, bootstrap, evaluate_U, fit_gestimation,
                          moment_pairs, percentile_ci, solve_iterative)
from didsnmm.sim import (DgpConfig, blip_model_for, gallery, nuisance_for,
                         simulate_panel)

from conftest import make_panel


def test_moment_vanishes_at_the_fit(coarse_fit):
    cfg, panel, fit = coarse_fit
    U = evaluate_U(panel, fit.model, fit.psi, fit.nuisance)
    assert U.shape == (panel.n_subjects, len(fit.psi))
    assert np.max(np.abs(U.mean(axis=0))) <= fit.tolerance
    # and visibly fails to vanish away from the root
    off = evaluate_U(panel, fit.model, fit.psi + 1.0, fit.nuisance)
    assert np.max(np.abs(off.mean(axis=0))) > 100 * fit.tolerance


def test_residual_within_tolerance_every_method(coarse_fit):
    cfg, panel, _ = coarse_fit
    model, nuis = blip_model_for(cfg), nuisance_for(cfg)
    for method in ("closed_form", "iterative", "crossfit"):
        fit = fit_gestimation(panel, model, nuis, method=method,
                              inference=False)
        assert fit.method == method
        assert fit.residual_norm <= fit.tolerance


def _random_coarse_cfg(rng):
    P = int(rng.integers(3, 5))
    return DgpConfig(
        name="rand", kind="coarse", n_periods=P,
        psi=tuple(np.round(rng.normal(scale=0.8, size=3), 3)),
        hazard_intercepts=tuple(np.round(rng.uniform(-1.4, -0.6, size=P), 3)),
        hazard_cov=float(np.round(rng.uniform(0.2, 0.9), 3)),
        conf_hazard=float(np.round(rng.uniform(0.0, 0.6), 3)),
        conf_level=float(np.round(rng.uniform(0.0, 1.2), 3)),
        base_levels=tuple(np.round(rng.normal(size=P), 3)),
        level_cov=1.0, noise_sd=1.0,
    )


def test_closed_form_matches_iterative_root():
    rng = np.random.default_rng(77)
    for trial in range(5):
        cfg = _random_coarse_cfg(rng)
        panel = simulate_panel(cfg, 400, int(rng.integers(10_000)))
        model, nuis = blip_model_for(cfg), nuisance_for(cfg)
        a = fit_gestimation(panel, model, nuis, "closed_form",
                            inference=False)
        b = fit_gestimation(panel, model, nuis, "iterative", seed=trial,
                            inference=False)
        assert np.max(np.abs(a.psi - b.psi)) <= 1e-8


def test_multistart_agrees_with_closed_form(standard_fit):
    cfg, panel, fit = standard_fit
    solver = SolverConfig(n_starts=4, start_spread=2.0)
    multi = solve_iterative(panel, fit.model, fit.nuisance, solver=solver,
                            seed=3, inference=False)
    assert np.max(np.abs(multi.psi - fit.psi)) <= 1e-6
    assert multi.diagnostics["iterations"] > 0


def test_crossfit_is_deterministic_and_averages_folds(coarse_fit):
    cfg, panel, _ = coarse_fit
    model, nuis = blip_model_for(cfg), nuisance_for(cfg)
    a = fit_gestimation(panel, model, nuis, "crossfit", inference=False)
    b = fit_gestimation(panel, model, nuis, "crossfit", inference=False)
    assert np.array_equal(a.psi, b.psi)
    assert len(a.fold_psis) == nuis.n_folds
    assert np.allclose(a.psi, np.mean(a.fold_psis, axis=0))
    assert a.diagnostics["fold_sizes"] == [400, 400]
    # a different fold seed changes the split, hence (slightly) the estimate
    c = fit_gestimation(panel, model, nuis, "crossfit", seed=99,
                        inference=False)
    assert not np.array_equal(a.psi, c.psi)


def test_singular_design_raises_with_remedy():
    from didsnmm.panel import PanelDataset

    cfg = gallery()["coarse_staggered"]
    base = simulate_panel(cfg, 50, 0)
    # no treatment variation anywhere -> the moment system has no information
    panel = PanelDataset(base.outcomes, np.zeros_like(base.treatments),
                         base.covariates, base.subject_ids, base.time_labels,
                         base.treatment_names, base.covariate_names)
    with pytest.raises(EstimationError, match="singular.*ridge"):
        fit_gestimation(panel, blip_model_for(cfg), nuisance_for(cfg),
                        "closed_form")


def test_sandwich_inference_shape_and_convention(coarse_fit):
    _, panel, fit = coarse_fit
    d = len(fit.psi)
    assert fit.vcov.shape == (d, d)
    assert np.allclose(fit.vcov, fit.vcov.T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(fit.vcov) > -1e-12)
    assert np.allclose(fit.se, np.sqrt(np.diag(fit.vcov)))
    z = norm.ppf(0.975)
    assert np.allclose(fit.ci[:, 0], fit.psi - z * fit.se)
    assert np.allclose(fit.ci[:, 1], fit.psi + z * fit.se)
    payload = fit.to_json_dict()
    assert payload["psi_hat"] == list(fit.psi)
    assert "residual_norm" in payload["diagnostics"]


def test_ridge_is_recorded_and_gentle(coarse_fit):
    cfg, panel, fit = coarse_fit
    ridged = fit_gestimation(panel, fit.model, fit.nuisance, "closed_form",
                             ridge=1e-6)
    assert ridged.diagnostics["ridge"] == 1e-6
    assert np.max(np.abs(ridged.psi - fit.psi)) < 1e-3


def test_method_dispatch_guards(coarse_fit):
    _, panel, fit = coarse_fit
    with pytest.raises(ConfigError, match="unknown estimation method"):
        fit_gestimation(panel, fit.model, fit.nuisance, "mcmc")
    with pytest.raises(ConfigError, match="utility weights need the iterative"):
        fit_gestimation(panel, fit.model, fit.nuisance, "closed_form",
                        tau=(0.0, 1.0, 1.0, 1.0))


def test_moment_pairs_follow_treatment_support(coarse_fit):
    _, panel, fit = coarse_fit
    kept, dropped = moment_pairs(panel, fit.treatment_fit)
    assert set(kept).isdisjoint(dropped)
    from didsnmm.blip import pair_grid

    assert sorted(kept + dropped) == pair_grid(panel.n_periods)
    assert kept  # this design keeps at least the early anchors


# -- bootstrap ----------------------------------------------------------------


def _tiny_panel(n=40, seed=1):
    r = np.random.default_rng(seed)
    return make_panel(r.normal(size=(n, 2)),
                      (r.random((n, 2)) < 0.4).astype(float))


def test_bootstrap_needs_at_least_100():
    with pytest.raises(ConfigError, match="bootstrap needs B >= 100; got 60"):
        bootstrap(_tiny_panel(), lambda p: np.array([0.0]), B=60)


def test_bootstrap_constant_statistic_zero_width():
    res = bootstrap(_tiny_panel(), lambda p: np.array([1.5]), B=100, seed=4)
    assert res.n_ok == 100 and res.n_failed == 0
    assert res.ci.tolist() == [[1.5, 1.5]]
    assert np.all(res.estimates == 1.5)


def test_bootstrap_threads_do_not_change_bytes():
    stat = lambda p: np.array([p.outcomes.mean(), p.outcomes.std()])
    a = bootstrap(_tiny_panel(), stat, B=100, seed=9, threads=1)
    b = bootstrap(_tiny_panel(), stat, B=100, seed=9, threads=3)
    assert np.array_equal(a.estimates, b.estimates)
    assert np.array_equal(a.ci, b.ci)


def test_bootstrap_tolerates_failures_within_budget():
    calls = {"n": 0}

    def flaky(p):
        calls["n"] += 1
        if calls["n"] <= 4:
            raise DataError("synthetic failure")
        return np.array([p.outcomes.mean()])

    res = bootstrap(_tiny_panel(), flaky, B=100, seed=2)
    assert res.n_failed == 4
    assert res.n_ok == 96


def test_bootstrap_failure_budget_exceeded():
    def broken(p):
        raise DataError("synthetic failure")

    with pytest.raises(EstimationError,
                       match=r"100/100 replicates failed.*synthetic failure"):
        bootstrap(_tiny_panel(), broken, B=100, seed=3)


def test_percentile_ranks_from_requested_B():
    est = np.arange(1.0, 101.0)[:, None]
    # floor(.025*100)=2 and ceil(.975*100)=98, 1-based order statistics
    assert percentile_ci(est, 100).tolist() == [[2.0, 98.0]]
    # when draws failed, ranks still come from the requested B (clamped)
    assert percentile_ci(est[:50], 100).tolist() == [[2.0, 50.0]]
    est2 = np.arange(1.0, 201.0)[:, None]
    assert percentile_ci(est2, 200).tolist() == [[5.0, 195.0]]
