"""Treatment and trend nuisance fits: folds, saturation, separation, trends."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from didsnmm.blip import pair_grid
from didsnmm.errors import ConfigError, EstimationError
from didsnmm.nuisance import (NuisanceSpec, TreatmentModelSpec, TrendModelSpec,
                              fit_treatment_model, fit_trend_model,
                              split_folds)

from conftest import make_panel


@given(st.integers(5, 60), st.integers(2, 5), st.integers(0, 99))
def test_split_folds_balanced_partition(n, n_folds, seed):
    folds = split_folds(n, n_folds, seed)
    assert folds.shape == (n,)
    sizes = np.bincount(folds, minlength=n_folds)
    assert sizes.sum() == n
    # round-robin dealing keeps every fold within one subject of the others
    assert sizes.max() - sizes.min() <= 1
    assert np.array_equal(folds, split_folds(n, n_folds, seed))


def test_split_folds_seed_changes_assignment():
    a = split_folds(40, 2, seed=0)
    b = split_folds(40, 2, seed=1)
    assert not np.array_equal(a, b)


def test_split_folds_guards():
    with pytest.raises(ConfigError, match="at least 2 folds"):
        split_folds(10, 1, seed=0)
    with pytest.raises(ConfigError, match="cannot split 2 subjects into 3"):
        split_folds(2, 3, seed=0)


def _staggered_panel(n, periods, seed, p_cov=1):
    r = np.random.default_rng(seed)
    start = r.integers(0, periods + 1, size=n)
    a = (np.arange(periods)[None, :] >= start[:, None]).astype(float)
    z = r.integers(0, 2, size=(n, periods, p_cov)).astype(float)
    y = r.normal(size=(n, periods))
    return make_panel(y, a, z if p_cov else None)


def test_saturated_flat_spec_gives_at_risk_frequency():
    p = _staggered_panel(40, 3, seed=1, p_cov=0)
    spec = TreatmentModelSpec(family="saturated", terms=(("const",),))
    fit = fit_treatment_model(p, spec, at_risk_only=True)
    tidx = _tidx(p)
    for m in range(3):
        at_risk = tidx >= m
        freq = p.treatments[at_risk, m, 0].mean()
        assert np.allclose(fit.fitted[at_risk, m, 0], freq)
        assert np.all(np.isnan(fit.fitted[~at_risk, m, 0]))


def _tidx(p):
    nz = p.treatments[:, :, 0] != 0.0
    return np.where(nz.any(axis=1), np.argmax(nz, axis=1), p.n_periods)


def test_saturated_cells_split_by_covariate():
    p = _staggered_panel(200, 2, seed=2)
    spec = TreatmentModelSpec(family="saturated", terms=(("z", "x0", 0),))
    fit = fit_treatment_model(p, spec, at_risk_only=True)
    tidx = _tidx(p)
    for val in (0.0, 1.0):
        cell = (tidx >= 1) & (p.covariates[:, 1, 0] == val)
        if cell.any():
            assert np.allclose(fit.fitted[cell, 1, 0],
                               p.treatments[cell, 1, 0].mean())


def test_single_subject_cell_is_degenerate_but_reported():
    # one subject owns its covariate value: its fitted propensity equals its
    # own treatment, so the centered residual it contributes is exactly zero
    y = np.zeros((3, 2))
    a = np.array([[0.0, 1.0], [0.0, 0.0], [0.0, 1.0]])
    z = np.array([[[5.0], [5.0]], [[1.0], [1.0]], [[1.0], [1.0]]])
    p = make_panel(y, a, z)
    spec = TreatmentModelSpec(family="saturated", terms=(("z", "x0", 0),))
    fit = fit_treatment_model(p, spec, at_risk_only=True)
    assert fit.fitted[0, 1, 0] == p.treatments[0, 1, 0]
    assert (p.treatments[0, 1, 0] - fit.fitted[0, 1, 0]) == 0.0


def test_full_history_saturation_when_terms_omitted():
    p = _staggered_panel(300, 3, seed=3)
    spec = TreatmentModelSpec(family="saturated", terms=None)
    fit = fit_treatment_model(p, spec, at_risk_only=True)
    tidx = _tidx(p)
    # at m=2 the at-risk cells are the joint (z_0, z_1, z_2) histories
    zh = p.covariates[:, :3, 0]
    at_risk = tidx >= 2
    for key in {tuple(row) for row in zh[at_risk]}:
        cell = at_risk & np.all(zh == np.array(key), axis=1)
        assert np.allclose(fit.fitted[cell, 2, 0],
                           p.treatments[cell, 2, 0].mean())


def test_logistic_fit_recovers_cell_frequencies():
    r = np.random.default_rng(4)
    n = 3000
    z = r.integers(0, 2, size=(n, 2, 1)).astype(float)
    prob = 1.0 / (1.0 + np.exp(-(-0.5 + 1.2 * z[:, :, 0])))
    a = (r.random((n, 2)) < prob).astype(float)
    p = make_panel(np.zeros((n, 2)), a, z)
    spec = TreatmentModelSpec(family="logistic",
                              terms=(("const",), ("z", "x0", 0)))
    fit = fit_treatment_model(p, spec, at_risk_only=False)
    # binary covariate: the 2-parameter logistic is saturated, so fitted
    # probabilities match the empirical cell frequencies
    for m in range(2):
        for val in (0.0, 1.0):
            cell = z[:, m, 0] == val
            assert fit.fitted[cell, m, 0] == pytest.approx(
                a[cell, m].mean(), abs=1e-6)
    assert np.max(np.abs(fit.fitted[:, :, 0] - prob)) < 0.05


def test_logistic_separation_raises():
    n = 60
    r = np.random.default_rng(5)
    z = np.concatenate([-np.abs(r.normal(size=(n // 2, 1))),
                        np.abs(r.normal(size=(n // 2, 1))) + 0.1])[:, None, :]
    z = np.repeat(z, 2, axis=1)
    a = (z[:, :, 0] > 0).astype(float)
    p = make_panel(np.zeros((n, 2)), a, z)
    spec = TreatmentModelSpec(family="logistic",
                              terms=(("const",), ("z", "x0", 0)))
    with pytest.raises(EstimationError,
                       match="perfect separation in treatment model at period 0"):
        fit_treatment_model(p, spec, at_risk_only=False)


def test_custom_trainer_respects_folds():
    calls = []

    def trainer(panel, m, component, train_rows):
        calls.append((m, tuple(train_rows)))
        lowest = float(np.min(train_rows))
        return lambda rows: np.full(len(rows), lowest)

    p = _staggered_panel(6, 2, seed=6, p_cov=0)
    spec = TreatmentModelSpec(family="custom", trainer=trainer)
    folds = np.array([0, 0, 0, 1, 1, 1])
    fit = fit_treatment_model(p, spec, at_risk_only=False, folds=folds)
    # each subject's prediction comes from the model trained on the other fold
    assert np.all(fit.fitted[:3, :, 0] == 3.0)
    assert np.all(fit.fitted[3:, :, 0] == 0.0)
    for _, rows in calls:
        assert set(rows) in ({0, 1, 2}, {3, 4, 5})


def test_all_initiated_periods_are_excluded():
    a = np.ones((4, 3))
    a[:, 0] = 1.0
    p = make_panel(np.zeros((4, 3)), a)
    spec = TreatmentModelSpec(family="saturated", terms=(("const",),))
    fit = fit_treatment_model(p, spec, at_risk_only=True)
    assert fit.excluded_periods == (1, 2)
    assert np.all(np.isnan(fit.fitted[:, 1:, 0]))


def test_spec_validation():
    with pytest.raises(ConfigError, match="unknown treatment model family"):
        TreatmentModelSpec(family="forest")
    with pytest.raises(ConfigError, match="requires a trainer callable"):
        TreatmentModelSpec(family="custom")
    with pytest.raises(ConfigError, match="requires explicit terms"):
        TreatmentModelSpec(family="logistic")
    with pytest.raises(ConfigError, match="unknown trend model family"):
        TrendModelSpec(family="quadratic")
    with pytest.raises(ConfigError, match="not JSON-serializable"):
        TreatmentModelSpec(family="custom",
                           trainer=lambda *a: None).to_dict()


def test_nuisance_spec_round_trip_and_pointers():
    spec = NuisanceSpec(
        treatment=TreatmentModelSpec(family="logistic",
                                     terms=(("const",), ("z", "x0", 0))),
        trend=TrendModelSpec(terms=(("const",),), per_pair=False),
        n_folds=3, fold_seed=7,
    )
    back = NuisanceSpec.from_dict(spec.to_dict())
    assert back == spec
    with pytest.raises(ConfigError, match="/treatment: unknown treatment"):
        NuisanceSpec.from_dict({"treatment": {"family": "forest"}})
    with pytest.raises(ConfigError, match="/n_folds"):
        NuisanceSpec.from_dict({"n_folds": 1})
    with pytest.raises(ConfigError, match="must be a JSON object"):
        NuisanceSpec.from_dict([1, 2])


# -- trend models -------------------------------------------------------------


def _trend_inputs(p, seed):
    pairs = pair_grid(p.n_periods)
    r = np.random.default_rng(seed)
    targets = r.normal(size=(len(pairs), p.n_subjects))
    weights = np.ones((len(pairs), p.n_subjects))
    return pairs, targets, weights


def test_trend_constant_basis_is_weighted_mean():
    p = _staggered_panel(30, 3, seed=8)
    pairs, targets, weights = _trend_inputs(p, 9)
    weights = (np.random.default_rng(10).random(weights.shape) < 0.7).astype(float)
    weights[:, 0] = 1.0  # keep every pair estimable
    spec = TrendModelSpec(terms=(("const",),), per_pair=True)
    pred, tables = fit_trend_model(p, spec, targets, weights)
    for pi, (m, k) in enumerate(pairs):
        w = weights[pi]
        expect = (w * targets[pi]).sum() / w.sum()
        assert np.allclose(pred[pi], expect)
        assert tables[f"pair_{m}_{k}"]["coef"][0] == pytest.approx(expect)


def test_trend_linear_family_is_exact_on_linear_truth():
    p = _staggered_panel(25, 3, seed=11)
    pairs, _, weights = _trend_inputs(p, 12)
    targets = np.stack([2.0 + 3.0 * p.covariates[:, m, 0] for m, _ in pairs])
    spec = TrendModelSpec(terms=(("const",), ("z", "x0", 0)), per_pair=True)
    pred, _ = fit_trend_model(p, spec, targets, weights)
    assert np.allclose(pred, targets, atol=1e-10)


def test_trend_pooled_shares_one_coefficient_block():
    p = _staggered_panel(25, 3, seed=13)
    pairs, targets, weights = _trend_inputs(p, 14)
    spec = TrendModelSpec(terms=(("const",),), per_pair=False)
    pred, tables = fit_trend_model(p, spec, targets, weights)
    grand = targets.mean()
    assert np.allclose(pred, grand)
    assert list(tables) == ["pooled"]


def test_trend_cells_family_gives_cell_means():
    p = _staggered_panel(60, 3, seed=15)
    pairs, targets, weights = _trend_inputs(p, 16)
    spec = TrendModelSpec(terms=(("z", "x0", 0),), family="cells")
    pred, _ = fit_trend_model(p, spec, targets, weights)
    for pi, (m, k) in enumerate(pairs):
        for val in (0.0, 1.0):
            cell = p.covariates[:, m, 0] == val
            if cell.any():
                assert np.allclose(pred[pi][cell], targets[pi][cell].mean())


def test_trend_rank_deficiency_names_pair_and_remedy():
    p = _staggered_panel(20, 3, seed=17)
    pairs, targets, weights = _trend_inputs(p, 18)
    spec = TrendModelSpec(terms=(("z", "x0", 0), ("z", "x0", 0)),
                          per_pair=True)
    with pytest.raises(EstimationError,
                       match=r"rank-deficient at pair \(0, 1\).*ridge"):
        fit_trend_model(p, spec, targets, weights)
    # an explicit ridge turns the same design estimable
    pred, _ = fit_trend_model(p, spec, targets, weights, ridge=1e-6)
    assert np.all(np.isfinite(pred))


def test_trend_shape_guard():
    p = _staggered_panel(10, 3, seed=19)
    spec = TrendModelSpec(terms=(("const",),))
    with pytest.raises(ConfigError, match="targets must have shape"):
        fit_trend_model(p, spec, np.zeros((2, 10)), np.ones((2, 10)))
