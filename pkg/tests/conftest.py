"""Shared fixtures: small simulated panels with their fitted models.

Everything expensive is session-scoped so the suite pays for each fit once.
The sizes are deliberately small -- the statistical acceptance checks live in
test_acceptance.py at their stated scales; these fixtures exist for exact
identities, shape contracts, and error paths.
"""

import numpy as np
import pytest

from didsnmm.gest import fit_gestimation
from didsnmm.regime import fit_optimal_regime
from didsnmm.sim import blip_model_for, gallery, nuisance_for, simulate_panel


def _fit_triplet(name, n, seed, method="closed_form"):
    cfg = gallery()[name]
    panel = simulate_panel(cfg, n, seed)
    fit = fit_gestimation(panel, blip_model_for(cfg), nuisance_for(cfg),
                          method=method)
    return cfg, panel, fit


@pytest.fixture(scope="session")
def coarse_fit():
    """(cfg, panel, fit) for the staggered coarse design, n=800."""
    return _fit_triplet("coarse_staggered", 800, 11)


@pytest.fixture(scope="session")
def standard_fit():
    """(cfg, panel, fit) for the general-pattern standard design, n=800."""
    return _fit_triplet("standard_binary", 800, 7)


@pytest.fixture(scope="session")
def null_fit():
    """(cfg, panel, fit) for the zero-effect coarse design, n=800."""
    return _fit_triplet("coarse_null", 800, 23)


@pytest.fixture(scope="session")
def regime_fit():
    """(cfg, panel, fit) for the 2-decision regime design, n=1200."""
    cfg = gallery()["regime_2period"]
    panel = simulate_panel(cfg, 1200, 5)
    fit = fit_optimal_regime(panel, blip_model_for(cfg), cfg.tau,
                             nuisance_for(cfg), seed=0)
    return cfg, panel, fit


@pytest.fixture(scope="session")
def two_treat_fit():
    """(cfg, panel, fit) for the two-component design, n=1500."""
    return _fit_triplet("two_treatment", 1500, 3)


@pytest.fixture(scope="session")
def flood_panel():
    """(cfg, panel) for the event-study flood design, n=500."""
    cfg = gallery()["flood_event"]
    return cfg, simulate_panel(cfg, 500, 13)


def make_panel(outcomes, treatments, covariates=None, time0=0):
    """Small-panel builder with boilerplate names filled in."""
    from didsnmm.panel import PanelDataset

    y = np.asarray(outcomes, dtype=float)
    a = np.asarray(treatments, dtype=float)
    if a.ndim == 2:
        a = a[:, :, None]
    n, periods = y.shape
    if covariates is None:
        z = np.zeros((n, periods, 0))
    else:
        z = np.asarray(covariates, dtype=float)
        if z.ndim == 2:
            z = z[:, :, None]
    return PanelDataset(
        outcomes=y,
        treatments=a,
        covariates=z,
        subject_ids=tuple(f"s{i:03d}" for i in range(n)),
        time_labels=tuple(range(time0, time0 + periods)),
        treatment_names=tuple(f"a{c}" for c in range(a.shape[2])),
        covariate_names=tuple(f"x{c}" for c in range(z.shape[2])),
    )
