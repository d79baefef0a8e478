"""Double-robustness grid: break each nuisance model and watch the bias.

Replicates the coarse fit under four nuisance configurations -- both models
correct, treatment model flattened to a per-period constant, trend model
flattened to per-pair intercepts, and both flattened at once.  The estimate
should stay centered unless BOTH are wrong.
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from didsnmm.gest import fit_gestimation
from didsnmm.sim import (blip_model_for, gallery, misspecify, nuisance_for,
                         planted_psi, simulate_panel)

MODES = ("correct", "treatment-wrong", "trend-wrong", "both-wrong")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="coarse_staggered")
    ap.add_argument("--reps", type=int, default=40)
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    cfg = gallery()[args.config]
    model = blip_model_for(cfg)
    base = nuisance_for(cfg)
    psi_star = planted_psi(cfg)
    specs = {m: base if m == "correct" else misspecify(base, m) for m in MODES}

    draws = {m: [] for m in MODES}
    for r in range(args.reps):
        panel = simulate_panel(cfg, args.n, seed=args.seed + r)
        for mode, nuis in specs.items():
            fit = fit_gestimation(panel, model, nuis, method="closed_form",
                                  inference=False)
            draws[mode].append(fit.psi[0])

    print(f"{args.config}: psi*_0 = {psi_star[0]:g}, n = {args.n}, "
          f"reps = {args.reps}")
    print(f"{'mode':>16}  {'mean':>8}  {'bias':>8}  {'mc_se':>7}  {'|z|':>6}")
    for mode in MODES:
        est = np.asarray(draws[mode])
        bias = est.mean() - psi_star[0]
        mc_se = est.std(ddof=1) / np.sqrt(args.reps)
        print(f"{mode:>16}  {est.mean():8.4f}  {bias:8.4f}  {mc_se:7.4f}  "
              f"{abs(bias) / mc_se:6.1f}")
    print("expected: |z| small except on the both-wrong row")
    return 0


if __name__ == "__main__":
    sys.exit(main())
