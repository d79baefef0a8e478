"""Interval-coverage study: how often do the 95% intervals cover the truth?

Replicates simulate -> fit on a gallery config and reports per-component
coverage of the sandwich (wald) intervals, plus percentile-bootstrap
intervals when --B > 0.  The defaults are sized for a quick look; scale
--reps and --B up for a publishable table (the full-budget version of this
experiment is acceptance criterion 5, `didsnmm verify --criteria 5`).
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from didsnmm.gest import bootstrap, fit_gestimation
from didsnmm.sim import (blip_model_for, gallery, nuisance_for, planted_psi,
                         simulate_panel)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="coarse_staggered")
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--n", type=int, default=800)
    ap.add_argument("--B", type=int, default=0,
                    help="bootstrap replicates per fit (0 = wald only)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args(argv)

    cfg = gallery()[args.config]
    model = blip_model_for(cfg)
    nuis = nuisance_for(cfg)
    psi_star = np.asarray(planted_psi(cfg))

    wald_hits = np.zeros(len(psi_star))
    boot_hits = np.zeros(len(psi_star))
    for r in range(args.reps):
        panel = simulate_panel(cfg, args.n, seed=args.seed + r)
        fit = fit_gestimation(panel, model, nuis, method="closed_form")
        wald_hits += (fit.ci[:, 0] <= psi_star) & (psi_star <= fit.ci[:, 1])
        if args.B:
            res = bootstrap(
                panel,
                lambda p: fit_gestimation(p, model, nuis, method="closed_form",
                                          inference=False).psi,
                B=args.B, seed=args.seed + r, threads=args.threads,
            )
            boot_hits += (res.ci[:, 0] <= psi_star) & (psi_star <= res.ci[:, 1])

    mc_se = np.sqrt(0.95 * 0.05 / args.reps)
    print(f"{args.config}: n = {args.n}, reps = {args.reps}, "
          f"nominal 0.95 (mc se {mc_se:.3f})")
    for j in range(len(psi_star)):
        line = f"  psi[{j}]  wald {wald_hits[j] / args.reps:.3f}"
        if args.B:
            line += f"  bootstrap {boot_hits[j] / args.reps:.3f}"
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
