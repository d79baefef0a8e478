"""Batch command-line front end.

Subcommands: simulate | fit | derive | sensitivity | optimal | verify.
Every run writes its outputs plus a manifest (resolved config, seeds,
versions, output hashes, no timestamps) into --out; re-running the same
command reproduces every file bit for bit.  The manifest's config echo omits
execution-environment knobs (thread count, output directory) because results
never depend on them — serial and parallel runs emit identical bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np
import scipy

from . import __version__, acceptance
from ._util import canonical_json, jsonable
from .blip import BlipModel
from .derived import (Predicate, blip_query, coarse_cde, conditional_mean,
                      effect_curve, lag_average_effect, lag_curve,
                      mean_never_treated, observed_vs_never, write_plot_csv)
from .errors import ConfigError, DidsnmmError
from .gest import bootstrap, fit_gestimation
from .nuisance import NuisanceSpec
from .panel import load_panel_csv, write_panel_csv
from .regime import decision_table, fit_optimal_regime, regime_value
from .sensitivity import breakdown_value, sensitivity_grid
from .sim import DgpConfig, oracle_truth, simulate_panel


# -- plumbing ----------------------------------------------------------------------


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:/ invalid JSON for {what}: {exc}") from None


def _pointerize(path, exc):
    """Prefix a spec error's JSON-pointer message with its file."""
    msg = str(exc)
    sep = "" if msg.startswith("/") else " "
    return ConfigError(f"{path}:{sep}{msg}")


def _load_model(path) -> BlipModel:
    try:
        return BlipModel.from_dict(_load_json(path, "blip model"))
    except ConfigError as exc:
        raise _pointerize(path, exc) from None


def _load_nuisance(path) -> NuisanceSpec:
    try:
        return NuisanceSpec.from_dict(_load_json(path, "nuisance spec"))
    except ConfigError as exc:
        raise _pointerize(path, exc) from None


def _load_panel(path):
    return load_panel_csv(path)


class _OutDir:
    """Collects written files and finishes with a manifest."""

    def __init__(self, command, args_echo, out):
        if not out:
            raise ConfigError("--out is required")
        os.makedirs(out, exist_ok=True)
        self.dir = out
        self.command = command
        self.echo = args_echo
        self.files = []

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.dir, name)

    def write_json(self, name, obj):
        with open(self.path(name), "w") as fh:
            fh.write(canonical_json(jsonable(obj)))
            fh.write("\n")

    def finish(self):
        hashes = {}
        for name in sorted(self.files):
            with open(os.path.join(self.dir, name), "rb") as fh:
                hashes[name] = hashlib.sha256(fh.read()).hexdigest()
        manifest = {
            "command": self.command,
            "config": self.echo,
            "versions": {
                "didsnmm": __version__,
                "python": ".".join(map(str, sys.version_info[:3])),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "outputs": hashes,
        }
        with open(os.path.join(self.dir, "manifest.json"), "w") as fh:
            fh.write(canonical_json(jsonable(manifest)))
            fh.write("\n")
        return manifest


def _echo(args, keys):
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _floats(text, flag):
    try:
        return [float(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers; got {text!r}") from None


def _maybe_bootstrap_psi(fit, panel, args):
    if not args.bootstrap:
        return None
    res = bootstrap(
        panel,
        lambda p: fit_gestimation(
            p, fit.model, fit.nuisance, method=fit.method,
            **({"inference": False} if fit.method == "closed_form" else {"seed": args.seed}),
        ).psi,
        B=args.bootstrap, seed=args.seed, threads=args.threads,
    )
    return {"B": res.n_requested, "n_failed": res.n_failed,
            "ci": np.asarray(res.ci).tolist(),
            "se": np.asarray(res.estimates).std(axis=0, ddof=1).tolist()}


# -- subcommands -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    try:
        cfg = DgpConfig.from_dict(_load_json(args.config, "dgp config"))
    except ConfigError as exc:
        raise _pointerize(args.config, exc) from None
    arm = None
    if args.arm:
        if args.arm == "never":
            arm = "never"
        elif args.arm.startswith("initiate:"):
            fields = args.arm.split(":")[1].split(",")
            arm = ("initiate", int(fields[0]), *map(int, fields[1:]))
        else:
            raise ConfigError(
                f"--arm must be 'never' or 'initiate:<period>[,component]'; got {args.arm!r}"
            )
    out = _OutDir("simulate", _echo(args, ("config", "n", "seed", "arm", "oracle_mc")),
                  args.out)
    panel = simulate_panel(cfg, args.n, args.seed, arm=arm)
    write_panel_csv(panel, out.path("panel.csv"))
    out.write_json("dgp.json", cfg.to_dict())
    if args.oracle_mc:
        out.write_json("oracle.json",
                       oracle_truth(cfg, n_mc=args.oracle_mc, seed=args.seed).to_json_dict())
    out.finish()
    print(f"simulated {panel.n_subjects} subjects x {panel.n_periods} periods -> {out.dir}")
    return 0


def _fit_from_args(args, panel, model, nuisance):
    kw = {"ridge": args.ridge}
    if args.method != "closed_form":
        kw["seed"] = args.seed
    return fit_gestimation(panel, model, nuisance, method=args.method, **kw)


def cmd_fit(args) -> int:
    panel = _load_panel(args.data)
    model = _load_model(args.model)
    nuisance = _load_nuisance(args.nuisance)
    out = _OutDir("fit", _echo(args, ("data", "model", "nuisance", "method",
                                      "bootstrap", "seed", "ridge")),
                  args.out)
    fit = _fit_from_args(args, panel, model, nuisance)
    payload = fit.to_json_dict()
    boot = _maybe_bootstrap_psi(fit, panel, args)
    if boot:
        payload["bootstrap"] = boot
    out.write_json("fit.json", payload)

    curve_b = args.bootstrap or 0
    curve = effect_curve(fit, panel, B=curve_b, seed=args.seed, threads=args.threads)
    with open(out.path("effect_curve.csv"), "w", newline="") as fh:
        write_plot_csv(curve, fh, x_key="k")
    if model.flavor == "coarse":
        lcurve = lag_curve(fit, panel, B=curve_b, seed=args.seed, threads=args.threads)
        if lcurve:
            with open(out.path("lag_curve.csv"), "w", newline="") as fh:
                write_plot_csv(lcurve, fh, x_key="lag")
    out.finish()
    print(f"psi_hat = {np.round(fit.psi, 6).tolist()} -> {out.dir}")
    return 0


_DERIVE_OPS = ("mean_never", "conditional_mean", "observed_vs_never",
               "lag_average", "blip_query", "cde", "effect_curve", "lag_curve")


def _run_query(idx, q, fit, panel, args, out):
    try:
        op = q["op"]
    except (TypeError, KeyError):
        raise ConfigError(f"{args.queries}:/{idx}/op is required") from None
    if op not in _DERIVE_OPS:
        raise ConfigError(
            f"{args.queries}:/{idx}/op unknown op {op!r}; expected one of {_DERIVE_OPS}"
        )
    common = dict(B=args.bootstrap or 0, seed=args.seed, threads=args.threads)

    def need(key):
        if key not in q:
            raise ConfigError(f"{args.queries}:/{idx}/{key} is required for {op}")
        return q[key]

    if op == "mean_never":
        return mean_never_treated(fit, panel, need("k"), **common)
    if op == "observed_vs_never":
        return observed_vs_never(fit, panel, need("k"), **common)
    if op == "conditional_mean":
        preds = tuple(Predicate.from_dict(p) for p in q.get("predicates", ()))
        return conditional_mean(fit, panel, need("m"), need("k"),
                                predicates=preds, **common)
    if op == "lag_average":
        return lag_average_effect(fit, panel, int(need("lag")), **common)
    if op == "blip_query":
        kw = {key: q[key] for key in
              ("actions", "subject", "covariates", "outcomes", "treatments",
               "ci_method") if key in q}
        return blip_query(fit, panel, need("m"), need("k"), **kw, B=common["B"],
                          seed=common["seed"], threads=common["threads"])
    if op == "cde":
        kw = {key: q[key] for key in
              ("a_m", "a_component", "r_component", "force_zero_r") if key in q}
        return coarse_cde(fit, panel, need("m"), need("k"), **kw, **common)
    if op == "effect_curve":
        curve = effect_curve(fit, panel, **common)
        with open(out.path(f"effect_curve_{idx}.csv"), "w", newline="") as fh:
            write_plot_csv(curve, fh, x_key="k")
        return curve
    curve = lag_curve(fit, panel, **common)
    with open(out.path(f"lag_curve_{idx}.csv"), "w", newline="") as fh:
        write_plot_csv(curve, fh, x_key="lag")
    return curve


def cmd_derive(args) -> int:
    panel = _load_panel(args.data)
    model = _load_model(args.model)
    nuisance = _load_nuisance(args.nuisance)
    queries = _load_json(args.queries, "derive queries")
    if not isinstance(queries, list) or not queries:
        raise ConfigError(f"{args.queries}:/ must be a non-empty list of queries")
    out = _OutDir("derive", _echo(args, ("data", "model", "nuisance", "method",
                                         "queries", "bootstrap", "seed",
                                         "ridge")),
                  args.out)
    fit = _fit_from_args(args, panel, model, nuisance)
    results = []
    for idx, q in enumerate(queries):
        res = _run_query(idx, q, fit, panel, args, out)
        if isinstance(res, list):
            results.append({"query": q, "results": [r.to_json_dict() for r in res]})
        else:
            results.append({"query": q, "result": res.to_json_dict()})
    out.write_json("derived.json", {"psi_hat": list(fit.psi), "queries": results})
    out.finish()
    print(f"{len(results)} derived quantities -> {out.dir}")
    return 0


def cmd_sensitivity(args) -> int:
    panel = _load_panel(args.data)
    model = _load_model(args.model)
    nuisance = _load_nuisance(args.nuisance)
    if args.grid_file:
        grid = _load_json(args.grid_file, "sensitivity grid")
    elif args.grid:
        grid = _floats(args.grid, "--grid")
    else:
        raise ConfigError("sensitivity needs --grid or --grid-file")
    targets = (_load_json(args.targets, "sensitivity targets") if args.targets
               else [{"kind": "psi", "component": 0}])
    out = _OutDir("sensitivity",
                  _echo(args, ("data", "model", "nuisance", "method", "family",
                               "grid", "grid_file", "targets", "breakdown", "hull",
                               "bootstrap", "seed", "ridge")),
                  args.out)
    curve = sensitivity_grid(panel, model, nuisance, args.family, grid,
                             targets=targets, method=args.method, ridge=args.ridge,
                             B=args.bootstrap or 0, seed=args.seed,
                             threads=args.threads)
    out.write_json("curve.json", curve.to_json_dict())
    with open(out.path("curve.csv"), "w", newline="") as fh:
        curve.write_plot_csv(fh)
    if args.breakdown:
        hull = _floats(args.hull, "--hull")
        if len(hull) != 2:
            raise ConfigError(f"--hull expects 'lo,hi'; got {args.hull!r}")
        report = breakdown_value(panel, model, nuisance, family=args.family,
                                 target=targets[0], hull=tuple(hull),
                                 method=args.method, ridge=args.ridge,
                                 B=args.bootstrap or 0, seed=args.seed)
        out.write_json("breakdown.json", report)
    out.finish()
    print(f"{len(curve.points)} grid points ({curve.n_failed} failed) -> {out.dir}")
    return 0


def cmd_optimal(args) -> int:
    panel = _load_panel(args.data)
    model = _load_model(args.model)
    nuisance = _load_nuisance(args.nuisance)
    if not args.tau:
        raise ConfigError("optimal needs --tau (comma-separated utility weights)")
    tau = _floats(args.tau, "--tau")
    out = _OutDir("optimal", _echo(args, ("data", "model", "nuisance", "tau",
                                          "bootstrap", "seed", "ridge")),
                  args.out)
    fit = fit_optimal_regime(panel, model, tau, nuisance, seed=args.seed,
                             ridge=args.ridge)
    out.write_json("fit.json", fit.to_json_dict())
    out.write_json("decision_table.json", decision_table(fit, panel))
    value = regime_value(fit, panel, B=args.bootstrap or 0, seed=args.seed,
                         threads=args.threads)
    out.write_json("value.json", value.to_json_dict())
    out.finish()
    print(f"regime value = {value.estimate:.6g} -> {out.dir}")
    return 0


def cmd_verify(args) -> int:
    numbers = None
    if args.criteria:
        try:
            numbers = [int(v) for v in args.criteria.split(",")]
        except ValueError:
            raise ConfigError(
                f"--criteria expects comma-separated numbers; got {args.criteria!r}"
            ) from None
    lines = []

    def report(line):
        lines.append(line)
        print(line)

    try:
        results = acceptance.run_criteria(numbers, threads=args.threads,
                                          report=report)
    finally:
        if args.out:
            out = _OutDir("verify", _echo(args, ("criteria",)), args.out)
            out.write_json("verify.json", {"lines": lines})
            out.finish()
    print(f"{sum(r.status == 'pass' for r in results)} passed, "
          f"{sum(r.status == 'skip' for r in results)} skipped")
    return 0


# -- argument parsing ---------------------------------------------------------------


def _add_common(sp, *, data=True):
    if data:
        sp.add_argument("--data", required=True, help="panel CSV path")
        sp.add_argument("--model", required=True, help="blip model JSON path")
        sp.add_argument("--nuisance", required=True, help="nuisance spec JSON path")
        sp.add_argument("--method", default="closed_form",
                        choices=("closed_form", "iterative", "crossfit"))
        sp.add_argument("--ridge", type=float, default=0.0)
        sp.add_argument("--bootstrap", type=int, default=0, metavar="B")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="didsnmm",
        description="g-estimation for panel data under conditional parallel trends",
    )
    p.add_argument("--version", action="version", version=f"didsnmm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="draw a panel from a DGP config")
    sp.add_argument("--config", required=True, help="DGP config JSON path")
    sp.add_argument("--n", type=int, required=True, help="number of subjects")
    sp.add_argument("--arm", default=None,
                    help="counterfactual arm: never | initiate:<period>[,component]")
    sp.add_argument("--oracle-mc", dest="oracle_mc", type=int, default=0,
                    help="also write oracle.json from this many Monte Carlo draws")
    _add_common(sp, data=False)
    sp.set_defaults(run=cmd_simulate)

    sp = sub.add_parser("fit", help="g-estimate a blip model")
    _add_common(sp)
    sp.set_defaults(run=cmd_fit)

    sp = sub.add_parser("derive", help="counterfactual summaries of a fit")
    _add_common(sp)
    sp.add_argument("--queries", required=True, help="JSON list of derived queries")
    sp.set_defaults(run=cmd_derive)

    sp = sub.add_parser("sensitivity", help="bias-function sensitivity curve")
    _add_common(sp)
    sp.add_argument("--family", default="constant",
                    choices=("constant", "horizon", "covariate"))
    sp.add_argument("--grid", default=None,
                    help="comma-separated bias parameters (must include 0)")
    sp.add_argument("--grid-file", dest="grid_file", default=None,
                    help="JSON list of grid points (floats or {c0, c1} objects)")
    sp.add_argument("--targets", default=None, help="JSON list of target specs")
    sp.add_argument("--breakdown", action="store_true",
                    help="also bisect for the smallest |c0| unseating the first target")
    sp.add_argument("--hull", default="-2,2", help="breakdown search range 'lo,hi'")
    sp.set_defaults(run=cmd_sensitivity)

    sp = sub.add_parser("optimal", help="fit an optimal regime under utility weights")
    _add_common(sp)
    sp.add_argument("--tau", required=True,
                    help="comma-separated per-period utility weights")
    sp.set_defaults(run=cmd_optimal)

    sp = sub.add_parser("verify", help="run the acceptance checks")
    sp.add_argument("--criteria", default=None,
                    help="comma-separated criterion numbers (default: all)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.add_argument("--out", default=None, help="optional report directory")
    sp.set_defaults(run=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.run(args)
    except DidsnmmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
