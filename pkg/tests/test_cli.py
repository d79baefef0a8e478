"""End-to-end command-line runs, in process, against temp directories."""

import json
from types import SimpleNamespace

import numpy as np
import pytest

from didsnmm import acceptance
from didsnmm.acceptance import CriterionResult
from didsnmm.cli import main
from didsnmm.gest import fit_gestimation
from didsnmm.panel import PanelDataset, load_panel_csv, write_panel_csv
from didsnmm.sim import blip_model_for, gallery, nuisance_for


def _dump(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = gallery()["coarse_staggered"]
    env = SimpleNamespace(
        root=root,
        cfg=cfg,
        config=_dump(root / "dgp.json", cfg.to_dict()),
        model=_dump(root / "model.json", blip_model_for(cfg).to_dict()),
        nuisance=_dump(root / "nuisance.json", nuisance_for(cfg).to_dict()),
    )
    assert main(["simulate", "--config", env.config, "--n", "300",
                 "--seed", "4", "--out", str(root / "sim")]) == 0
    env.data = str(root / "sim" / "panel.csv")
    return env


def test_simulate_outputs_and_manifest(cli_env):
    sim = cli_env.root / "sim"
    for name in ("panel.csv", "dgp.json", "manifest.json"):
        assert (sim / name).exists()
    manifest = json.loads((sim / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    # resolved config is echoed; environment knobs are not
    assert manifest["config"]["n"] == 300 and manifest["config"]["seed"] == 4
    assert "out" not in manifest["config"] and "threads" not in manifest["config"]
    assert set(manifest["outputs"]) == {"panel.csv", "dgp.json"}
    assert set(manifest["versions"]) == {"didsnmm", "python", "numpy", "scipy"}
    # the dumped dgp config round-trips to the source config
    from didsnmm.sim import DgpConfig
    assert DgpConfig.from_dict(json.loads((sim / "dgp.json").read_text())) \
        == cli_env.cfg


def test_fit_matches_the_library_call(cli_env, tmp_path, capsys):
    out = tmp_path / "fit"
    assert main(["fit", "--data", cli_env.data, "--model", cli_env.model,
                 "--nuisance", cli_env.nuisance, "--out", str(out)]) == 0
    assert "psi_hat = " in capsys.readouterr().out
    blob = json.loads((out / "fit.json").read_text())
    panel = load_panel_csv(cli_env.data)
    direct = fit_gestimation(panel, blip_model_for(cli_env.cfg),
                             nuisance_for(cli_env.cfg), method="closed_form")
    assert blob["psi_hat"] == [float(v) for v in direct.psi]
    assert (out / "effect_curve.csv").exists()
    assert (out / "lag_curve.csv").exists()  # coarse fits get the lag view
    curve_lines = (out / "effect_curve.csv").read_text().splitlines()
    assert curve_lines[0] == "k,estimate,lo,hi"
    assert len(curve_lines) == panel.n_periods  # header + P-1 horizons


def test_reruns_and_thread_counts_are_bitwise(cli_env, tmp_path):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d, threads in zip(dirs, ("1", "3")):
        assert main(["fit", "--data", cli_env.data, "--model", cli_env.model,
                     "--nuisance", cli_env.nuisance, "--threads", threads,
                     "--out", str(d)]) == 0
    for name in ("fit.json", "effect_curve.csv", "lag_curve.csv",
                 "manifest.json"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_config_errors_exit_2(cli_env, tmp_path, capsys):
    missing = str(tmp_path / "nope.json")
    rc = main(["fit", "--data", cli_env.data, "--model", missing,
               "--nuisance", cli_env.nuisance, "--out", str(tmp_path / "o1")])
    assert rc == 2
    assert "blip model file not found" in capsys.readouterr().err

    broken = tmp_path / "broken.json"
    broken.write_text("{nope")
    rc = main(["fit", "--data", cli_env.data, "--model", str(broken),
               "--nuisance", cli_env.nuisance, "--out", str(tmp_path / "o2")])
    assert rc == 2
    assert "invalid JSON" in capsys.readouterr().err

    rc = main(["simulate", "--config", cli_env.config, "--n", "10",
               "--out", ""])
    assert rc == 2
    assert "--out is required" in capsys.readouterr().err


def test_data_errors_exit_3(cli_env, tmp_path, capsys):
    ragged = tmp_path / "bad.csv"
    ragged.write_text("subject,period,y,a\ns0,0,1.0\n")
    rc = main(["fit", "--data", str(ragged), "--model", cli_env.model,
               "--nuisance", cli_env.nuisance, "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "error:" in capsys.readouterr().err


def test_estimation_errors_exit_4(cli_env, tmp_path, capsys):
    base = load_panel_csv(cli_env.data)
    inert = PanelDataset(base.outcomes, np.zeros_like(base.treatments),
                         base.covariates, base.subject_ids, base.time_labels,
                         base.treatment_names, base.covariate_names)
    path = tmp_path / "inert.csv"
    write_panel_csv(inert, str(path))
    rc = main(["fit", "--data", str(path), "--model", cli_env.model,
               "--nuisance", cli_env.nuisance, "--out", str(tmp_path / "o")])
    assert rc == 4
    assert "error:" in capsys.readouterr().err


def test_derive_runs_queries(cli_env, tmp_path):
    queries = _dump(tmp_path / "q.json", [
        {"op": "mean_never", "k": 3},
        {"op": "lag_average", "lag": 1},
        {"op": "effect_curve"},
    ])
    out = tmp_path / "derive"
    assert main(["derive", "--data", cli_env.data, "--model", cli_env.model,
                 "--nuisance", cli_env.nuisance, "--queries", queries,
                 "--out", str(out)]) == 0
    blob = json.loads((out / "derived.json").read_text())
    assert len(blob["psi_hat"]) == 3
    assert len(blob["queries"]) == 3
    assert blob["queries"][0]["result"]["name"] == "mean_never_treated"
    assert len(blob["queries"][2]["results"]) == 3  # one row per horizon
    assert (out / "effect_curve_2.csv").exists()


def test_derive_query_validation(cli_env, tmp_path, capsys):
    def run(payload):
        q = _dump(tmp_path / "q.json", payload)
        return main(["derive", "--data", cli_env.data, "--model",
                     cli_env.model, "--nuisance", cli_env.nuisance,
                     "--queries", q, "--out", str(tmp_path / "o")])

    assert run({}) == 2
    assert "must be a non-empty list" in capsys.readouterr().err
    assert run([{"k": 3}]) == 2
    assert "/0/op is required" in capsys.readouterr().err
    assert run([{"op": "median"}]) == 2
    assert "/0/op unknown op 'median'" in capsys.readouterr().err
    assert run([{"op": "mean_never"}]) == 2
    assert "/0/k is required for mean_never" in capsys.readouterr().err


def test_simulate_arms(cli_env, tmp_path, capsys):
    never = tmp_path / "never"
    assert main(["simulate", "--config", cli_env.config, "--n", "50",
                 "--seed", "4", "--arm", "never", "--out", str(never)]) == 0
    p = load_panel_csv(str(never / "panel.csv"))
    assert not p.treatments.any()

    forced = tmp_path / "forced"
    assert main(["simulate", "--config", cli_env.config, "--n", "50",
                 "--seed", "4", "--arm", "initiate:1",
                 "--out", str(forced)]) == 0
    q = load_panel_csv(str(forced / "panel.csv"))
    assert not q.treatments[:, 0, 0].any()
    assert np.all(q.treatments[:, 1:, 0] == 1.0)

    capsys.readouterr()
    rc = main(["simulate", "--config", cli_env.config, "--n", "50",
               "--arm", "pattern:1", "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "--arm must be 'never' or 'initiate:" in capsys.readouterr().err


def test_simulate_oracle_report(cli_env, tmp_path):
    out = tmp_path / "oracle"
    assert main(["simulate", "--config", cli_env.config, "--n", "50",
                 "--seed", "4", "--oracle-mc", "2000",
                 "--out", str(out)]) == 0
    blob = json.loads((out / "oracle.json").read_text())
    assert blob["n_mc"] == 2000
    assert blob["psi_star"] == list(cli_env.cfg.psi)


def test_sensitivity_command(cli_env, tmp_path, capsys):
    out = tmp_path / "sens"
    rc = main(["sensitivity", "--data", cli_env.data, "--model", cli_env.model,
               "--nuisance", cli_env.nuisance, "--grid=-0.3,0,0.3",
               "--breakdown", "--hull=-1,1", "--out", str(out)])
    assert rc == 0
    curve = json.loads((out / "curve.json").read_text())
    assert curve["n_points"] == 3 and curve["n_failed"] == 0
    assert (out / "curve.csv").read_text().startswith("target,param,")
    report = json.loads((out / "breakdown.json").read_text())
    assert report["hull"] == [-1.0, 1.0]
    assert "breakdown" in report and "unadjusted" in report

    capsys.readouterr()
    rc = main(["sensitivity", "--data", cli_env.data, "--model", cli_env.model,
               "--nuisance", cli_env.nuisance, "--out", str(tmp_path / "o1")])
    assert rc == 2
    assert "needs --grid or --grid-file" in capsys.readouterr().err
    rc = main(["sensitivity", "--data", cli_env.data, "--model", cli_env.model,
               "--nuisance", cli_env.nuisance, "--grid", "a,b",
               "--out", str(tmp_path / "o2")])
    assert rc == 2
    assert "--grid expects comma-separated numbers; got 'a,b'" \
        in capsys.readouterr().err
    rc = main(["sensitivity", "--data", cli_env.data, "--model", cli_env.model,
               "--nuisance", cli_env.nuisance, "--grid", "0,0.2",
               "--breakdown", "--hull", "1", "--out", str(tmp_path / "o3")])
    assert rc == 2
    assert "--hull expects 'lo,hi'" in capsys.readouterr().err


def test_sensitivity_grid_file(cli_env, tmp_path):
    grid = _dump(tmp_path / "grid.json", [0.0, {"c0": 0.25}])
    out = tmp_path / "sens"
    assert main(["sensitivity", "--data", cli_env.data, "--model",
                 cli_env.model, "--nuisance", cli_env.nuisance,
                 "--grid-file", grid, "--out", str(out)]) == 0
    curve = json.loads((out / "curve.json").read_text())
    assert [pt["param"] for pt in curve["points"]] == [0.0, 0.25]


def test_optimal_command(tmp_path, capsys):
    cfg = gallery()["regime_2period"]
    config = _dump(tmp_path / "dgp.json", cfg.to_dict())
    model = _dump(tmp_path / "model.json", blip_model_for(cfg).to_dict())
    nuisance = _dump(tmp_path / "nuisance.json", nuisance_for(cfg).to_dict())
    sim = tmp_path / "sim"
    assert main(["simulate", "--config", config, "--n", "400", "--seed", "2",
                 "--out", str(sim)]) == 0
    data = str(sim / "panel.csv")

    out = tmp_path / "opt"
    rc = main(["optimal", "--data", data, "--model", model,
               "--nuisance", nuisance, "--tau", "0,1,1", "--out", str(out)])
    assert rc == 0
    assert "regime value = " in capsys.readouterr().out
    fit = json.loads((out / "fit.json").read_text())
    assert fit["diagnostics"]["utility_weights"] == [0.0, 1.0, 1.0]
    table = json.loads((out / "decision_table.json").read_text())
    assert table["action_grid"] == [0.0, 1.0]
    value = json.loads((out / "value.json").read_text())
    assert np.isfinite(value["estimate"])

    rc = main(["optimal", "--data", data, "--model", model,
               "--nuisance", nuisance, "--tau", "", "--out",
               str(tmp_path / "o2")])
    assert rc == 2
    assert "optimal needs --tau" in capsys.readouterr().err


def test_verify_command(monkeypatch, tmp_path, capsys):
    monkeypatch.setitem(
        acceptance.CRITERIA, 1,
        lambda: CriterionResult(1, "identification", "pass", "ok", 0.01))
    out = tmp_path / "v1"
    assert main(["verify", "--criteria", "1", "--out", str(out)]) == 0
    assert "1 passed, 0 skipped" in capsys.readouterr().out
    blob = json.loads((out / "verify.json").read_text())
    assert blob["lines"] == ["[PASS]  1 identification: ok (0.0s)"]

    monkeypatch.setitem(
        acceptance.CRITERIA, 2,
        lambda: CriterionResult(2, "consistency", "fail", "synthetic", 0.01))
    out2 = tmp_path / "v2"
    rc = main(["verify", "--criteria", "1,2", "--out", str(out2)])
    assert rc == 5
    err = capsys.readouterr().err
    assert "1 of 2 acceptance checks failed" in err
    # the report survives the failure so the lines can be inspected
    blob = json.loads((out2 / "verify.json").read_text())
    assert any(line.startswith("[FAIL]") for line in blob["lines"])

    assert main(["verify", "--criteria", "99"]) == 5
    assert main(["verify", "--criteria", "x"]) == 2


def test_version_and_parser_basics(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.startswith("didsnmm ")
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
