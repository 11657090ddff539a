"""Command-line surface: determinism, schemas, exit codes, config merging."""

import json

import numpy as np
import pytest

from stlasso.cli import main
from stlasso.panel_io import read_fit_json, read_params_json


def _run(*argv) -> int:
    return main(list(argv))


def _dir_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    """One simulated dataset shared by the downstream-command tests."""
    out = tmp_path_factory.mktemp("sim")
    assert _run("simulate", "--side", "2", "--T", "60", "--seed", "7", "--out", str(out)) == 0
    return out


# ---------------------------------------------------------------------------
# determinism (re-run -> bit-identical files)
# ---------------------------------------------------------------------------


def test_simulate_rerun_bit_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert _run("simulate", "--side", "2", "--T", "50", "--seed", "7", "--out", str(out)) == 0
    assert _dir_bytes(a) == _dir_bytes(b)
    # a different seed changes the panel
    c = tmp_path / "c"
    assert _run("simulate", "--side", "2", "--T", "50", "--seed", "8", "--out", str(c)) == 0
    assert _dir_bytes(c)["panel.csv"] != _dir_bytes(a)["panel.csv"]


def test_fit_and_downstream_reruns_bit_identical(sim_dir, tmp_path):
    panel = str(sim_dir / "panel.csv")
    regs = str(sim_dir / "regressors.csv")
    fits = []
    for name in ("f1", "f2"):
        out = tmp_path / name
        assert (
            _run(
                "fit", "--panel", panel, "--regressors", regs,
                "--lambda1", "1.0", "--lambda2", "0.5", "--out", str(out),
            )
            == 0
        )
        fits.append(out)
    assert _dir_bytes(fits[0]) == _dir_bytes(fits[1])

    infs = []
    for name in ("i1", "i2"):
        out = tmp_path / name
        assert (
            _run(
                "infer", "--panel", panel, "--regressors", regs,
                "--fit", str(fits[0] / "fit.json"), "--out", str(out),
            )
            == 0
        )
        infs.append(out)
    assert _dir_bytes(infs[0]) == _dir_bytes(infs[1])

    cmps = []
    for name in ("c1", "c2"):
        out = tmp_path / name
        assert (
            _run(
                "compare", "--panel", panel, "--regressors", regs,
                "--lambda1", "1.0", "--max-iter", "8", "--out", str(out),
            )
            == 0
        )
        cmps.append(out)
    assert _dir_bytes(cmps[0]) == _dir_bytes(cmps[1])


def test_cv_rerun_bit_identical(sim_dir, tmp_path):
    args = (
        "cv", "--panel", str(sim_dir / "panel.csv"),
        "--regressors", str(sim_dir / "regressors.csv"),
        "--grid", "0.01,100", "--n-blocks", "2", "--max-iter", "8",
    )
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(*args, "--out", str(a)) == 0
    assert _run(*args, "--out", str(b)) == 0
    assert _dir_bytes(a) == _dir_bytes(b)
    doc = json.loads((a / "cv_result.json").read_text())
    assert doc["n_triples"] == 8  # 2 values on each of 3 axes
    assert (a / "fit.json").exists()  # refit at the selected triple
    scores = (a / "cv_scores.csv").read_text().splitlines()
    assert scores[0] == "lambda1,lambda2,lambda3,fold,rmse,status"
    assert len(scores) == 1 + 8 * 2  # header + triples x folds


def test_mc_rerun_bit_identical(tmp_path):
    args = (
        "mc", "--side", "2", "--T", "40", "--reps", "3",
        "--lambda1", "1.0", "--max-iter", "6", "--seed", "3",
    )
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(*args, "--out", str(a)) == 0
    assert _run(*args, "--out", str(b)) == 0
    assert _dir_bytes(a) == _dir_bytes(b)
    summary = (a / "mc_summary.csv").read_text().splitlines()
    assert summary[0] == "group,bias,mae,rmse"
    groups = [line.split(",")[0] for line in summary[1:]]
    assert groups == ["beta", "phi", "w_all", "w_nonzero", "sigma"]  # no zeros at n=4
    records = (a / "mc_records.csv").read_text().splitlines()
    assert len(records) == 4  # header + 3 reps
    assert "fit_seconds" not in records[0]  # timing never lands in files


# ---------------------------------------------------------------------------
# schemas and content
# ---------------------------------------------------------------------------


def test_fit_output_validates_against_schema(sim_dir, tmp_path):
    out = tmp_path / "fit"
    assert (
        _run(
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--regressors", str(sim_dir / "regressors.csv"),
            "--lambda1", "1.0", "--out", str(out),
        )
        == 0
    )
    doc = read_fit_json(out / "fit.json")
    assert doc["n"] == 4 and doc["k"] == 3 and doc["P"] == 1
    assert len(doc["beta"]) == 3
    assert np.asarray(doc["w"]).shape == (4, 4)
    assert doc["penalty"]["lambda1"] == 1.0
    manifest = json.loads((out / "fit_manifest.json").read_text())
    assert manifest["command"] == "fit"
    assert manifest["config"]["lambda1"] == 1.0
    assert "stlasso" in manifest["versions"]


def test_check_reports_stationary_truth(sim_dir, tmp_path):
    out = tmp_path / "chk"
    assert _run("check", "--fit", str(sim_dir / "truth.json"), "--out", str(out)) == 0
    doc = json.loads((out / "check.json").read_text())
    assert doc["stationary"] is True
    assert doc["row_sum_max"] == pytest.approx(0.6)
    assert doc["n"] == 4
    # truth file itself parses as a parameter document
    params = read_params_json(sim_dir / "truth.json")
    assert params.n == 4


def test_infer_output_shape(sim_dir, tmp_path):
    fit_out = tmp_path / "fit"
    assert (
        _run(
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--regressors", str(sim_dir / "regressors.csv"),
            "--lambda1", "5.0", "--lambda2", "1.0", "--out", str(fit_out),
        )
        == 0
    )
    inf_out = tmp_path / "inf"
    assert (
        _run(
            "infer", "--panel", str(sim_dir / "panel.csv"),
            "--regressors", str(sim_dir / "regressors.csv"),
            "--fit", str(fit_out / "fit.json"), "--out", str(inf_out),
        )
        == 0
    )
    lines = (inf_out / "inference.csv").read_text().splitlines()
    assert lines[0] == "parameter,group,estimate,se,z,lcl,ucl"
    doc = read_fit_json(fit_out / "fit.json")
    assert len(lines) - 1 == doc["support_size"] + 1  # support + sigma2
    for line in lines[1:]:
        cells = line.split(",")
        est, se, z = float(cells[2]), float(cells[3]), float(cells[4])
        if np.isfinite(se) and se > 0:
            assert z == pytest.approx(est / se, rel=1e-12)


def test_compare_table_lists_all_three_models(sim_dir, tmp_path):
    out = tmp_path / "cmp"
    assert (
        _run(
            "compare", "--panel", str(sim_dir / "panel.csv"),
            "--regressors", str(sim_dir / "regressors.csv"),
            "--lambda1", "1.0", "--max-iter", "8", "--out", str(out),
        )
        == 0
    )
    lines = (out / "comparison.csv").read_text().splitlines()
    assert lines[0] == "model,mse,aic,bic,loglik,n_params"
    models = [line.split(",")[0] for line in lines[1:]]
    assert models == ["ols", "var1", "spatiotemporal"]


def test_fit_with_fourier_fallback(sim_dir, tmp_path):
    """Without a regressor file the design is built from --frequencies."""
    out = tmp_path / "fourier"
    assert (
        _run(
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--frequencies", "daily", "--lambda1", "1.0", "--out", str(out),
        )
        == 0
    )
    assert read_fit_json(out / "fit.json")["k"] == 2
    out2 = tmp_path / "nofreq"
    assert (
        _run(
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--frequencies", "none", "--out", str(out2),
        )
        == 0
    )
    assert read_fit_json(out2 / "fit.json")["k"] == 0


# ---------------------------------------------------------------------------
# config merging and exit codes
# ---------------------------------------------------------------------------


def test_config_file_supplies_options_flags_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"side": 2, "T": 40, "seed": 5}))
    a = tmp_path / "a"
    assert _run("simulate", "--config", str(cfg), "--out", str(a)) == 0
    manifest = json.loads((a / "simulate_manifest.json").read_text())
    assert manifest["config"]["T"] == 40
    assert manifest["seed"] == 5
    # explicit flag beats the config value
    b = tmp_path / "b"
    assert _run("simulate", "--config", str(cfg), "--T", "30", "--out", str(b)) == 0
    assert json.loads((b / "simulate_manifest.json").read_text())["config"]["T"] == 30


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sides": 2}))
    with pytest.raises(SystemExit) as err:
        _run("simulate", "--config", str(cfg), "--out", str(tmp_path / "x"))
    assert err.value.code == 2


def test_unknown_flag_and_missing_required_exit_2(tmp_path):
    with pytest.raises(SystemExit) as err:
        _run("simulate", "--bogus", "1")
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        _run("fit", "--out", str(tmp_path))  # --panel missing
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        _run("nonsense")
    assert err.value.code == 2


def test_computational_failures_exit_1(sim_dir, tmp_path, capsys):
    assert _run("fit", "--panel", "/does/not/exist.csv", "--out", str(tmp_path)) == 1
    assert "error:" in capsys.readouterr().err
    # regressor/panel station mismatch is a runtime failure, not usage
    other = tmp_path / "other"
    assert _run("simulate", "--side", "3", "--T", "60", "--out", str(other)) == 0
    assert (
        _run(
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--regressors", str(other / "regressors.csv"),
            "--out", str(tmp_path / "bad"),
        )
        == 1
    )
    # corrupt fit JSON
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert _run("check", "--fit", str(bad), "--out", str(tmp_path / "chk")) == 1


def test_timing_goes_to_stderr_not_stdout(sim_dir, tmp_path, capsys):
    out = tmp_path / "fit"
    assert (
        _run(
            "fit", "--panel", str(sim_dir / "panel.csv"),
            "--regressors", str(sim_dir / "regressors.csv"),
            "--out", str(out),
        )
        == 0
    )
    captured = capsys.readouterr()
    assert "finished in" in captured.err
    assert "finished in" not in captured.out
