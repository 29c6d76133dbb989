import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from bwpipe import cli as cli_module
from bwpipe.cli import file_hash, main
from bwpipe.errors import DataError, MetricError, NumericalError

SMALL = ["--n", "120", "--p", "16", "--seed", "3"]


def cli(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli(["--output-dir", str(out), "synth", *SMALL]) == 0
    return out / "cohort.csv"


@pytest.fixture(scope="module")
def complete(tmp_path_factory, cohort):
    out = tmp_path_factory.mktemp("impute")
    assert cli(["--output-dir", str(out), "impute", str(cohort)]) == 0
    return out / "completed.csv"


def outputs_of(out_dir):
    man = json.loads((out_dir / "manifest.json").read_text())
    return man, {f: (out_dir / f).read_bytes() for f in man["outputs"]}


def test_synth_writes_cohort_truth_and_manifest(cohort):
    out = cohort.parent
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "synth" and man["seed"] == 3
    assert man["generator"]["factor_rank"] == 10 and man["generator"]["noise_scale"] > 0
    assert man["outputs"]["cohort.csv"] == file_hash(cohort)
    truth = json.loads((out / "ground_truth.json").read_text())
    assert truth["sex_gap"] == 130.0


def test_eda_complete_file_mcar_not_applicable(tmp_path, complete):
    assert cli(["--output-dir", str(tmp_path), "eda", str(complete)]) == 0
    rep = json.loads((tmp_path / "eda.json").read_text())
    assert rep["mcar_test"]["applicable"] is False


def test_eda_incomplete_file_runs_mcar(tmp_path, cohort):
    assert cli(["--output-dir", str(tmp_path), "eda", str(cohort)]) == 0
    rep = json.loads((tmp_path / "eda.json").read_text())
    assert rep["mcar_test"]["applicable"] is True


def test_chain_select_train_predict_report(tmp_path, complete):
    sel, tr, pr, gr, rp = (tmp_path / d for d in ("sel", "train", "pred", "grid", "rep"))
    assert cli(["--output-dir", sel, "select", complete, "--selectors", "pearson,lasso,ridge",
                 "--top-k", "6"]) == 0
    cons = json.loads((sel / "consensus.json").read_text())
    assert len(cons["entries"]) >= 6
    assert cli(["--output-dir", tr, "train", complete, "--report", sel / "consensus.json",
                 "--top-k", "6", "--model", "gradient_boosting", "--params", "n_stages=30"]) == 0
    model = json.loads((tr / "model.json").read_text())
    assert len(model["feature_names"]) == 6 and model["hyperparameters"]["n_stages"] == 30
    assert cli(["--output-dir", pr, "predict", complete, "--model-file", tr / "model.json"]) == 0
    with open(pr / "predictions.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["row", "prediction"] and len(rows) == 121
    assert cli(["--output-dir", gr, "grid", complete, "--selectors", "pearson,lasso",
                 "--models", "ols,cart,gradient_boosting"]) == 0
    with open(gr / "leaderboard.csv") as fh:
        board = list(csv.reader(fh))
    assert board[0] == ["selector", "imputer", "model", "r2", "rmse", "note"] and len(board) == 7
    rmse = [float(r[4]) for r in board[1:]]
    assert rmse == sorted(rmse)
    assert (gr / "residual_bins.csv").exists() and (gr / "feature_importance.csv").exists()
    assert cli(["--output-dir", rp, "report", gr, "--input", complete]) == 0
    assert json.loads((rp / "report.json").read_text())


@pytest.mark.parametrize("command,extra", [
    ("synth", SMALL),
    ("eda", []),
    ("impute", []),
    ("select", ["--selectors", "pearson,kendall"]),
    ("train", ["--features", "f1_sex", "--model", "ridge"]),
    ("grid", ["--selectors", "pearson", "--models", "ols,random_forest"]),
])
def test_replay_bit_exact(tmp_path, cohort, complete, command, extra):
    src = {"synth": [], "eda": [cohort], "impute": [cohort]}.get(command, [complete])
    first = tmp_path / "a"
    assert cli(["--output-dir", first, command, *src, *extra]) == 0
    man, files = outputs_of(first)
    again = tmp_path / "b"
    assert cli(["--replay", first / "manifest.json", "--output-dir", again]) == 0
    man2, files2 = outputs_of(again)
    assert files == files2 and man["outputs"] == man2["outputs"]


def test_replay_detects_changed_input(tmp_path, complete):
    data = tmp_path / "in.csv"
    data.write_bytes(complete.read_bytes())
    assert cli(["--output-dir", tmp_path / "a", "eda", data]) == 0
    data.write_text(data.read_text().replace("\n", "\n", 1) + "")
    with open(data, "a") as fh:
        fh.write(",".join(["1"] * len(complete.read_text().splitlines()[0].split(","))) + "\n")
    assert cli(["--replay", tmp_path / "a" / "manifest.json", "--output-dir", tmp_path / "b"]) == 2


def test_inputs_not_mutated(tmp_path, cohort, complete):
    before = {p: file_hash(p) for p in (cohort, complete)}
    cli(["--output-dir", tmp_path / "i", "impute", cohort])
    cli(["--output-dir", tmp_path / "s", "select", complete, "--selectors", "pearson"])
    cli(["--output-dir", tmp_path / "e", "eda", cohort])
    assert {p: file_hash(p) for p in (cohort, complete)} == before


def test_config_precedence(tmp_path, complete):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nseed = 5\ntop_k = 4\n\n[select]\nselectors = pearson\n")
    out = tmp_path / "o"
    assert cli(["--config", cfg, "--output-dir", out, "select", complete, "--top-k", "3"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["options"]["seed"] == 5 and man["options"]["top_k"] == 3
    assert man["options"]["selectors"] == ["pearson"]


def test_env_output_dir(tmp_path, complete, monkeypatch):
    monkeypatch.setenv("BWPIPE_OUTPUT_DIR", str(tmp_path / "envout"))
    assert cli(["eda", str(complete)]) == 0
    assert (tmp_path / "envout" / "manifest.json").exists()


def test_exit_codes(tmp_path, complete, capsys):
    assert cli(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err.lower()
    assert cli([]) == 1
    assert cli(["grid", str(complete), "--seed", "abc"]) == 1
    bad_cfg = tmp_path / "bad.ini"
    bad_cfg.write_text("[run]\nnot_an_option = 1\n")
    assert cli(["--config", str(bad_cfg), "eda", str(complete)]) == 1
    assert cli(["--output-dir", str(tmp_path), "eda", str(tmp_path / "missing.csv")]) == 2
    assert cli(["--output-dir", str(tmp_path), "train", str(complete), "--target", "nope"]) == 2
    assert cli(["--output-dir", str(tmp_path), "select", str(complete), "--selectors", "zzz"]) == 2
    flat = tmp_path / "flat.csv"
    flat.write_text("a,b\n1,5\n2,5\n3,5\n")
    assert cli(["--output-dir", str(tmp_path / "f"), "train", str(flat), "--target", "b",
                 "--model", "ols"]) == 0
    # a combo that cannot be fitted is recorded, not fatal
    flat_out = tmp_path / "f2"
    assert cli(["--output-dir", flat_out, "grid", flat, "--target", "b", "--selectors", "pearson",
                "--models", "ols"]) == 0
    assert (flat_out / "failures.csv").read_text().count("\n") == 2


@pytest.mark.parametrize("exc,code", [
    (NumericalError("singular"), 3),
    (MetricError("zero variance"), 3),
    (np.linalg.LinAlgError("singular"), 3),
    (DataError("bad column"), 2),
])
def test_error_class_to_exit_code(tmp_path, complete, monkeypatch, exc, code):
    def boom(opts, out):
        raise exc

    monkeypatch.setitem(cli_module.COMMANDS, "eda", boom)
    assert cli(["--output-dir", tmp_path, "eda", complete]) == code


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "bwpipe.cli", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "bwpipe" in res.stdout
