import glob
import json
import os

import pandas as pd
import pytest

from main import cli_dispatch, project_root
from utils.log_utils import setup_logging
from utils.record_utils import load_json

TINY_TASK = ["--n-targets", "32", "--dim", "4", "--n-mixture-components", "2", "--n-queries", "16",
             "--n-probes", "8"]


@pytest.fixture(scope="module", autouse=True)
def _logging_outside_capsys():
    # handlers bind the stream current at setup; keep that stream the session one
    setup_logging(project_root)


def only_run(out_root, command):
    runs = glob.glob(os.path.join(str(out_root), f"{command}-*"))
    assert len(runs) == 1
    return runs[0]


def test_help_exits_cleanly(capsys):
    assert cli_dispatch(["--help"]) == 0
    assert "synth-gen" in capsys.readouterr().out


def test_missing_command_is_a_usage_error():
    assert cli_dispatch([]) == 1


def test_unknown_command_is_a_usage_error():
    assert cli_dispatch(["train-everything"]) == 1


def test_seed_is_required(capsys):
    assert cli_dispatch(["synth-gen"]) == 1
    assert "--seed" in capsys.readouterr().err


def test_synth_gen_writes_a_run(tmp_path):
    assert cli_dispatch(["synth-gen", "--seed", "3", "--out", str(tmp_path), *TINY_TASK]) == 0
    directory = only_run(tmp_path, "synth-gen")
    manifest = load_json(os.path.join(directory, "manifest.json"))
    assert manifest["status"] == "completed"
    assert manifest["seed"] == 3
    assert manifest["config"]["synth"]["n_targets"] == 32
    assert os.path.isdir(os.path.join(directory, "task"))
    assert os.path.exists(os.path.join(str(tmp_path), "runs.duckdb"))


def test_invalid_value_exits_with_one(tmp_path):
    assert cli_dispatch(["synth-gen", "--seed", "3", "--out", str(tmp_path), "--n-targets", "0"]) == 1


def test_unknown_config_key_exits_with_one(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"temperature": 2.0}))
    assert cli_dispatch(["synth-gen", "--seed", "3", "--out", str(tmp_path), "--config", str(path)]) == 1


def test_config_file_values_are_used(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"n_targets": 24, "dim": 4, "n_mixture_components": 2, "n_queries": 8,
                                "n_probes": 4}))
    assert cli_dispatch(["synth-gen", "--seed", "1", "--out", str(tmp_path), "--config", str(path),
                         "--n-targets", "20"]) == 0
    manifest = load_json(os.path.join(only_run(tmp_path, "synth-gen"), "manifest.json"))
    assert manifest["config"]["synth"]["n_targets"] == 20
    assert manifest["config"]["synth"]["dim"] == 4


def test_train_corrector_then_eval_agree(tmp_path):
    args = ["train-corrector", "--seed", "5", "--out", str(tmp_path), *TINY_TASK, "--width", "8",
            "--max-epochs", "3", "--batch-size", "8"]
    assert cli_dispatch(args) == 0
    train_dir = only_run(tmp_path, "train-corrector")
    trained = pd.read_csv(os.path.join(train_dir, "results.csv")).iloc[0]
    assert os.path.exists(os.path.join(train_dir, "corrector.bin"))
    assert os.path.exists(os.path.join(train_dir, "steps.jsonl"))

    assert cli_dispatch(["eval", "--run", train_dir, "--out", str(tmp_path)]) == 0
    evaluated = pd.read_csv(os.path.join(only_run(tmp_path, "eval"), "results.csv")).iloc[0]
    assert evaluated["final_kl"] == pytest.approx(trained["final_kl"], rel=1e-9)
    assert evaluated["staleness_kl"] == pytest.approx(trained["staleness_kl"], rel=1e-9)


def test_eval_rejects_non_training_runs(tmp_path):
    assert cli_dispatch(["synth-gen", "--seed", "3", "--out", str(tmp_path), *TINY_TASK]) == 0
    assert cli_dispatch(["eval", "--run", only_run(tmp_path, "synth-gen"), "--out", str(tmp_path)]) == 1


def test_report_reads_runs_from_the_ledger(tmp_path):
    for seed in ("1", "2"):
        assert cli_dispatch(["synth-gen", "--seed", seed, "--out", str(tmp_path), *TINY_TASK]) == 0
    assert cli_dispatch(["report", "--out", str(tmp_path)]) == 0
    aggregated = pd.read_csv(tmp_path / "report" / "aggregated.csv")
    assert len(aggregated) == 1
    assert aggregated.iloc[0]["n_seeds"] == 2
    assert "staleness_kl_median" in aggregated.columns
    assert (tmp_path / "report" / "plot_data.json").exists()


def test_check_theory_sweeps_a_fresh_encoder(tmp_path):
    args = ["check-theory", "--seed", "2", "--out", str(tmp_path), *TINY_TASK, "--n-instances", "5"]
    assert cli_dispatch(args) == 0
    run = only_run(tmp_path, "check-theory")
    sweep = pd.read_csv(os.path.join(run, "perturbation.csv"))
    assert sweep["norm"].iloc[0] == 0.0 and sweep["l1_gap"].iloc[0] == 0.0
    assert (sweep["l1_gap"].iloc[1:] > 0.0).all()
    checks = pd.read_csv(os.path.join(run, "bound_checks.csv"))
    assert len(checks) == 5 + 2
    assert load_json(os.path.join(run, "manifest.json"))["lipschitz_estimate"] > 0.0
