import json

import numpy as np
import pytest
import yaml

from shiftsched import scheduler as sch
from shiftsched.cli import main

from test_experiment import TINY


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--theta", "4", "--scale", "0.03", "--out", str(out)]) == 0
    return out


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err


def test_no_subcommand_is_usage_error():
    assert main([]) == 1


def test_missing_config_is_usage_error(tmp_path):
    assert main(["experiment", "--config", str(tmp_path / "missing.txt")]) == 1


def test_simulate_writes_files(simulated):
    for name in ("historical.csv", "deployment.csv", "due_dates.csv", "outcome_model.json"):
        assert (simulated / name).is_file()


def test_diagnose(simulated, tmp_path, capsys):
    code = main(["diagnose", "--historical", str(simulated / "historical.csv"),
                 "--deployment", str(simulated / "deployment.csv"), "--repeats", "1",
                 "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "roc_auc" in out and "welch" in out
    assert (tmp_path / "shift_importance.csv").is_file()


@pytest.mark.parametrize("method", ["elastic_net", "dnn", "wdgrl"])
def test_train_then_predict(simulated, tmp_path, method):
    args = ["train", "--method", method, "--historical", str(simulated / "historical.csv"),
            "--deployment", str(simulated / "deployment.csv"), "--out", str(tmp_path),
            "--params", '{"epochs": 2}' if method != "elastic_net" else "{}"]
    assert main(args) == 0
    ckpt = tmp_path / f"{method}.json"
    assert json.loads(ckpt.read_text())["kind"]
    assert main(["predict", "--model", str(ckpt), "--data", str(simulated / "deployment.csv"),
                 "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "predictions.csv").read_text().splitlines()) > 1


def test_train_bad_params_is_usage_error(simulated, tmp_path):
    assert main(["train", "--method", "dnn", "--historical", str(simulated / "historical.csv"),
                 "--params", "{not json", "--out", str(tmp_path)]) == 1


def test_schedule_hand_instance(tmp_path, capsys):
    inst = sch.SchedulingInstance.build([4, 4], [2.0, 2.0], capacity=1, horizon=4)
    inst.save(tmp_path / "tiny.json")
    assert main(["schedule", "--instance", str(tmp_path / "tiny.json"),
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    expected = sch.solve_bruteforce(inst).objective
    assert f"objective: {expected!r}" in out
    assert (tmp_path / "schedule.csv").is_file()


def test_schedule_malformed_instance_is_runtime_error(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    assert main(["schedule", "--instance", str(tmp_path / "bad.json"),
                 "--out", str(tmp_path)]) == 2


def test_experiment_is_byte_deterministic_and_report_reaggregates(tmp_path, capsys):
    cfg = {**TINY, "seeds": [0, 1], "theta_grid": [4], "methods": ["elastic_net", "oracle"]}
    (tmp_path / "cfg.yaml").write_text(yaml.safe_dump(cfg))
    for run in ("a", "b"):
        assert main(["--seed", "0", "experiment", "--config", str(tmp_path / "cfg.yaml"),
                     "--out", str(tmp_path / run)]) == 0
    a, b = (tmp_path / "a" / "records.csv").read_bytes(), (tmp_path / "b" / "records.csv").read_bytes()
    assert a == b
    assert (tmp_path / "a" / "report_base.md").is_file()
    capsys.readouterr()
    assert main(["report", "--records", str(tmp_path / "a" / "records.csv"),
                 "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "report_base.csv").read_bytes() == (
        tmp_path / "a" / "report_base.csv").read_bytes()
    assert "| oracle |" in capsys.readouterr().out


def test_output_directory_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("SHIFTSCHED_OUTPUT_DIR", str(tmp_path / "envout"))
    inst = sch.SchedulingInstance.build([3], [1.0], capacity=1)
    inst.save(tmp_path / "one.json")
    assert main(["schedule", "--instance", str(tmp_path / "one.json")]) == 0
    assert np.loadtxt(tmp_path / "envout" / "schedule.csv", delimiter=",", skiprows=1).size == 2
