import numpy as np
import pytest

from shiftsched import experiment as ex
from shiftsched.experiment import ExperimentConfig, Record

TINY = dict(scale=0.03, seeds=[0, 1], theta_grid=[1, 4], phi_params={"n_trees": 10},
            dnn_grid={"hidden_units": [8], "epochs": [3]}, en_grid={"lam": [0.1, 1.0]},
            cv_folds=2, top_k=20, node_cap=200)


@pytest.fixture(scope="module")
def tiny_run():
    cfg = ExperimentConfig(**TINY, methods=list(ex.METHODS),
                           extra_variants=[{"name": "K50", "capacity": 50}])
    return cfg, ex.run_experiment(cfg)


def test_config_validation():
    with pytest.raises(ex.ConfigError):
        ExperimentConfig(methods=["magic"])
    with pytest.raises(ex.ConfigError):
        ExperimentConfig(theta_grid=[])
    with pytest.raises(ex.ConfigError):
        ExperimentConfig(seeds=[])
    with pytest.raises(ex.ConfigError):
        ExperimentConfig.from_dict({"unknown": 1})
    with pytest.raises(ex.ConfigError):
        ExperimentConfig.load("does/not/exist.yaml")


def test_config_yaml_round_trip(tmp_path):
    cfg = ExperimentConfig(**TINY, sweep=[{"alpha": 0.8}])
    cfg.dump(tmp_path / "c.yaml")
    assert ExperimentConfig.load(tmp_path / "c.yaml") == cfg
    assert ExperimentConfig.from_dict({"seeds": 3}).seeds == [0, 1, 2]


def test_desk_and_full_sizes():
    assert ExperimentConfig().sizes == (1458, 966)
    assert ExperimentConfig(scale=1.0).sizes == (5830, 3866)


def test_records_cover_every_cell(tiny_run):
    cfg, res = tiny_run
    keys = {(r.seed, r.theta, r.variant, r.method) for r in res.records}
    assert len(keys) == len(res.records) == 2 * 2 * 2 * len(ex.METHODS)


def test_oracle_rows(tiny_run):
    _, res = tiny_run
    table = res.table("base")
    for theta in (1.0, 4.0):
        assert table.row("oracle", theta).mae_mean == 0.0


def test_tuning_only_reads_historical_labels(tiny_run):
    from shiftsched.validation import AUDIT

    cfg = ExperimentConfig(**{**TINY, "seeds": [0], "theta_grid": [2]}, methods=["dnn"])
    AUDIT.clear()
    ex.run_experiment(cfg)
    purposes = {r.purpose for r in AUDIT.records("B")}
    assert purposes <= {"evaluation", "reveal-window"}
    assert all(r.setting == "A" for r in AUDIT.records(purpose="standardizer-fit"))


def test_oracle_only_run():
    cfg = ExperimentConfig(**{**TINY, "seeds": [3]}, methods=["oracle"])
    res = ex.run_experiment(cfg)
    assert all(r.mae == 0.0 for r in res.records)
    table = res.table()
    assert all(r.mae_sd == 0.0 and r.cost_sd == 0.0 for r in table.rows)


def test_run_is_deterministic(tmp_path, tiny_run):
    cfg, res = tiny_run
    again = ex.run_experiment(cfg)
    ex.write_records(res.records, tmp_path / "a.csv")
    ex.write_records(again.records, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_records_csv_round_trip(tmp_path, tiny_run):
    _, res = tiny_run
    ex.write_records(res.records, tmp_path / "r.csv")
    assert ex.read_records(tmp_path / "r.csv") == res.records


def test_sweep_adds_labelled_rows():
    cfg = ExperimentConfig(**{**TINY, "seeds": [0], "theta_grid": [4]}, methods=["dnn"],
                           sweep=[{"alpha": 0.8}, {"beta": 1.2}])
    methods = {r.method for r in ex.run_experiment(cfg).records}
    assert methods == {"dnn", "wdgrl_a0.8_b1", "wdgrl_a1_b1.2"}


def make_records():
    recs = []
    for seed, (a, b, c) in enumerate([(10.0, 12.0, 11.0), (11.0, 13.5, 12.0), (9.5, 12.5, 14.0)]):
        for method, cost in (("wdgrl", a), ("dnn", b), ("elastic_net", c)):
            recs.append(Record(seed, 4.0, "base", method, cost / 10, cost * 100, True, 1))
    return recs


def test_aggregate_and_welch_reference():
    from shiftsched.diagnostics import welch_t_test

    table = ex.aggregate(make_records())
    row = table.row("wdgrl", 4)
    assert row.cost_mean == pytest.approx(1016.6666666666666)
    assert row.cost_sd == pytest.approx(np.std([1000, 1100, 950], ddof=1))
    # elastic net (mean 1233.3) beats dnn (mean 1266.7), so it is the reference
    ref = welch_t_test([1000, 1100, 950], [1100, 1200, 1400]).p_value
    assert row.p_value == pytest.approx(ref)
    assert table.row("dnn", 4).p_value is None


def test_report_formats(tmp_path):
    table = ex.aggregate(make_records())
    csv_text = ex.format_report(table, "csv")
    assert csv_text.splitlines()[0] == ",".join(ex.REPORT_COLUMNS)
    md = ex.format_report(table, "markdown").splitlines()
    assert len(md) - 2 == 3
    assert "method: wdgrl" in ex.format_report(table, "text")
    paths = ex.emit_report(table, tmp_path / "out")
    assert sorted(p.suffix for p in paths) == [".csv", ".md", ".txt"]
    with pytest.raises(ValueError):
        ex.format_report(table, "xml")


def test_report_csv_is_full_precision():
    import csv
    import io

    table = ex.aggregate(make_records())
    rows = list(csv.DictReader(io.StringIO(ex.format_report(table, "csv"))))
    for parsed, row in zip(rows, table.rows):
        assert float(parsed["cost_mean"]) == row.cost_mean
        assert float(parsed["mae_sd"]) == row.mae_sd


def test_empty_report_rejected():
    with pytest.raises(ValueError):
        ex.format_report(ex.ReportTable("base", []), "csv")
    with pytest.raises(ValueError):
        ex.aggregate([], "base")


def test_round_half_even():
    assert ex.round_display(0.25) == "0.2"
    assert ex.round_display(0.35) == "0.4"
    assert ex.round_display(0.45) == "0.4"
    assert ex.round_display(2.5, 0) == "2"
    assert ex.round_display(3.5, 0) == "4"
    assert ex.round_display(None) == ""


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        ex.emit_report(ex.aggregate(make_records()), blocker / "sub")


def test_output_dir_env(monkeypatch, tmp_path):
    monkeypatch.setenv(ex.OUTPUT_ENV, str(tmp_path / "env"))
    assert ex.default_output_dir() == tmp_path / "env"


def test_shipped_configs_load():
    from pathlib import Path

    from test_acceptance import ACCEPTANCE_CONFIG
    root = Path(__file__).resolve().parents[1] / "configs"
    acc = ExperimentConfig.load(root / "acceptance.yaml")
    assert acc.to_dict() == ExperimentConfig.from_dict(dict(ACCEPTANCE_CONFIG)).to_dict()
    ExperimentConfig.load(root / "quick.yaml").validate()
