"""Replicated predict-then-schedule experiments and their reports."""
from __future__ import annotations

import copy
import csv
import io
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path

import numpy as np
import yaml

from . import datagen
from .diagnostics import welch_t_test
from .predictors import (DNNRegressor, ElasticNetRegressor, cross_validate, fit_retrained,
                         fit_wdgrl, reveal_window)
from .scheduler import (InfeasibleScheduleError, SchedulingInstance, oracle_schedule,
                        realized_cost, solve_branch_and_bound, top_k_by_due_date)

log = logging.getLogger(__name__)

METHODS = ("elastic_net", "dnn", "wdgrl", "retrain", "finetune", "oracle")
BASELINES = ("elastic_net", "dnn")
OUTPUT_ENV = "SHIFTSCHED_OUTPUT_DIR"
FULL_SIZE = (datagen.N_HISTORICAL, datagen.N_DEPLOYMENT)

DESK_DNN_GRID = {"hidden_units": [32, 64], "epochs": [50], "batch_size": [32],
                 "l2": [1e-5, 1e-3], "dropout": [0.4]}
FULL_DNN_GRID = {"hidden_units": [8, 16, 32, 64], "epochs": [50, 100], "batch_size": [32, 64],
                 "l2": [1e-5, 1e-3, 1e-2], "dropout": [0.4, 0.5, 0.6]}
EN_GRID = {"lam": [0.01, 0.1, 1.0, 10.0, 100.0], "ratio": [0.0, 0.25, 0.5, 0.75, 1.0]}


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


@dataclass
class ScheduleVariant:
    name: str = "base"
    capacity: int = 70
    c_early: float = 1.0
    c_tardy: float = 1.0


@dataclass
class ExperimentConfig:
    theta_grid: list = field(default_factory=lambda: [1, 2, 3, 4])
    seeds: list = field(default_factory=lambda: list(range(10)))
    methods: list = field(default_factory=lambda: ["elastic_net", "dnn", "wdgrl", "oracle"])
    capacity: int = 70
    c_early: float = 1.0
    c_tardy: float = 1.0
    extra_variants: list = field(default_factory=list)
    noise_kind: str = "gaussian"
    phi_kind: str = "forest"
    phi_params: dict = field(default_factory=dict)
    scale: float = 0.25
    alpha: float = 1.0
    beta: float = 1.0
    n_critic: int = 5
    sweep: list = field(default_factory=list)
    sweep_thetas: list | None = None
    variant_thetas: list | None = None
    reveal_window: float = 30.0
    finetune_epochs: int = 10
    top_k: int = 100
    cv_folds: int = 5
    dnn_grid: dict = field(default_factory=lambda: copy.deepcopy(DESK_DNN_GRID))
    en_grid: dict = field(default_factory=lambda: copy.deepcopy(EN_GRID))
    population_seed: int = 2024
    phi_seed: int = 0
    slack_sigma: float = 5.0
    horizon_spread: int = 60
    node_cap: int = 2000

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.theta_grid:
            raise ConfigError("theta_grid must not be empty")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if not self.methods:
            raise ConfigError("methods must not be empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        if self.noise_kind not in ("gaussian", "uniform"):
            raise ConfigError("noise_kind must be 'gaussian' or 'uniform'")
        if self.phi_kind not in ("forest", "boosting"):
            raise ConfigError("phi_kind must be 'forest' or 'boosting'")
        for point in self.sweep:
            if set(point) - {"alpha", "beta"}:
                raise ConfigError("sweep points may only set alpha and beta")
        for v in self.extra_variants:
            if set(v) - {f.name for f in fields(ScheduleVariant)}:
                raise ConfigError(f"bad schedule variant {v}")

    @property
    def sizes(self) -> tuple[int, int]:
        return tuple(max(2, int(round(s * self.scale))) for s in FULL_SIZE)

    def variants(self) -> list[ScheduleVariant]:
        base = ScheduleVariant("base", self.capacity, self.c_early, self.c_tardy)
        return [base] + [ScheduleVariant(**v) for v in self.extra_variants]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict | None) -> "ExperimentConfig":
        payload = dict(payload or {})
        known = {f.name for f in fields(cls)}
        extra = set(payload) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if isinstance(payload.get("seeds"), int):
            payload["seeds"] = list(range(payload["seeds"]))
        return cls(**payload)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            payload = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if payload is not None and not isinstance(payload, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(payload)

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


@dataclass(frozen=True)
class Record:
    seed: int
    theta: float
    variant: str
    method: str
    mae: float
    cost: float
    optimal: bool
    nodes: int


RECORD_FIELDS = [f.name for f in fields(Record)]


def sweep_label(point: dict) -> str:
    return f"wdgrl_a{float(point.get('alpha', 1.0)):g}_b{float(point.get('beta', 1.0)):g}"


# -- running ----------------------------------------------------------------------

def build_outcome_model(cfg: ExperimentConfig) -> datagen.OutcomeModel:
    seed_a, seed_b = datagen.seed_populations(cfg.population_seed)
    return datagen.fit_outcome_model(seed_a, seed_b, cfg.phi_kind, seed=cfg.phi_seed,
                                    phi_params=cfg.phi_params)


def tune(cfg: ExperimentConfig, X, y) -> tuple[dict, dict]:
    """Grid search on historical data only; returns (elastic net, network) settings."""
    en, dnn = {}, {}
    if "elastic_net" in cfg.methods:
        en = cross_validate(ElasticNetRegressor(), cfg.en_grid, X, y, cfg.cv_folds,
                            seed=0).best_params
    if {"dnn", "wdgrl", "retrain", "finetune"} & set(cfg.methods) or cfg.sweep:
        dnn = cross_validate(DNNRegressor(), cfg.dnn_grid, X, y, cfg.cv_folds, seed=0).best_params
    return en, dnn


def _schedule_costs(due, yhat, y, variant, cfg):
    inst = SchedulingInstance.build(due, np.maximum(yhat, 0.0), variant.capacity,
                                    variant.c_early, variant.c_tardy, realized=y)
    inst = top_k_by_due_date(inst, cfg.top_k)
    sched = solve_branch_and_bound(inst, node_cap=cfg.node_cap, time_cap=1e9)
    cost = realized_cost(sched.start_slot, inst.realized, inst.due_dates, variant.c_early,
                         variant.c_tardy)
    return cost, sched.optimal, sched.nodes


def _oracle_cost(due, y, variant, cfg):
    inst = SchedulingInstance.build(due, y, variant.capacity, variant.c_early, variant.c_tardy,
                                    realized=y)
    inst = top_k_by_due_date(inst, cfg.top_k)
    sched = oracle_schedule(inst, node_cap=cfg.node_cap, time_cap=1e9)
    cost = realized_cost(sched.start_slot, inst.realized, inst.due_dates, variant.c_early,
                         variant.c_tardy)
    return cost, sched.optimal, sched.nodes


def run_experiment(cfg: ExperimentConfig, model: datagen.OutcomeModel | None = None,
                   progress=None) -> "ExperimentResult":
    """Every (seed, theta) replicate of every method; pure function of ``cfg``."""
    cfg.validate()
    model = model or build_outcome_model(cfg)
    n, m = cfg.sizes
    tuning_data = datagen.build_semisynthetic(model, cfg.theta_grid[0], n, m, cfg.noise_kind,
                                              cfg.seeds[0], slack_sigma=cfg.slack_sigma,
                                              horizon_spread=cfg.horizon_spread)
    XA0 = tuning_data.historical.features
    en_params, dnn_params = tune(cfg, XA0, tuning_data.historical.labels)
    records: list[Record] = []
    for seed in cfg.seeds:
        base_models = {}
        for theta in cfg.theta_grid:
            try:
                records += _replicate(cfg, model, seed, theta, n, m, en_params, dnn_params,
                                      base_models)
            except (InfeasibleScheduleError, ArithmeticError, ValueError, RuntimeError) as exc:
                raise ExperimentError(f"seed={seed} theta={theta}: {exc}") from exc
            if progress:
                progress(seed, theta)
    return ExperimentResult(records, {"elastic_net": en_params, "dnn": dnn_params})


def _replicate(cfg, model, seed, theta, n, m, en_params, dnn_params, cache):
    data = datagen.build_semisynthetic(model, theta, n, m, cfg.noise_kind, seed,
                                       slack_sigma=cfg.slack_sigma,
                                       horizon_spread=cfg.horizon_spread)
    XA, yA = data.historical.features, data.historical.labels
    XB = data.deployment.features
    yB = data.deployment.reveal_labels("evaluation")
    net = {**dnn_params, "random_state": seed}
    preds = {}
    for method in cfg.methods:
        if method == "elastic_net":
            if "en" not in cache:
                cache["en"] = ElasticNetRegressor(**en_params).fit(XA, yA)
            preds[method] = cache["en"].predict(XB)
        elif method in ("dnn", "finetune"):
            if "dnn" not in cache:
                cache["dnn"] = DNNRegressor(**net).fit(XA, yA)
            if method == "dnn":
                preds[method] = cache["dnn"].predict(XB)
            else:
                Xr, yr = reveal_window(XB, data.deployment.reveal_labels("reveal-window"),
                                       cfg.reveal_window)
                tuned = copy.deepcopy(cache["dnn"])
                tuned.continue_training(Xr, yr, cfg.finetune_epochs, tuned.learning_rate * 0.1)
                preds[method] = tuned.predict(XB)
        elif method == "retrain":
            Xr, yr = reveal_window(XB, data.deployment.reveal_labels("reveal-window"),
                                   cfg.reveal_window)
            preds[method] = fit_retrained(XA, yA, Xr, yr, dnn_params, seed).predict(XB)
        elif method == "wdgrl":
            hyper = {**dnn_params, "alpha": cfg.alpha, "beta": cfg.beta, "n_critic": cfg.n_critic}
            preds[method] = fit_wdgrl(XA, yA, XB, hyper, seed).predict(XB)
        elif method == "oracle":
            preds[method] = yB
    sweep = cfg.sweep if cfg.sweep_thetas is None or theta in cfg.sweep_thetas else []
    for point in sweep:
        hyper = {**dnn_params, "alpha": cfg.alpha, "beta": cfg.beta, "n_critic": cfg.n_critic,
                 **point}
        preds[sweep_label(point)] = fit_wdgrl(XA, yA, XB, hyper, seed).predict(XB)

    out = []
    variants = cfg.variants()
    if cfg.variant_thetas is not None and theta not in cfg.variant_thetas:
        variants = variants[:1]
    for variant in variants:
        for method, yhat in preds.items():
            mae = float(np.mean(np.abs(yhat - yB)))
            if method == "oracle":
                cost, opt, nodes = _oracle_cost(data.due_dates, yB, variant, cfg)
            else:
                cost, opt, nodes = _schedule_costs(data.due_dates, yhat, yB, variant, cfg)
            out.append(Record(int(seed), float(theta), variant.name, method, mae, float(cost),
                              bool(opt), int(nodes)))
    return out


# -- aggregation and output ----------------------------------------------------------

@dataclass
class ReportRow:
    method: str
    theta: float
    mae_mean: float
    mae_sd: float
    cost_mean: float
    cost_sd: float
    p_value: float | None


REPORT_COLUMNS = ["method", "theta", "mae_mean", "mae_sd", "cost_mean", "cost_sd", "p_value"]


@dataclass
class ReportTable:
    variant: str
    rows: list[ReportRow]

    def row(self, method, theta) -> ReportRow:
        for r in self.rows:
            if r.method == method and r.theta == float(theta):
                return r
        raise KeyError((method, theta))


def _sd(values):
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def aggregate(records: list[Record], variant="base", methods=None) -> ReportTable:
    """Mean and sd per (method, theta); wdgrl-type rows carry a Welch p-value
    against whichever baseline has the lower mean cost at that theta."""
    recs = [r for r in records if r.variant == variant]
    if not recs:
        raise ValueError(f"no records for variant {variant!r}")
    order = methods or list(dict.fromkeys(r.method for r in recs))
    thetas = sorted({r.theta for r in recs})
    by = {}
    for r in recs:
        by.setdefault((r.method, r.theta), []).append(r)
    rows = []
    for method in order:
        for theta in thetas:
            group = sorted(by.get((method, theta), []), key=lambda r: r.seed)
            if not group:
                continue
            mae = [r.mae for r in group]
            cost = [r.cost for r in group]
            p = None
            if method.startswith("wdgrl"):
                base = [(np.mean([r.cost for r in by[(b, theta)]]), b) for b in BASELINES
                        if (b, theta) in by]
                if base and len(group) > 1:
                    ref = sorted(by[(min(base)[1], theta)], key=lambda r: r.seed)
                    try:
                        p = welch_t_test(cost, [r.cost for r in ref]).p_value
                    except ValueError:
                        p = None
            rows.append(ReportRow(method, theta, float(np.mean(mae)), _sd(mae),
                                  float(np.mean(cost)), _sd(cost), p))
    return ReportTable(variant, rows)


@dataclass
class ExperimentResult:
    records: list[Record]
    tuned: dict

    def variants(self) -> list[str]:
        return list(dict.fromkeys(r.variant for r in self.records))

    def table(self, variant="base") -> ReportTable:
        return aggregate(self.records, variant)


def write_records(records: list[Record], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.seed, repr(r.theta), r.variant, r.method, repr(r.mae), repr(r.cost),
                        int(r.optimal), r.nodes])


def read_records(path) -> list[Record]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != set(RECORD_FIELDS):
        raise ValueError(f"{path} is not a raw records file")
    return [Record(int(r["seed"]), float(r["theta"]), r["variant"], r["method"], float(r["mae"]),
                   float(r["cost"]), bool(int(r["optimal"])), int(r["nodes"])) for r in rows]


def round_display(x, places=1) -> str:
    """Round half to even for display."""
    if x is None:
        return ""
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_EVEN))


def _cells(row: ReportRow, exact: bool) -> list[str]:
    vals = [row.mae_mean, row.mae_sd, row.cost_mean, row.cost_sd]
    if exact:
        num = [repr(v) for v in vals]
        p = "" if row.p_value is None else repr(row.p_value)
    else:
        num = [round_display(v) for v in vals]
        p = "" if row.p_value is None else f"{row.p_value:.3g}"
    return [row.method, f"{row.theta:g}"] + num + [p]


def format_report(table: ReportTable, fmt: str) -> str:
    if not table.rows:
        raise ValueError("report has no rows")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in table.rows:
            w.writerow(_cells(r, exact=True))
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(REPORT_COLUMNS) + " |",
                 "|" + "|".join(["---"] * len(REPORT_COLUMNS)) + "|"]
        lines += ["| " + " | ".join(_cells(r, exact=False)) + " |" for r in table.rows]
        return "\n".join(lines) + "\n"
    if fmt == "text":
        blocks = [f"variant: {table.variant}"]
        for r in table.rows:
            c = _cells(r, exact=False)
            blocks.append(f"- method: {c[0]}\n  theta: {c[1]}\n  mae: {c[2]} (sd {c[3]})\n"
                          f"  cost: {c[4]} (sd {c[5]})" + (f"\n  p_value: {c[6]}" if c[6] else ""))
        return "\n".join(blocks) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(table: ReportTable, out_dir, formats=("csv", "text", "markdown")) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from None
    suffix = {"csv": "csv", "text": "txt", "markdown": "md"}
    paths = []
    for fmt in formats:
        path = out_dir / f"report_{table.variant}.{suffix[fmt]}"
        path.write_text(format_report(table, fmt))
        paths.append(path)
    return paths


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "results"))


def write_outputs(result: ExperimentResult, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    raw = out_dir / "records.csv"
    write_records(result.records, raw)
    paths = [raw]
    for variant in result.variants():
        paths += emit_report(result.table(variant), out_dir)
    return paths
