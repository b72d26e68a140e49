"""Command-line entry point: ``shiftsched <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datagen, diagnostics, experiment
from .predictors import (DNNRegressor, ElasticNetRegressor, WDGRLRegressor, load_checkpoint,
                         save_checkpoint)
from .scheduler import SchedulingInstance, oracle_schedule, realized_cost, solve_branch_and_bound

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    p.add_argument("--config", default=argparse.SUPPRESS, help="YAML configuration file")
    p.add_argument("--out", default=argparse.SUPPRESS,
                   help=f"output directory (default ${experiment.OUTPUT_ENV} or ./results)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="shiftsched", parents=[common],
                     description="Shift-aware throughput prediction and order scheduling.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="write one semi-synthetic replicate")
    p.add_argument("--theta", type=float, default=4.0)
    p.add_argument("--scale", type=float, default=0.25)
    p.add_argument("--full", action="store_true", help="full-size samples (scale 1)")
    p.add_argument("--noise", choices=["gaussian", "uniform"], default="gaussian")
    p.add_argument("--phi", choices=["forest", "boosting"], default="forest")

    p = sub.add_parser("diagnose", parents=[common], help="adversarial validation and Welch test")
    p.add_argument("--historical", required=True, help="setting A CSV")
    p.add_argument("--deployment", required=True, help="setting B CSV")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--repeats", type=int, default=20)

    p = sub.add_parser("train", parents=[common], help="fit a predictor and write a checkpoint")
    p.add_argument("--method", choices=["elastic_net", "dnn", "wdgrl"], required=True)
    p.add_argument("--historical", required=True, help="labelled setting A CSV")
    p.add_argument("--deployment", help="setting B CSV (features only are read; wdgrl)")
    p.add_argument("--params", default="{}", help="JSON object of estimator parameters")

    p = sub.add_parser("predict", parents=[common], help="predict throughput times")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="feature CSV")

    p = sub.add_parser("schedule", parents=[common], help="solve a scheduling instance file")
    p.add_argument("--instance", required=True, help="instance JSON")
    p.add_argument("--oracle", action="store_true", help="use the realized throughput times")
    p.add_argument("--node-cap", type=int, default=200_000)
    p.add_argument("--time-cap", type=float, default=60.0)

    p = sub.add_parser("experiment", parents=[common], help="run a replicated experiment")
    p.add_argument("--full", action="store_true", help="full-size samples (scale 1)")

    p = sub.add_parser("report", parents=[common], help="re-aggregate raw records")
    p.add_argument("--records", required=True, help="records.csv from an experiment run")
    return parser


def _out(args) -> Path:
    out = Path(getattr(args, "out", None) or experiment.default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path, tag):
    if not Path(path).is_file():
        raise UsageError(f"file not found: {path}")
    return datagen.load_csv(path, tag)


def cmd_simulate(args):
    seed = getattr(args, "seed", 0)
    scale = 1.0 if args.full else args.scale
    n, m = (max(2, int(round(s * scale))) for s in experiment.FULL_SIZE)
    seed_a, seed_b = datagen.seed_populations()
    model = datagen.fit_outcome_model(seed_a, seed_b, args.phi, seed=0)
    data = datagen.build_semisynthetic(model, args.theta, n, m, args.noise, seed)
    out = _out(args)
    datagen.write_csv(out / "historical.csv", data.historical)
    datagen.write_csv(out / "deployment.csv", data.deployment, purpose="simulate-export")
    with open(out / "due_dates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "due_date"])
        w.writerows(enumerate(data.due_dates.tolist()))
    model.save(out / "outcome_model.json")
    print(f"wrote {n} historical and {m} deployment orders to {out}")


def cmd_diagnose(args):
    a = _load_dataset(args.historical, "A")
    b = _load_dataset(args.deployment, "B")
    report = diagnostics.adversarial_validation(a.features, b.features, args.folds,
                                                getattr(args, "seed", 0), args.repeats,
                                                feature_names=a.feature_names)
    out = _out(args)
    diagnostics.write_report(report, out)
    print(report.to_text(), end="")
    if a.has_labels and b.has_labels:
        res = diagnostics.welch_t_test(a.labels, b.reveal_labels("diagnose"))
        print(f"welch: t={res.t:.4f} dof={res.dof:.1f} p={res.p_value:.3g}")


def cmd_train(args):
    try:
        params = json.loads(args.params)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--params is not valid JSON: {exc}") from None
    a = _load_dataset(args.historical, "A")
    if not a.has_labels:
        raise UsageError("historical data needs a throughput_days column")
    seed = getattr(args, "seed", 0)
    if args.method == "elastic_net":
        model = ElasticNetRegressor(**params).fit(a.features, a.labels)
    elif args.method == "dnn":
        model = DNNRegressor(**{"random_state": seed, **params}).fit(a.features, a.labels)
    else:
        if not args.deployment:
            raise UsageError("wdgrl needs --deployment")
        b = _load_dataset(args.deployment, "B")
        model = WDGRLRegressor(**{"random_state": seed, **params}).fit(a.features, a.labels,
                                                                         b.features)
    path = _out(args) / f"{args.method}.json"
    save_checkpoint(model, path)
    print(f"checkpoint written to {path}")


def cmd_predict(args):
    if not Path(args.model).is_file():
        raise UsageError(f"file not found: {args.model}")
    model = load_checkpoint(args.model)
    data = _load_dataset(args.data, "B")
    pred = model.predict(data.features)
    path = _out(args) / "predictions.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "predicted"])
        for k, v in enumerate(pred):
            w.writerow([k, repr(float(v))])
    print(f"mean prediction {np.mean(pred):.3f} days; written to {path}")


def cmd_schedule(args):
    if not Path(args.instance).is_file():
        raise UsageError(f"file not found: {args.instance}")
    inst = SchedulingInstance.load(args.instance)
    limits = {"node_cap": args.node_cap, "time_cap": args.time_cap}
    sched = oracle_schedule(inst, **limits) if args.oracle else solve_branch_and_bound(inst,
                                                                                       **limits)
    out = _out(args)
    sched.write_csv(out / "schedule.csv")
    (out / "schedule.json").write_text(json.dumps(sched.to_dict(), indent=2))
    print(f"objective: {sched.objective!r}")
    print(f"optimal: {str(sched.optimal).lower()}")
    if inst.realized is not None:
        cost = realized_cost(sched.start_slot, inst.realized, inst.due_dates, inst.c_early,
                             inst.c_tardy)
        print(f"realized_cost: {cost!r}")


def cmd_experiment(args):
    cfg_path = getattr(args, "config", None)
    cfg = experiment.ExperimentConfig.load(cfg_path) if cfg_path else experiment.ExperimentConfig()
    if args.full:
        cfg.scale = 1.0
    out = _out(args)
    cfg.dump(out / "config.yaml")
    result = experiment.run_experiment(
        cfg, progress=lambda s, t: logging.info("finished seed %s theta %s", s, t))
    for path in experiment.write_outputs(result, out):
        print(path)


def cmd_report(args):
    if not Path(args.records).is_file():
        raise UsageError(f"file not found: {args.records}")
    records = experiment.read_records(args.records)
    out = _out(args)
    variants = list(dict.fromkeys(r.variant for r in records))
    for v in variants:
        table = experiment.aggregate(records, v)
        experiment.emit_report(table, out)
        print(experiment.format_report(table, "markdown"), end="")


COMMANDS = {"simulate": cmd_simulate, "diagnose": cmd_diagnose, "train": cmd_train,
            "predict": cmd_predict, "schedule": cmd_schedule, "experiment": cmd_experiment,
            "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except experiment.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 2
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
