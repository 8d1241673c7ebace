"""Command-line front end.

Subcommands: train (fit and cache the original model), unlearn (one run of
the configured method), evaluate (score a stored model on the configured
split), mia (membership attack against a stored model), experiment (full
multi-run protocol with a written report). Flags override the matching
config keys.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import config as config_mod
from . import data, harness, metrics, mia, modelio


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="unlearnlab",
        description="Desk-scale machine unlearning experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_file=False):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, help="override: run this single seed")
        if model_file:
            p.add_argument("--model-file", help="stored model to load (default: original)")

    p_train = sub.add_parser("train", help="train and cache the original model")
    common(p_train)
    p_train.add_argument("--out", help="also save the model to this path")

    p_unlearn = sub.add_parser("unlearn", help="run one unlearning pass")
    common(p_unlearn)
    p_unlearn.add_argument("--method", choices=config_mod.METHOD_NAMES)
    p_unlearn.add_argument("--out", help="save the unlearned model to this path")

    p_eval = sub.add_parser("evaluate", help="score a stored model on the split")
    common(p_eval, model_file=True)

    p_mia = sub.add_parser("mia", help="membership inference attack on a model")
    common(p_mia, model_file=True)

    p_exp = sub.add_parser("experiment", help="full multi-run protocol")
    common(p_exp)
    p_exp.add_argument("--method", choices=config_mod.METHOD_NAMES)
    p_exp.add_argument("--format", choices=config_mod.REPORT_FORMATS)
    p_exp.add_argument("--out", help="report path (overrides [run] output)")
    return parser


def _load_config(args):
    cfg = config_mod.parse_config(args.config)
    if getattr(args, "method", None):
        cfg = dataclasses.replace(
            cfg, method=dataclasses.replace(cfg.method, name=args.method)
        )
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(
            cfg, run=dataclasses.replace(cfg.run, seeds=(args.seed,), protocol=False)
        )
    if getattr(args, "format", None):
        cfg = dataclasses.replace(
            cfg, run=dataclasses.replace(cfg.run, format=args.format)
        )
    if getattr(args, "out", None) and args.command == "experiment":
        cfg = dataclasses.replace(
            cfg, run=dataclasses.replace(cfg.run, output=args.out)
        )
    return cfg


def _first_plan_entry(cfg, train_set):
    plan = harness.plan_runs(cfg, train_set)
    return plan[0]


def _print_accuracies(acc, score):
    print(f"  train retain accuracy : {acc.train_retain:.4f}")
    print(f"  train forget accuracy : {acc.train_forget:.4f}")
    if acc.test_retain is not None:
        print(f"  test retain accuracy  : {acc.test_retain:.4f}")
        print(f"  test forget accuracy  : {acc.test_forget:.4f}")
    if acc.test is not None:
        print(f"  test accuracy         : {acc.test:.4f}")
    print(f"  original test accuracy: {acc.original_test:.4f}")
    print(f"  unlearning score      : {score.value:.4f} (delta {score.delta:.4f})")


def _cmd_train(args):
    cfg = _load_config(args)
    train_set, test_set = harness.build_datasets(cfg.dataset)
    model = harness.original_model(cfg, train_set)
    if args.out:
        modelio.save_model(model, args.out)
        print(f"model saved to {args.out}")
    print(f"train accuracy: {metrics.accuracy(model, train_set):.4f}")
    print(f"test accuracy : {metrics.accuracy(model, test_set):.4f}")
    return 0


def _cmd_unlearn(args):
    cfg = _load_config(args)
    train_set, test_set = harness.build_datasets(cfg.dataset)
    original = harness.original_model(cfg, train_set)
    seed, forget_spec = _first_plan_entry(cfg, train_set)
    record = harness.execute_run(cfg, original, train_set, test_set, 0, seed, forget_spec)
    if record.status != "ok":
        print(f"run failed: {record.error}", file=sys.stderr)
        return 1
    print(f"method {cfg.method.name}, seed {seed}, epochs {record.epochs_run}, "
          f"converged {record.converged}")
    _print_accuracies(record.accuracies, record.aus)
    if record.mia is not None:
        print(f"  attack mean F1        : {record.mia.mean_f1:.4f}")
    if args.out:
        split = harness.build_split(cfg, train_set, test_set, seed, forget_spec)
        target = harness.resolve_forget_target(
            cfg, original,
            split.test if cfg.scenario.kind == data.HOMOGENEOUS_REMOVAL else split.retain_test,
        )
        model, _, _, _ = harness._apply_method(cfg, original, split, seed, target)
        modelio.save_model(model, args.out)
        print(f"unlearned model saved to {args.out}")
    return 0


def _cmd_evaluate(args):
    cfg = _load_config(args)
    train_set, test_set = harness.build_datasets(cfg.dataset)
    original = harness.original_model(cfg, train_set)
    model = modelio.load_model(args.model_file) if args.model_file else original
    seed, forget_spec = _first_plan_entry(cfg, train_set)
    split = harness.build_split(cfg, train_set, test_set, seed, forget_spec)
    acc, score = harness._score_run(cfg, original, model, split)
    print(f"scenario {cfg.scenario.kind}, seed {seed}")
    _print_accuracies(acc, score)
    return 0


def _cmd_mia(args):
    cfg = _load_config(args)
    if cfg.scenario.kind != data.HOMOGENEOUS_REMOVAL:
        print("the attack needs a homogeneous_removal config", file=sys.stderr)
        return 2
    train_set, test_set = harness.build_datasets(cfg.dataset)
    original = harness.original_model(cfg, train_set)
    model = modelio.load_model(args.model_file) if args.model_file else original
    seed, fraction = _first_plan_entry(cfg, train_set)
    split = harness.build_split(cfg, train_set, test_set, seed, fraction)
    result = mia.run_mia(model, split.forget_train, split.test)
    for i, (f1, pair) in enumerate(zip(result.per_run_f1, result.chosen_hyperparameters)):
        print(f"  run {i}: F1 {f1:.4f} (C={pair[0]}, gamma={pair[1]})")
    print(f"mean F1: {result.mean_f1:.4f}")
    return 0


def _cmd_experiment(args):
    cfg = _load_config(args)
    report = harness.run_experiment(cfg)
    path = harness.emit_report(report, cfg.run.format, cfg.run.output)
    ok = [r for r in report.runs if r.status == "ok"]
    print(f"{len(ok)}/{len(report.runs)} runs succeeded; report written to {path}")
    if report.aggregate_mean:
        score = report.aggregate_mean.get("aus")
        if score is not None:
            print(f"mean unlearning score: {score:.4f}")
        f1 = report.aggregate_mean.get("mia_mean_f1")
        if f1 is not None:
            print(f"mean attack F1      : {f1:.4f}")
    return 0 if ok else 1


_COMMANDS = {
    "train": _cmd_train,
    "unlearn": _cmd_unlearn,
    "evaluate": _cmd_evaluate,
    "mia": _cmd_mia,
    "experiment": _cmd_experiment,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (config_mod.ConfigError, modelio.ModelFileError, data.DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
