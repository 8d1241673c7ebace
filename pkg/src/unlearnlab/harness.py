"""Experiment orchestration: build data, obtain the original model, run the
chosen unlearning method over the planned seeds, score every run, and emit
an aggregate report."""

from __future__ import annotations

import concurrent.futures
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines, config as config_mod, data, engine, metrics, mia, modelio, nn

__version__ = "0.1.0"

log = logging.getLogger("unlearnlab")

CSV_HEADER = (
    "index,seed,forget_classes,forget_fraction,status,train_retain,train_forget,"
    "test_retain,test_forget,test,original_test,aus,aus_delta,mia_mean_f1,"
    "epochs_run,converged,wall_time_seconds"
)


@dataclass(eq=False)
class RunRecord:
    index: int
    seed: int
    forget_classes: tuple | None
    forget_fraction: float | None
    status: str
    flags: tuple = ()
    accuracies: metrics.AccuracyVector | None = None
    aus: metrics.AusScore | None = None
    mia: mia.MiaResult | None = None
    epochs_run: int | None = None
    converged: bool | None = None
    wall_time_seconds: float = 0.0
    error: str | None = None


@dataclass(eq=False)
class ExperimentReport:
    version: str
    scenario: str
    method: str
    config_echo: str
    runs: list
    aggregate_mean: dict | None
    aggregate_std: dict | None


def build_datasets(spec):
    """Train/test pair for a dataset spec."""
    if spec.kind == "blobs":
        return data.gen_blobs_train_test(
            spec.classes, spec.dim, spec.per_class, spec.test_per_class,
            spec.spread, spec.seed,
        )
    if spec.kind == "idx":
        train = data.load_idx(spec.train_images, spec.train_labels, name="idx-train")
        test = data.load_idx(spec.test_images, spec.test_labels, name="idx-test")
        return train, test
    if spec.kind == "cifar10":
        train = data.load_cifar_binary(spec.train_files, name="cifar10-train")
        test = data.load_cifar_binary(spec.test_files, name="cifar10-test")
        return train, test
    raise ValueError(f"unknown dataset kind {spec.kind!r}")


def plan_runs(config, train_set):
    """(seed, forget spec) pairs for the experiment.

    With protocol = true the standard multi-run protocol drives seeds and
    forget specs; otherwise every configured seed reuses the scenario's
    explicit forget classes or fraction.
    """
    scenario = config.scenario
    if config.run.protocol:
        if scenario.kind == data.CLASS_REMOVAL:
            return data.seed_protocol(scenario.kind, num_classes=train_set.num_classes)
        return data.seed_protocol(scenario.kind, fraction=scenario.fraction)
    if scenario.kind == data.CLASS_REMOVAL:
        spec = frozenset(scenario.forget_classes)
        return [(seed, spec) for seed in config.run.seeds]
    return [(seed, scenario.fraction) for seed in config.run.seeds]


def build_split(config, train_set, test_set, seed, forget_spec):
    if config.scenario.kind == data.CLASS_REMOVAL:
        return data.split_cr(train_set, test_set, forget_spec)
    return data.split_hr(train_set, test_set, forget_spec, seed)


def original_model(config, train_set, use_cache=True):
    """Train the original model once per (dataset, architecture, training)
    combination; later calls load the cached file. Corrupt or stale cache
    files are detected and trigger a retrain with a warning."""
    model_spec = config.model
    builder = lambda: nn.train(
        nn.init_model(
            train_set.features.shape[1],
            model_spec.hidden,
            model_spec.embedding_dim,
            train_set.num_classes,
            model_spec.init_seed,
        ),
        train_set,
        nn.TrainConfig(
            config.train.epochs,
            config.train.learning_rate,
            config.train.batch_size,
            config.train.weight_decay,
        ),
        config.train.seed,
    )
    if not use_cache:
        return builder()
    cache_dir = Path(config.run.cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = modelio.cache_key(config.dataset, model_spec, config.train)
    path = cache_dir / f"original-{key}.ulmc"
    if path.exists():
        try:
            return modelio.load_model(path)
        except modelio.ModelFileError as exc:
            log.warning("cache file %s unusable (%s); retraining", path, exc)
    model = builder()
    modelio.save_model(model, path)
    return model


def resolve_forget_target(config, original, test_set):
    """Stop threshold for the forget accuracy.

    Explicit config value wins; otherwise class removal targets 1% and
    homogeneous removal targets the original model's test accuracy.
    """
    if config.method.target_forget_accuracy is not None:
        return config.method.target_forget_accuracy
    if config.scenario.kind == data.CLASS_REMOVAL:
        return 0.01
    return metrics.accuracy(original, test_set)


def _unlearn_config(config, target):
    m = config.method
    return engine.UnlearnConfig(
        scenario=config.scenario.kind,
        target_forget_accuracy=target,
        lambda_forget=0.0 if m.disable_forget_loss else m.lambda_forget,
        lambda_retain=0.0 if m.disable_retain_loss else m.lambda_retain,
        batch_ratio=m.batch_ratio,
        learning_rate=m.learning_rate,
        batch_size=m.batch_size,
        temperature=m.temperature,
        max_epochs=m.max_epochs,
        weight_decay=m.weight_decay,
    )


def _apply_method(config, original, split, seed, target):
    """Run the configured method; returns (model, epochs, converged, flags)."""
    m = config.method
    if m.name == "centroid_match":
        result = engine.unlearn(original, split, _unlearn_config(config, target), seed)
        return result.model, result.epochs_run, result.converged, result.flags
    if m.name == "retrain":
        train_cfg = nn.TrainConfig(m.epochs, m.learning_rate, m.batch_size, m.weight_decay)
        model = baselines.retrain_oracle(
            split, config.model.hidden, config.model.embedding_dim, train_cfg, seed
        )
        flags = ("degenerate_zero_epochs",) if m.epochs == 0 else ()
        return model, m.epochs, True, flags
    if m.name == "finetune":
        model = baselines.finetune(
            original, split, m.epochs, m.learning_rate, seed,
            batch_size=m.batch_size, weight_decay=m.weight_decay,
        )
        flags = ("degenerate_zero_epochs",) if m.epochs == 0 else ()
        return model, m.epochs, True, flags
    if m.name in ("neg_grad", "rand_label"):
        base_cfg = baselines.BaselineConfig(
            method=m.name,
            target_forget_accuracy=target,
            learning_rate=m.learning_rate,
            batch_size=m.batch_size,
            weight_decay=m.weight_decay,
            max_epochs=m.max_epochs,
        )
        runner = baselines.negative_gradient if m.name == "neg_grad" else baselines.random_label
        result = runner(original, split, base_cfg, seed)
        return result.model, result.epochs_run, result.converged, result.flags
    raise ValueError(f"unknown method {m.name!r}")


def _round6(x):
    return round(float(x), 6)


def _score_run(config, original, model, split):
    if config.scenario.kind == data.CLASS_REMOVAL:
        acc = metrics.AccuracyVector(
            train_retain=_round6(metrics.accuracy(model, split.retain_train)),
            train_forget=_round6(metrics.accuracy(model, split.forget_train)),
            original_test=_round6(metrics.accuracy(original, split.retain_test)),
            test_retain=_round6(metrics.accuracy(model, split.retain_test)),
            test_forget=_round6(metrics.accuracy(model, split.forget_test)),
        )
    else:
        acc = metrics.AccuracyVector(
            train_retain=_round6(metrics.accuracy(model, split.retain_train)),
            train_forget=_round6(metrics.accuracy(model, split.forget_train)),
            original_test=_round6(metrics.accuracy(original, split.test)),
            test=_round6(metrics.accuracy(model, split.test)),
        )
    return acc, metrics.aus(acc, config.scenario.kind)


def execute_run(config, original, train_set, test_set, index, seed, forget_spec):
    """One full run: split, method, scoring, and (homogeneous only) the MIA."""
    started = time.perf_counter()
    try:
        split = build_split(config, train_set, test_set, seed, forget_spec)
        reference_test = split.test if config.scenario.kind == data.HOMOGENEOUS_REMOVAL else split.retain_test
        target = resolve_forget_target(config, original, reference_test)
        model, epochs_run, converged, flags = _apply_method(
            config, original, split, seed, target
        )
        acc, score = _score_run(config, original, model, split)
        attack = None
        if config.scenario.kind == data.HOMOGENEOUS_REMOVAL and config.run.mia != "off":
            attack = mia.run_mia(model, split.forget_train, split.test)
        return RunRecord(
            index=index,
            seed=seed,
            forget_classes=(
                tuple(sorted(forget_spec))
                if config.scenario.kind == data.CLASS_REMOVAL
                else None
            ),
            forget_fraction=(
                float(forget_spec)
                if config.scenario.kind == data.HOMOGENEOUS_REMOVAL
                else None
            ),
            status="ok",
            flags=tuple(flags),
            accuracies=acc,
            aus=score,
            mia=attack,
            epochs_run=epochs_run,
            converged=converged,
            wall_time_seconds=time.perf_counter() - started,
        )
    except Exception as exc:  # noqa: BLE001 - a failed run is data, not a crash
        log.warning("run %d (seed %d) failed: %s", index, seed, exc)
        return RunRecord(
            index=index,
            seed=seed,
            forget_classes=(
                tuple(sorted(forget_spec))
                if config.scenario.kind == data.CLASS_REMOVAL
                else None
            ),
            forget_fraction=(
                float(forget_spec)
                if config.scenario.kind == data.HOMOGENEOUS_REMOVAL
                else None
            ),
            status="failed",
            wall_time_seconds=time.perf_counter() - started,
            error=str(exc),
        )


def _run_metrics(record):
    fields = {
        "train_retain": record.accuracies.train_retain,
        "train_forget": record.accuracies.train_forget,
        "original_test": record.accuracies.original_test,
        "aus": record.aus.value,
        "aus_delta": record.aus.delta,
        "epochs_run": record.epochs_run,
    }
    for name in ("test_retain", "test_forget", "test"):
        value = getattr(record.accuracies, name)
        if value is not None:
            fields[name] = value
    if record.mia is not None:
        fields["mia_mean_f1"] = record.mia.mean_f1
    return fields


def _worker_run(config_text, index, seed, forget_spec):
    cfg = config_mod.parse_config_text(config_text)
    train_set, test_set = build_datasets(cfg.dataset)
    original = original_model(cfg, train_set)
    return execute_run(cfg, original, train_set, test_set, index, seed, forget_spec)


def run_experiment(config):
    """Execute every planned run and assemble the report.

    Failed runs stay in the report but are excluded from the aggregates.
    With parallel > 1 runs execute in separate processes (the original model
    is cached up front); report order always follows the plan.
    """
    train_set, test_set = build_datasets(config.dataset)
    original = original_model(config, train_set)
    plan = plan_runs(config, train_set)
    echo = config_mod.config_to_text(config)
    if config.run.parallel > 1 and len(plan) > 1:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=min(config.run.parallel, len(plan))
        ) as pool:
            futures = [
                pool.submit(_worker_run, echo, index, seed, spec)
                for index, (seed, spec) in enumerate(plan)
            ]
            records = [f.result() for f in futures]
    else:
        records = [
            execute_run(config, original, train_set, test_set, index, seed, spec)
            for index, (seed, spec) in enumerate(plan)
        ]
    scored = [r for r in records if r.status == "ok"]
    mean = std = None
    if scored:
        mean, std = metrics.aggregate_runs([_run_metrics(r) for r in scored])
    return ExperimentReport(
        version=__version__,
        scenario=config.scenario.kind,
        method=config.method.name,
        config_echo=echo,
        runs=records,
        aggregate_mean=mean,
        aggregate_std=std,
    )


def _record_dict(record):
    out = {
        "index": record.index,
        "seed": record.seed,
        "forget_classes": list(record.forget_classes) if record.forget_classes else None,
        "forget_fraction": record.forget_fraction,
        "status": record.status,
        "flags": list(record.flags),
        "accuracies": None,
        "aus": None,
        "mia": None,
        "epochs_run": record.epochs_run,
        "converged": record.converged,
        "wall_time_seconds": record.wall_time_seconds,
        "error": record.error,
    }
    if record.accuracies is not None:
        acc = record.accuracies
        out["accuracies"] = {
            "train_retain": acc.train_retain,
            "train_forget": acc.train_forget,
            "test_retain": acc.test_retain,
            "test_forget": acc.test_forget,
            "test": acc.test,
            "original_test": acc.original_test,
        }
    if record.aus is not None:
        out["aus"] = {"value": record.aus.value, "delta": record.aus.delta}
    if record.mia is not None:
        out["mia"] = {
            "mean_f1": record.mia.mean_f1,
            "per_run_f1": list(record.mia.per_run_f1),
            "chosen_hyperparameters": [list(pair) for pair in record.mia.chosen_hyperparameters],
        }
    return out


def report_to_json_dict(report):
    return {
        "toolkit": "unlearnlab",
        "version": report.version,
        "scenario": report.scenario,
        "method": report.method,
        "config_echo": report.config_echo,
        "runs": [_record_dict(r) for r in report.runs],
        "aggregate_mean": report.aggregate_mean,
        "aggregate_std": report.aggregate_std,
    }


def _csv_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_to_csv_text(report):
    """One row per run plus mean and std aggregate rows."""
    rows = [CSV_HEADER]
    for r in report.runs:
        acc = r.accuracies
        rows.append(
            ",".join(
                _csv_value(v)
                for v in (
                    r.index,
                    r.seed,
                    ";".join(str(c) for c in r.forget_classes) if r.forget_classes else None,
                    r.forget_fraction,
                    r.status,
                    acc.train_retain if acc else None,
                    acc.train_forget if acc else None,
                    acc.test_retain if acc else None,
                    acc.test_forget if acc else None,
                    acc.test if acc else None,
                    acc.original_test if acc else None,
                    r.aus.value if r.aus else None,
                    r.aus.delta if r.aus else None,
                    r.mia.mean_f1 if r.mia else None,
                    r.epochs_run,
                    r.converged,
                    r.wall_time_seconds,
                )
            )
        )
    for label, block in (("mean", report.aggregate_mean), ("std", report.aggregate_std)):
        block = block or {}
        rows.append(
            ",".join(
                _csv_value(v)
                for v in (
                    label,
                    None,
                    None,
                    None,
                    None,
                    block.get("train_retain"),
                    block.get("train_forget"),
                    block.get("test_retain"),
                    block.get("test_forget"),
                    block.get("test"),
                    block.get("original_test"),
                    block.get("aus"),
                    block.get("aus_delta"),
                    block.get("mia_mean_f1"),
                    block.get("epochs_run"),
                    None,
                    None,
                )
            )
        )
    return "\n".join(rows) + "\n"


def emit_report(report, fmt, path):
    """Write the report as json or csv; reports must contain at least one run."""
    if fmt not in ("json", "csv"):
        raise ValueError(f"unknown report format {fmt!r}")
    if not report.runs:
        raise ValueError("report has no runs")
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path.write_text(json.dumps(report_to_json_dict(report), indent=2) + "\n")
    else:
        path.write_text(report_to_csv_text(report))
    return path
