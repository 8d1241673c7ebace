"""Accuracy evaluation and the adaptive unlearning score."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import data, nn


@dataclass(frozen=True)
class AccuracyVector:
    """Accuracies needed to score one run; all values are fractions in [0, 1].

    Fields the active scenario does not use stay None: class removal fills
    test_retain/test_forget, homogeneous removal fills test. original_test
    is the untouched model's reference accuracy on the matching test side.
    """

    train_retain: float
    train_forget: float
    original_test: float
    test_retain: float | None = None
    test_forget: float | None = None
    test: float | None = None


@dataclass(frozen=True)
class AusScore:
    value: float
    delta: float
    scenario: str


def accuracy(model, dataset):
    """Fraction of rows whose argmax logit matches the label.

    Argmax ties resolve to the lowest class index.
    """
    if len(dataset) == 0:
        raise ValueError("cannot score an empty dataset")
    _, logits = nn.forward(model, dataset.features)
    return float((np.argmax(logits, axis=1) == dataset.labels).mean())


def aus(acc, scenario):
    """Adaptive unlearning score: (1 - (original_test - test)) / (1 + delta).

    Delta is the residual forget accuracy for class removal (measured on the
    forgotten test samples) and |test - forget| for homogeneous removal, so
    1.0 means accuracy fully kept and the forget target exactly met. Values
    above 1 are possible when the unlearned model beats the original on the
    test side.
    """
    if scenario == data.CLASS_REMOVAL:
        if acc.test_retain is None or acc.test_forget is None:
            raise ValueError("class-removal scoring needs test_retain and test_forget")
        test_acc = acc.test_retain
        delta = abs(acc.test_forget)
    elif scenario == data.HOMOGENEOUS_REMOVAL:
        if acc.test is None:
            raise ValueError("homogeneous-removal scoring needs the test accuracy")
        test_acc = acc.test
        delta = abs(acc.test - acc.train_forget)
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    value = (1.0 - (acc.original_test - test_acc)) / (1.0 + delta)
    return AusScore(float(value), float(delta), scenario)


def _numeric_fields(record):
    if dataclasses.is_dataclass(record):
        record = dataclasses.asdict(record)
    out = {}
    for key, value in dict(record).items():
        if isinstance(value, bool) or value is None:
            continue
        if isinstance(value, (int, float)):
            out[key] = float(value)
    return out


def aggregate_runs(records):
    """Field-wise mean and sample (n-1) standard deviation over runs.

    Accepts dataclass instances or mappings; only numeric fields present in
    every record are aggregated. Returns (means, stds) with stds None when
    there is a single run.
    """
    records = list(records)
    if not records:
        raise ValueError("no runs to aggregate")
    dicts = [_numeric_fields(r) for r in records]
    keys = set(dicts[0])
    for d in dicts[1:]:
        keys &= set(d)
    means = {k: float(np.mean([d[k] for d in dicts])) for k in sorted(keys)}
    if len(dicts) < 2:
        return means, None
    stds = {k: float(np.std([d[k] for d in dicts], ddof=1)) for k in sorted(keys)}
    return means, stds
