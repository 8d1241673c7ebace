"""Reference unlearning methods: retrained oracle, retain-set fine-tuning,
negative gradient, and random-label fine-tuning.

The retrained and fine-tuned models run a fixed epoch budget and never see a
forget sample. Negative gradient and random label keep updating on the
forget set until the shared forget-accuracy stop rule fires, mirroring the
main engine's halting behaviour.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import metrics, nn
from .engine import UnlearnResult

METHODS = ("retrain", "finetune", "neg_grad", "rand_label")
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class BaselineConfig:
    """Settings for the stop-rule baselines (neg_grad, rand_label)."""

    method: str
    target_forget_accuracy: float
    learning_rate: float = 1e-3
    batch_size: int = 64
    weight_decay: float = 5e-4
    max_epochs: int = 100

    def __post_init__(self):
        if self.method not in ("neg_grad", "rand_label"):
            raise ValueError("BaselineConfig covers neg_grad and rand_label only")
        if not 0.0 <= self.target_forget_accuracy <= 1.0:
            raise ValueError("target_forget_accuracy must be in [0, 1]")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


def retrain_oracle(split, hidden, embedding_dim, train_config, seed):
    """Fresh model trained only on the retain set; never sees forget samples."""
    fresh = nn.init_model(
        split.retain_train.features.shape[1],
        hidden,
        embedding_dim,
        split.retain_train.num_classes,
        seed,
    )
    return nn.train(fresh, split.retain_train, train_config, seed)


def finetune(model, split, epochs, learning_rate, seed, batch_size=64, weight_decay=5e-4):
    """Continue training the given model on the retain set only."""
    config = nn.TrainConfig(epochs, learning_rate, batch_size, weight_decay)
    return nn.train(model, split.retain_train, config, seed)


def resample_labels(labels, num_classes, rng):
    """Uniform draw over the wrong classes for every row."""
    labels = np.asarray(labels, dtype=np.int64)
    r = rng.integers(0, num_classes - 1, size=labels.shape[0])
    return np.where(r >= labels, r + 1, r)


def _stop_rule_loop(model, split, config, seed, epoch_labels, negate):
    work = model.copy()
    forget = split.forget_train
    state = nn.AdamState.for_model(
        work, config.learning_rate, weight_decay=config.weight_decay
    )
    rng = np.random.default_rng(seed)
    started = time.perf_counter()
    trace = []
    epochs = 0
    diverged = False
    forget_accuracy = metrics.accuracy(work, forget)
    converged = forget_accuracy < config.target_forget_accuracy
    while not converged and not diverged and epochs < config.max_epochs:
        labels = epoch_labels(forget.labels, rng)
        order = rng.permutation(len(forget))
        loss_sum = 0.0
        steps = 0
        for start in range(0, len(forget), config.batch_size):
            idx = order[start : start + config.batch_size]
            spec = nn.RetainCrossEntropy(forget.features[idx], labels[idx], 1.0)
            loss, grads = nn.compute_gradients(work, spec)
            if negate:
                loss = -loss
                grads = [-g for g in grads]
            if abs(loss) > DIVERGENCE_LIMIT or not np.isfinite(loss):
                diverged = True
                break
            nn.adam_step(work, grads, state)
            loss_sum += loss
            steps += 1
        epochs += 1
        if steps:
            trace.append(loss_sum / steps)
        forget_accuracy = metrics.accuracy(work, forget)
        converged = forget_accuracy < config.target_forget_accuracy
    flags = []
    if diverged:
        flags.append("diverged")
    if not converged and not diverged:
        flags.append("not_converged")
    return UnlearnResult(
        model=work,
        epochs_run=epochs,
        final_forget_accuracy=forget_accuracy,
        forget_loss_trace=trace,
        retain_loss_trace=[],
        wall_time_seconds=time.perf_counter() - started,
        converged=converged,
        flags=tuple(flags),
    )


def negative_gradient(model, split, config, seed):
    """Ascend the forget-set cross-entropy until the stop rule fires.

    Every step applies the exact negation of the cross-entropy gradient; the
    run aborts with a diverged flag if the loss magnitude passes 1e6.
    """
    if config.method != "neg_grad":
        raise ValueError("config.method must be neg_grad")
    return _stop_rule_loop(
        model, split, config, seed, lambda labels, rng: labels, negate=True
    )


def random_label(model, split, config, seed):
    """Fine-tune on the forget set with labels resampled away from the truth.

    Labels are redrawn each epoch, uniformly over the wrong classes, so the
    update always pushes probability mass off the true class.
    """
    if config.method != "rand_label":
        raise ValueError("config.method must be rand_label")
    num_classes = model.num_classes

    def relabel(labels, rng):
        return resample_labels(labels, num_classes, rng)

    return _stop_rule_loop(model, split, config, seed, relabel, negate=False)
