"""Centroid-matching unlearning.

The method pulls forget-sample embeddings toward the nearest wrong-class
centroid (cosine distance) while cross-entropy on retain batches holds the
rest of the network in place. Class centroids are computed once from the
retain set before the loop starts; the per-sample matching is redone at
every inner step because the backbone keeps moving. The loop stops at the
first epoch boundary where forget accuracy drops below its target.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import data, metrics, nn
from .nn import NORM_FLOOR


@dataclass(frozen=True)
class UnlearnConfig:
    """Hyperparameters for one unlearning run.

    batch_ratio is the number of retain batches consumed per forget batch;
    target_forget_accuracy is the stopping threshold for the forget-set
    accuracy (strictly below halts). Setting exactly one of the loss weights
    to zero yields the corresponding ablation arm.
    """

    scenario: str
    target_forget_accuracy: float
    lambda_forget: float = 1.5
    lambda_retain: float = 1.5
    batch_ratio: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 64
    temperature: float = 2.0
    max_epochs: int = 100
    weight_decay: float = 5e-4

    def __post_init__(self):
        if self.scenario not in data.SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if not 0.0 <= self.target_forget_accuracy <= 1.0:
            raise ValueError("target_forget_accuracy must be in [0, 1]")
        if self.lambda_forget < 0 or self.lambda_retain < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_forget + self.lambda_retain <= 0:
            raise ValueError("at least one loss weight must be positive")
        if self.batch_ratio < 1:
            raise ValueError("batch_ratio must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")


@dataclass(frozen=True, eq=False)
class Centroids:
    """Per-class mean embeddings; a zero count marks an absent class row."""

    vectors: np.ndarray
    counts: np.ndarray

    @property
    def present(self):
        return self.counts > 0

    @property
    def num_present(self):
        return int(np.count_nonzero(self.counts))


@dataclass(eq=False)
class UnlearnResult:
    model: nn.Model
    epochs_run: int
    final_forget_accuracy: float
    forget_loss_trace: list
    retain_loss_trace: list
    wall_time_seconds: float
    converged: bool
    flags: tuple = ()


def cosine_distance(u, v):
    """1 - cosine similarity, in [0, 2].

    Norms are floored at 1e-12, so a zero vector yields a large-but-finite
    value instead of NaN.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = max(float(np.linalg.norm(u)), NORM_FLOOR)
    nv = max(float(np.linalg.norm(v)), NORM_FLOOR)
    return float(1.0 - float(u @ v) / (nu * nv))


def compute_centroids(model, retain, num_classes, allowed_absent=frozenset(), chunk=512):
    """Mean backbone embedding per class over the retain set.

    Classes in allowed_absent may have no retain samples (their rows stay
    zero with a zero count); any other empty class is a data error.
    """
    sums = np.zeros((num_classes, model.embedding_dim))
    counts = np.zeros(num_classes, dtype=np.int64)
    for start in range(0, len(retain), chunk):
        labels = retain.labels[start : start + chunk]
        emb, _ = nn.forward(model, retain.features[start : start + chunk])
        np.add.at(sums, labels, emb)
        counts += np.bincount(labels, minlength=num_classes)
    missing = [c for c in range(num_classes) if counts[c] == 0 and c not in allowed_absent]
    if missing:
        raise ValueError(f"no retain samples for classes {missing}")
    vectors = np.zeros_like(sums)
    nonzero = counts > 0
    vectors[nonzero] = sums[nonzero] / counts[nonzero, None]
    return Centroids(vectors, counts)


def closest_centroid(embedding, true_label, centroids):
    """Index and vector of the nearest-by-cosine centroid of a wrong class.

    Absent rows and the true label's own class are excluded; ties resolve to
    the lowest class index.
    """
    if centroids.num_present < 2:
        raise ValueError("need at least two present centroids")
    emb = np.asarray(embedding, dtype=np.float64)
    distances = np.array(
        [cosine_distance(emb, c) for c in centroids.vectors], dtype=np.float64
    )
    distances[~centroids.present] = np.inf
    distances[int(true_label)] = np.inf
    j = int(np.argmin(distances))
    return j, centroids.vectors[j].copy()


def match_closest_centroids(embeddings, labels, centroids):
    """Vectorized closest-wrong-centroid matching for a batch.

    Returns (indices, target vectors), one row per embedding.
    """
    if centroids.num_present < 2:
        raise ValueError("need at least two present centroids")
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    e_norm = np.maximum(np.linalg.norm(emb, axis=1), NORM_FLOOR)
    c_norm = np.maximum(np.linalg.norm(centroids.vectors, axis=1), NORM_FLOOR)
    distances = 1.0 - (emb @ centroids.vectors.T) / np.outer(e_norm, c_norm)
    distances[:, ~centroids.present] = np.inf
    distances[np.arange(emb.shape[0]), labels] = np.inf
    idx = np.argmin(distances, axis=1)
    return idx, centroids.vectors[idx]


def forget_loss(embeddings, matched):
    """Mean cosine distance between embeddings and their matched centroids."""
    emb = np.asarray(embeddings, dtype=np.float64)
    targets = np.asarray(matched, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise ValueError("empty batch")
    if targets.shape != emb.shape:
        raise ValueError("one matched centroid per embedding is required")
    e_norm = np.maximum(np.linalg.norm(emb, axis=1), NORM_FLOOR)
    t_norm = np.maximum(np.linalg.norm(targets, axis=1), NORM_FLOOR)
    cosine = (emb * targets).sum(axis=1) / (e_norm * t_norm)
    return float((1.0 - cosine).mean())


def retain_loss(model, inputs, labels, temperature):
    """Temperature-scaled cross-entropy of the full network on a batch."""
    _, logits = nn.forward(model, inputs)
    return nn.cross_entropy(nn.softmax_with_temperature(logits, temperature), labels)


def _step_spec(model, forget_batch, retain_batch, centroids, config):
    forget_spec = None
    if config.lambda_forget != 0.0:
        fx, fy = forget_batch
        emb, _ = nn.forward(model, fx)
        _, targets = match_closest_centroids(emb, fy, centroids)
        forget_spec = nn.ForgetCosine(fx, targets)
    retain_spec = None
    if config.lambda_retain != 0.0:
        rx, ry = retain_batch
        retain_spec = nn.RetainCrossEntropy(rx, ry, config.temperature)
    return nn.CombinedLoss(
        forget_spec, retain_spec, config.lambda_forget, config.lambda_retain
    )


def combined_loss(model, forget_batch, retain_batch, centroids, config):
    """Weighted unlearning loss and its gradients for one step.

    Batches are (features, labels) pairs. Matching of forget embeddings to
    wrong-class centroids happens here, under the model's current backbone;
    head parameters only receive gradient from the retain term.
    """
    spec = _step_spec(model, forget_batch, retain_batch, centroids, config)
    total, grads, _, _ = nn.combined_gradients(model, spec)
    return total, grads


class _CyclicBatches:
    """Endless full-size minibatch stream over a dataset, reshuffled per pass."""

    def __init__(self, dataset, batch_size, rng):
        self._features = dataset.features
        self._labels = dataset.labels
        self._size = min(int(batch_size), len(dataset))
        self._rng = rng
        self._order = rng.permutation(len(dataset))
        self._pos = 0

    def next_batch(self):
        if self._pos + self._size > self._order.shape[0]:
            self._order = self._rng.permutation(self._order.shape[0])
            self._pos = 0
        idx = self._order[self._pos : self._pos + self._size]
        self._pos += self._size
        return self._features[idx], self._labels[idx]


def _spawn_rngs(seed):
    children = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(children[0]), np.random.default_rng(children[1])


def unlearn(model, split, config, seed):
    """Run the unlearning loop on a copy of the model.

    Centroids come from the retain set under the initial backbone and are
    never recomputed. Each epoch walks the shuffled forget batches; every
    forget batch drives batch_ratio optimizer steps, each pairing it with
    the next batch from an independently shuffled cyclic retain stream.
    Forget accuracy is evaluated at epoch boundaries; the run converges when
    it falls below the target and is flagged not_converged if max_epochs is
    exhausted first. Deterministic per seed.
    """
    if split.scenario != config.scenario:
        raise ValueError(
            f"split scenario {split.scenario!r} != config scenario {config.scenario!r}"
        )
    started = time.perf_counter()
    work = model.copy()
    forget = split.forget_train
    retain = split.retain_train

    centroids = None
    if config.lambda_forget != 0.0:
        allowed = frozenset()
        if split.scenario == data.CLASS_REMOVAL and split.forget_classes:
            allowed = split.forget_classes
        centroids = compute_centroids(work, retain, work.num_classes, allowed)

    forget_rng, retain_rng = _spawn_rngs(seed)
    retain_stream = _CyclicBatches(retain, config.batch_size, retain_rng)
    state = nn.AdamState.for_model(
        work, config.learning_rate, weight_decay=config.weight_decay
    )

    forget_trace, retain_trace = [], []
    epochs = 0
    forget_accuracy = metrics.accuracy(work, forget)
    converged = forget_accuracy < config.target_forget_accuracy
    while not converged and epochs < config.max_epochs:
        forget_sum = retain_sum = 0.0
        steps = 0
        order = forget_rng.permutation(len(forget))
        for start in range(0, len(forget), config.batch_size):
            idx = order[start : start + config.batch_size]
            forget_batch = (forget.features[idx], forget.labels[idx])
            for _ in range(config.batch_ratio):
                retain_batch = retain_stream.next_batch()
                spec = _step_spec(work, forget_batch, retain_batch, centroids, config)
                _, grads, part_f, part_r = nn.combined_gradients(work, spec)
                nn.adam_step(work, grads, state)
                forget_sum += part_f
                retain_sum += part_r
                steps += 1
        epochs += 1
        forget_trace.append(forget_sum / steps)
        retain_trace.append(retain_sum / steps)
        forget_accuracy = metrics.accuracy(work, forget)
        converged = forget_accuracy < config.target_forget_accuracy

    elapsed = time.perf_counter() - started
    flags = () if converged else ("not_converged",)
    return UnlearnResult(
        model=work,
        epochs_run=epochs,
        final_forget_accuracy=forget_accuracy,
        forget_loss_trace=forget_trace,
        retain_loss_trace=retain_trace,
        wall_time_seconds=elapsed,
        converged=converged,
        flags=flags,
    )
