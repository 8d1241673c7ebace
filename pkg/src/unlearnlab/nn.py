"""Dense feedforward classifiers with hand-derived gradients and Adam.

All math runs in float64 numpy. A model is a rectifier MLP backbone mapping
inputs to embeddings, plus a single affine head mapping embeddings to class
logits. Exactly three loss shapes are differentiated: temperature-scaled
softmax cross-entropy on logits, cosine alignment of embeddings against
fixed target vectors, and a weighted combination of the two. A gradient set
is a plain list of arrays, one per parameter tensor, in ``Model.parameters``
order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_FLOOR = 1e-12
NORM_FLOOR = 1e-12


def _matrix(x, name="array"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {a.shape}")
    return a


@dataclass(eq=False)
class Model:
    """Rectifier MLP backbone plus an affine classification head.

    ``backbone_weights[k]`` has shape (d_in, d_out); every backbone layer is
    followed by max(0, x). The head is affine with no nonlinearity, so the
    embedding is the output of the last backbone layer.
    """

    backbone_weights: list
    backbone_biases: list
    head_weight: np.ndarray
    head_bias: np.ndarray

    def __post_init__(self):
        if not self.backbone_weights:
            raise ValueError("backbone needs at least one layer")
        if len(self.backbone_weights) != len(self.backbone_biases):
            raise ValueError("backbone weight/bias count mismatch")
        d = self.backbone_weights[0].shape[0]
        for w, b in zip(self.backbone_weights, self.backbone_biases):
            if w.ndim != 2 or w.shape[0] != d or b.shape != (w.shape[1],):
                raise ValueError("inconsistent backbone layer shapes")
            d = w.shape[1]
        if self.head_weight.shape[0] != d:
            raise ValueError("head input does not match backbone output")
        if self.head_bias.shape != (self.head_weight.shape[1],):
            raise ValueError("head bias shape mismatch")

    @property
    def input_dim(self):
        return self.backbone_weights[0].shape[0]

    @property
    def embedding_dim(self):
        return self.head_weight.shape[0]

    @property
    def num_classes(self):
        return self.head_weight.shape[1]

    def parameters(self):
        """Parameter tensors in a fixed order: backbone (w, b) pairs, then head."""
        out = []
        for w, b in zip(self.backbone_weights, self.backbone_biases):
            out.extend((w, b))
        out.extend((self.head_weight, self.head_bias))
        return out

    def parameter_count(self):
        return int(sum(p.size for p in self.parameters()))

    def copy(self):
        return Model(
            [w.copy() for w in self.backbone_weights],
            [b.copy() for b in self.backbone_biases],
            self.head_weight.copy(),
            self.head_bias.copy(),
        )


def init_model(input_dim, hidden, embedding_dim, num_classes, seed):
    """Build a seeded model: Glorot-uniform weights, zero biases."""
    if input_dim < 1 or embedding_dim < 1 or num_classes < 2:
        raise ValueError("bad architecture sizes")
    rng = np.random.default_rng(seed)
    widths = [int(input_dim), *[int(h) for h in hidden], int(embedding_dim)]
    weights, biases = [], []
    for d_in, d_out in zip(widths, widths[1:]):
        bound = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    bound = np.sqrt(6.0 / (embedding_dim + num_classes))
    head_w = rng.uniform(-bound, bound, size=(int(embedding_dim), int(num_classes)))
    return Model(weights, biases, head_w, np.zeros(int(num_classes)))


def forward(model, batch):
    """Return (embeddings, logits) for a batch of input rows."""
    x = _matrix(batch, "batch")
    if x.shape[1] != model.input_dim:
        raise ValueError(
            f"batch has {x.shape[1]} columns, model expects {model.input_dim}"
        )
    for w, b in zip(model.backbone_weights, model.backbone_biases):
        x = np.maximum(x @ w + b, 0.0)
    logits = x @ model.head_weight + model.head_bias
    return x, logits


def _forward_trace(model, x):
    # activations[k] feeds backbone layer k; pre[k] is its pre-rectifier value
    activations = [x]
    pre = []
    a = x
    for w, b in zip(model.backbone_weights, model.backbone_biases):
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        activations.append(a)
    logits = a @ model.head_weight + model.head_bias
    return activations, pre, logits


def softmax_with_temperature(logits, temperature):
    """Row-wise softmax of logits / temperature, stabilized by max subtraction."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = _matrix(logits, "logits") / float(temperature)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(probs, labels):
    """Mean negative log-probability of the true class.

    Probabilities are floored at 1e-12 before the log so a confidently wrong
    row yields a large finite loss instead of infinity.
    """
    p = _matrix(probs, "probs")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (p.shape[0],):
        raise ValueError("labels must supply one class index per row")
    if y.size == 0:
        raise ValueError("empty batch")
    if y.min() < 0 or y.max() >= p.shape[1]:
        raise ValueError("label index out of range")
    picked = p[np.arange(y.size), y]
    return float(-np.log(np.maximum(picked, LOG_FLOOR)).mean())


@dataclass(frozen=True, eq=False)
class RetainCrossEntropy:
    """Temperature-scaled softmax cross-entropy on a labelled batch."""

    inputs: np.ndarray
    labels: np.ndarray
    temperature: float = 1.0


@dataclass(frozen=True, eq=False)
class ForgetCosine:
    """Mean cosine distance between embeddings and fixed target vectors.

    Targets are treated as constants: only the backbone receives gradient,
    head gradients are identically zero.
    """

    inputs: np.ndarray
    targets: np.ndarray


@dataclass(frozen=True, eq=False)
class CombinedLoss:
    forget: ForgetCosine | None
    retain: RetainCrossEntropy | None
    forget_weight: float = 1.0
    retain_weight: float = 1.0


def zero_gradients(model):
    """A gradient set of zeros, shape-congruent with the model parameters."""
    return [np.zeros_like(p) for p in model.parameters()]


def _backprop_into_backbone(model, activations, pre, d_embedding, grads):
    delta = d_embedding
    for k in range(len(model.backbone_weights) - 1, -1, -1):
        delta = np.where(pre[k] > 0.0, delta, 0.0)  # subgradient at 0 is 0
        grads[2 * k] += activations[k].T @ delta
        grads[2 * k + 1] += delta.sum(axis=0)
        if k:
            delta = delta @ model.backbone_weights[k].T


def _accumulate_retain(model, spec, grads, scale):
    x = _matrix(spec.inputs, "inputs")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    y = np.asarray(spec.labels, dtype=np.int64)
    activations, pre, logits = _forward_trace(model, x)
    probs = softmax_with_temperature(logits, spec.temperature)
    loss = cross_entropy(probs, y)
    n = x.shape[0]
    d_logits = probs.copy()
    d_logits[np.arange(n), y] -= 1.0
    d_logits *= scale / (n * spec.temperature)
    embedding = activations[-1]
    grads[-2] += embedding.T @ d_logits
    grads[-1] += d_logits.sum(axis=0)
    _backprop_into_backbone(
        model, activations, pre, d_logits @ model.head_weight.T, grads
    )
    return loss


def _accumulate_forget(model, spec, grads, scale):
    x = _matrix(spec.inputs, "inputs")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    targets = _matrix(spec.targets, "targets")
    if targets.shape != (x.shape[0], model.embedding_dim):
        raise ValueError("one target vector per row is required")
    activations, pre, _ = _forward_trace(model, x)
    emb = activations[-1]
    e_norm = np.maximum(np.linalg.norm(emb, axis=1), NORM_FLOOR)
    t_norm = np.maximum(np.linalg.norm(targets, axis=1), NORM_FLOOR)
    cosine = (emb * targets).sum(axis=1) / (e_norm * t_norm)
    loss = float((1.0 - cosine).mean())
    n = x.shape[0]
    d_emb = -(targets / (e_norm * t_norm)[:, None] - (cosine / e_norm**2)[:, None] * emb)
    d_emb *= scale / n
    _backprop_into_backbone(model, activations, pre, d_emb, grads)
    return loss


def combined_gradients(model, spec):
    """Evaluate a CombinedLoss; returns (total, grads, forget_part, retain_part).

    A component weighted at zero is skipped entirely, so an ablated term
    contributes neither loss nor gradient.
    """
    if spec.forget is None and spec.retain is None:
        raise ValueError("combined loss needs at least one component")
    grads = zero_gradients(model)
    forget_part = 0.0
    retain_part = 0.0
    if spec.forget is not None and spec.forget_weight != 0.0:
        forget_part = _accumulate_forget(model, spec.forget, grads, spec.forget_weight)
    if spec.retain is not None and spec.retain_weight != 0.0:
        retain_part = _accumulate_retain(model, spec.retain, grads, spec.retain_weight)
    total = spec.forget_weight * forget_part + spec.retain_weight * retain_part
    return total, grads, forget_part, retain_part


def compute_gradients(model, spec):
    """Loss value and analytic gradients for one of the three loss specs."""
    if isinstance(spec, RetainCrossEntropy):
        grads = zero_gradients(model)
        return _accumulate_retain(model, spec, grads, 1.0), grads
    if isinstance(spec, ForgetCosine):
        grads = zero_gradients(model)
        return _accumulate_forget(model, spec, grads, 1.0), grads
    if isinstance(spec, CombinedLoss):
        total, grads, _, _ = combined_gradients(model, spec)
        return total, grads
    raise ValueError(f"unknown loss spec {type(spec).__name__}")


@dataclass(eq=False)
class AdamState:
    """Adam with decoupled weight decay; moment tensors mirror the parameters."""

    learning_rate: float
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        # learning_rate 0 is allowed so an update can be a deliberate no-op
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ValueError("betas must lie in (0, 1)")
        if not 0 < self.epsilon < 1e-3:
            raise ValueError("epsilon must lie in (0, 1e-3)")

    @classmethod
    def for_model(cls, model, learning_rate, **kwargs):
        state = cls(learning_rate, **kwargs)
        state.first_moment = [np.zeros_like(p) for p in model.parameters()]
        state.second_moment = [np.zeros_like(p) for p in model.parameters()]
        return state


def adam_step(model, grads, state):
    """One in-place Adam update with bias correction.

    Weight decay is decoupled: parameters are shrunk by lr * wd directly,
    independent of the moment-based step.
    """
    params = model.parameters()
    if len(grads) != len(params) or len(state.first_moment) != len(params):
        raise ValueError("gradient/state count mismatch")
    for g, p in zip(grads, params):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    lr = state.learning_rate
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if state.weight_decay:
            p *= 1.0 - lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return model, state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float = 1e-3
    batch_size: int = 64
    weight_decay: float = 5e-4
    temperature: float = 1.0


def train(model, dataset, config, seed):
    """Minibatch Adam training on cross-entropy.

    Pure in its inputs: the incoming model is copied and a fixed seed drives
    the per-epoch shuffles, so repeated calls are bit-identical.
    """
    if config.epochs < 0:
        raise ValueError("epochs must be >= 0")
    work = model.copy()
    if config.epochs == 0:
        return work
    state = AdamState.for_model(
        work, config.learning_rate, weight_decay=config.weight_decay
    )
    rng = np.random.default_rng(seed)
    feats = dataset.features
    labels = dataset.labels
    n = labels.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            spec = RetainCrossEntropy(feats[idx], labels[idx], config.temperature)
            _, grads = compute_gradients(work, spec)
            adam_step(work, grads, state)
    return work
