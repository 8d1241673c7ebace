"""Membership inference attack on an unlearned model.

The attack features are the model's softmax outputs. Forget samples (label
1, members) and test samples (label 0, non-members) are balanced, split
80/20, and a Gaussian-kernel soft-margin SVM is fitted on the training side
with grid-searched hyperparameters. Chance-level F1 on the held-out side
means membership is no longer recoverable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

C_GRID = (1.0, 5.0, 10.0, 100.0)
GAMMA_GRID = (1.0, 0.1, 0.01)
MIA_SEEDS = (0, 1, 2)
DEFAULT_TOLERANCE = 1e-3
MAX_PAIR_UPDATES = 100_000
TRAIN_FRACTION = 0.8


@dataclass(frozen=True, eq=False)
class MiaDataset:
    """Balanced membership rows: softmax features plus 0/1 member labels."""

    features: np.ndarray
    membership_labels: np.ndarray
    split_tag: str

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.membership_labels, dtype=np.int64)
        if feats.ndim != 2 or labels.shape != (feats.shape[0],):
            raise ValueError("features must be (n, k) with one label per row")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("membership labels must be 0 or 1")
        sums = feats.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError("feature rows must be probability vectors")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "membership_labels", labels)

    def __len__(self):
        return int(self.membership_labels.shape[0])


@dataclass(eq=False)
class SvmModel:
    """Fitted soft-margin kernel SVM (support vectors only).

    dual_coef holds alpha_i * y_i with y in {-1, +1}, so |dual_coef| is the
    box-constrained dual variable. kkt_residual is the final maximal
    violating-pair gap.
    """

    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    gamma: float
    c: float
    kkt_residual: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class MiaResult:
    mean_f1: float
    per_run_f1: tuple
    chosen_hyperparameters: tuple


def _softmax_features(model, dataset):
    _, logits = nn.forward(model, dataset.features)
    return nn.softmax_with_temperature(logits, 1.0)


def build_mia_dataset(model, forget_set, test_set, seed):
    """Assemble balanced membership data and split it 80/20.

    The larger of the two sources is subsampled (seeded) to the smaller
    side's size first, the 80/20 split is stratified by membership so both
    sides stay exactly balanced, and rows are shuffled. Deterministic per
    seed.
    """
    if len(forget_set) == 0 or len(test_set) == 0:
        raise ValueError("both source sets must be non-empty")
    rng = np.random.default_rng(seed)
    members = _softmax_features(model, forget_set)
    outsiders = _softmax_features(model, test_set)
    n = min(members.shape[0], outsiders.shape[0])
    if members.shape[0] > n:
        members = members[np.sort(rng.choice(members.shape[0], n, replace=False))]
    if outsiders.shape[0] > n:
        outsiders = outsiders[np.sort(rng.choice(outsiders.shape[0], n, replace=False))]
    n_train = int(np.floor(TRAIN_FRACTION * n + 0.5))
    if n_train < 1 or n_train >= n:
        raise ValueError("source sets too small for an 80/20 split")
    member_order = rng.permutation(n)
    outsider_order = rng.permutation(n)

    def assemble(member_idx, outsider_idx, tag):
        feats = np.concatenate([members[member_idx], outsiders[outsider_idx]])
        labels = np.concatenate(
            [np.ones(len(member_idx), dtype=np.int64), np.zeros(len(outsider_idx), dtype=np.int64)]
        )
        order = rng.permutation(feats.shape[0])
        return MiaDataset(feats[order], labels[order], tag)

    train = assemble(member_order[:n_train], outsider_order[:n_train], "train")
    test = assemble(member_order[n_train:], outsider_order[n_train:], "test")
    return train, test


def gaussian_kernel(u, v, gamma):
    """exp(-gamma * ||u - v||^2)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    diff = np.asarray(u, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    return float(np.exp(-gamma * float(diff @ diff)))


def gaussian_kernel_matrix(a, b, gamma):
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def _smo(kernel, y, c, tolerance, max_iterations):
    """Deterministic pairwise dual ascent (maximal violating pair selection).

    Minimizes 0.5 a'Qa - e'a over 0 <= a <= C, y'a = 0 with Q = yy' * K.
    Returns (alpha, bias, kkt_residual, converged, iterations).
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    gradient = -np.ones(n)
    q_sign = np.outer(y, y)
    positive = y > 0
    converged = False
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        neg_yg = -y * gradient
        up = (positive & (alpha < c)) | (~positive & (alpha > 0))
        low = (positive & (alpha > 0)) | (~positive & (alpha < c))
        i = int(np.argmax(np.where(up, neg_yg, -np.inf)))
        j = int(np.argmin(np.where(low, neg_yg, np.inf)))
        residual = neg_yg[i] - neg_yg[j]
        if residual <= tolerance:
            converged = True
            break
        curvature = kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j]
        step = residual / max(curvature, 1e-12)
        cap_i = (c - alpha[i]) if y[i] > 0 else alpha[i]
        cap_j = alpha[j] if y[j] > 0 else (c - alpha[j])
        step = min(step, cap_i, cap_j)
        new_i = min(max(alpha[i] + y[i] * step, 0.0), c)
        new_j = min(max(alpha[j] - y[j] * step, 0.0), c)
        delta_i = new_i - alpha[i]
        delta_j = new_j - alpha[j]
        alpha[i] = new_i
        alpha[j] = new_j
        gradient += q_sign[:, i] * kernel[:, i] * delta_i
        gradient += q_sign[:, j] * kernel[:, j] * delta_j
    neg_yg = -y * gradient
    up = (positive & (alpha < c)) | (~positive & (alpha > 0))
    low = (positive & (alpha > 0)) | (~positive & (alpha < c))
    m = float(np.max(np.where(up, neg_yg, -np.inf)))
    big_m = float(np.min(np.where(low, neg_yg, np.inf)))
    bias = 0.5 * (m + big_m)
    return alpha, bias, max(m - big_m, 0.0), converged, iterations


def train_svm(
    train,
    c,
    gamma,
    tolerance=DEFAULT_TOLERANCE,
    max_iterations=MAX_PAIR_UPDATES,
    _kernel=None,
):
    """Fit the membership SVM; deterministic given the data order.

    If the pair-update cap is hit before the violating-pair gap drops below
    the tolerance, the best iterate is returned with converged=False rather
    than raising.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    labels = train.membership_labels
    if not (np.any(labels == 1) and np.any(labels == 0)):
        raise ValueError("both membership classes are required")
    y = np.where(labels == 1, 1.0, -1.0)
    kernel = (
        gaussian_kernel_matrix(train.features, train.features, gamma)
        if _kernel is None
        else _kernel
    )
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    alpha, bias, residual, converged, iterations = _smo(
        kernel, y, float(c), tolerance, max_iterations
    )
    keep = alpha > 0
    return SvmModel(
        support_vectors=np.array(train.features[keep]),
        dual_coef=(alpha * y)[keep],
        bias=float(bias),
        gamma=float(gamma),
        c=float(c),
        kkt_residual=float(residual),
        converged=converged,
        iterations=iterations,
    )


def decision_function(svm, features):
    k = gaussian_kernel_matrix(np.asarray(features, dtype=np.float64), svm.support_vectors, svm.gamma)
    return k @ svm.dual_coef + svm.bias


def predict_membership(svm, features):
    return (decision_function(svm, features) >= 0.0).astype(np.int64)


def _stratified_folds(labels, k):
    folds = [[] for _ in range(k)]
    for cls in (0, 1):
        for position, idx in enumerate(np.flatnonzero(labels == cls)):
            folds[position % k].append(int(idx))
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def grid_search_scores(train, folds=3):
    """Mean stratified k-fold accuracy for every (C, gamma) grid candidate.

    Returned in evaluation order: C ascending, gamma descending, which is
    also the tie-break preference.
    """
    labels = train.membership_labels
    if len(train) < 3:
        raise ValueError("need at least 3 training rows")
    for cls in (0, 1):
        if np.count_nonzero(labels == cls) < 2:
            raise ValueError("each membership class needs at least 2 rows to stratify")
    fold_indices = _stratified_folds(labels, folds)
    kernels = {g: gaussian_kernel_matrix(train.features, train.features, g) for g in GAMMA_GRID}
    scores = []
    for c in C_GRID:
        for gamma in GAMMA_GRID:
            kernel = kernels[gamma]
            fold_accuracies = []
            for held in range(folds):
                test_idx = fold_indices[held]
                train_idx = np.concatenate(
                    [fold_indices[f] for f in range(folds) if f != held]
                )
                piece = MiaDataset(
                    train.features[train_idx], labels[train_idx], "train"
                )
                svm = train_svm(
                    piece, c, gamma, _kernel=kernel[np.ix_(train_idx, train_idx)]
                )
                predictions = predict_membership(svm, train.features[test_idx])
                fold_accuracies.append(float(np.mean(predictions == labels[test_idx])))
            scores.append(((c, gamma), float(np.mean(fold_accuracies))))
    return scores


def grid_search_cv(train, folds=3):
    """Best (C, gamma) by 3-fold CV accuracy; ties prefer small C, large gamma."""
    best = None
    best_score = -np.inf
    for (c, gamma), score in grid_search_scores(train, folds):
        if score > best_score:
            best = (c, gamma)
            best_score = score
    return best


def f1_score(predictions, labels, positive=1):
    """F1 with members as the positive class; 0 when precision + recall is 0."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    tp = int(np.sum((predictions == positive) & (labels == positive)))
    fp = int(np.sum((predictions == positive) & (labels != positive)))
    fn = int(np.sum((predictions != positive) & (labels == positive)))
    denominator = 2 * tp + fp + fn
    return 2.0 * tp / denominator if denominator else 0.0


def run_mia(model, forget_set, test_set):
    """Full attack protocol: three pipelines with seeds 0, 1, 2.

    Each run rebuilds the balanced split, re-runs the grid search, fits the
    SVM, and scores held-out F1; the result carries the per-run values and
    their mean.
    """
    per_run = []
    chosen = []
    for seed in MIA_SEEDS:
        train, test = build_mia_dataset(model, forget_set, test_set, seed)
        c, gamma = grid_search_cv(train)
        svm = train_svm(train, c, gamma)
        predictions = predict_membership(svm, test.features)
        per_run.append(f1_score(predictions, test.membership_labels))
        chosen.append((c, gamma))
    return MiaResult(float(np.mean(per_run)), tuple(per_run), tuple(chosen))
