"""Dataset construction: synthetic blob clusters, IDX and CIFAR-style binary
loaders, and retain/forget splitting for the two unlearning scenarios."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CLASS_REMOVAL = "class_removal"
HOMOGENEOUS_REMOVAL = "homogeneous_removal"
SCENARIOS = (CLASS_REMOVAL, HOMOGENEOUS_REMOVAL)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073
HOMOGENEOUS_SEEDS = (0, 1, 2, 3, 4, 5, 6, 7, 8, 42)


class DataFormatError(ValueError):
    """A binary dataset file violates its declared format."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix in [0, 1] with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if feats.ndim != 2 or labels.ndim != 1 or feats.shape[0] != labels.shape[0]:
            raise ValueError("features must be (n, d) with one label per row")
        if feats.shape[0] == 0:
            raise ValueError("dataset is empty")
        if not np.all(np.isfinite(feats)):
            raise ValueError("non-finite feature values")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError("label outside [0, num_classes)")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return int(self.labels.shape[0])


def subset(dataset, indices, name=None):
    idx = np.asarray(indices, dtype=np.int64)
    return Dataset(
        dataset.features[idx],
        dataset.labels[idx],
        dataset.num_classes,
        dataset.name if name is None else name,
    )


def _lattice_means(num_classes, dim):
    # one-hot corners first, then two-hot corners: pairwise distance >= 1
    # on the unit lattice regardless of how many classes are requested
    means = [np.eye(dim)[i] for i in range(min(num_classes, dim))]
    for i in range(dim):
        for j in range(i + 1, dim):
            if len(means) >= num_classes:
                break
            m = np.zeros(dim)
            m[i] = m[j] = 1.0
            means.append(m)
    if len(means) < num_classes:
        raise ValueError(f"dim {dim} supports at most {len(means)} separated classes")
    return np.stack(means)


def _minmax_scale(x):
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        raise ValueError("degenerate feature range")
    return (x - lo) / (hi - lo)


def _validate_blob_args(num_classes, dim, per_class, spread):
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if dim < 2:
        raise ValueError("need at least 2 feature dimensions")
    if per_class < 1:
        raise ValueError("need at least 1 sample per class")
    if spread <= 0:
        raise ValueError("spread must be positive")


def gen_blobs(num_classes, dim, per_class, spread, seed, name="blobs"):
    """Isotropic Gaussian clusters on well-separated lattice means.

    Deterministic per seed; features are min-max scaled into [0, 1] as one
    block so the cluster geometry survives scaling.
    """
    _validate_blob_args(num_classes, dim, per_class, spread)
    means = _lattice_means(num_classes, dim)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class)
    feats = means[labels] + rng.normal(0.0, spread, size=(labels.size, dim))
    return Dataset(_minmax_scale(feats), labels, num_classes, name)


def gen_blobs_train_test(
    num_classes, dim, train_per_class, test_per_class, spread, seed, name="blobs"
):
    """Train/test blob pair drawn in one shot so both share means and scaling."""
    _validate_blob_args(num_classes, dim, train_per_class, spread)
    if test_per_class < 1:
        raise ValueError("need at least 1 test sample per class")
    means = _lattice_means(num_classes, dim)
    rng = np.random.default_rng(seed)
    total = train_per_class + test_per_class
    labels = np.repeat(np.arange(num_classes), total)
    feats = _minmax_scale(means[labels] + rng.normal(0.0, spread, (labels.size, dim)))
    blocks = np.arange(num_classes * total).reshape(num_classes, total)
    train_idx = blocks[:, :train_per_class].ravel()
    test_idx = blocks[:, train_per_class:].ravel()
    train = Dataset(feats[train_idx], labels[train_idx], num_classes, name)
    test = Dataset(feats[test_idx], labels[test_idx], num_classes, name + "-test")
    return train, test


def _read_exact(fh, count, path, what):
    offset = fh.tell()
    buf = fh.read(count)
    if len(buf) != count:
        raise DataFormatError(
            f"{path}: truncated {what} at byte {offset} "
            f"(wanted {count} bytes, got {len(buf)})"
        )
    return buf


def _read_idx_header(fh, path, expected_magic, n_dims):
    raw = _read_exact(fh, 4 * (1 + n_dims), path, "header")
    fields = struct.unpack(f">{1 + n_dims}I", raw)
    if fields[0] != expected_magic:
        raise DataFormatError(
            f"{path}: bad magic 0x{fields[0]:08x} at byte 0 "
            f"(expected 0x{expected_magic:08x})"
        )
    return fields[1:]


def load_idx(images_path, labels_path, name="idx"):
    """Load an IDX image/label file pair.

    Headers are big-endian with magic 0x00000803 (images, dims count x rows
    x cols) and 0x00000801 (labels, dim count); one unsigned byte per pixel
    or label. Pixels are scaled by 1/255 and images flattened row-major.
    """
    with open(images_path, "rb") as fh:
        count, rows, cols = _read_idx_header(fh, images_path, IDX_IMAGE_MAGIC, 3)
        if count == 0:
            raise DataFormatError(f"{images_path}: header declares zero items")
        pixels = _read_exact(fh, count * rows * cols, images_path, "pixel data")
    with open(labels_path, "rb") as fh:
        (label_count,) = _read_idx_header(fh, labels_path, IDX_LABEL_MAGIC, 1)
        if label_count != count:
            raise DataFormatError(
                f"{labels_path}: {label_count} labels for {count} images"
            )
        raw_labels = _read_exact(fh, label_count, labels_path, "label data")
    feats = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return Dataset(feats, labels, int(labels.max()) + 1, name)


def load_cifar_binary(paths, name="cifar10"):
    """Load CIFAR-10 style binary files: 3073-byte records, one label byte
    followed by 3072 pixel bytes. Record order is preserved across files."""
    paths = list(paths)
    if not paths:
        raise ValueError("no record files given")
    feature_parts, label_parts = [], []
    for path in paths:
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise DataFormatError(
                f"{path}: size {len(raw)} is not a positive multiple "
                f"of {CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels = records[:, 0].astype(np.int64)
        if labels.max() >= 10:
            raise DataFormatError(f"{path}: label byte outside [0, 10)")
        label_parts.append(labels)
        feature_parts.append(records[:, 1:] / 255.0)
    return Dataset(np.concatenate(feature_parts), np.concatenate(label_parts), 10, name)


@dataclass(frozen=True, eq=False)
class SplitBundle:
    """Retain/forget partitions for one unlearning run.

    Class removal fills retain_test/forget_test and forget_classes;
    homogeneous removal keeps the test set whole (``test``) and records the
    sampled fraction instead.
    """

    scenario: str
    retain_train: Dataset
    forget_train: Dataset
    retain_test: Dataset | None = None
    forget_test: Dataset | None = None
    test: Dataset | None = None
    forget_classes: frozenset | None = None
    forget_fraction: float | None = None


def split_cr(train, test, forget_classes):
    """Partition train and test sets by class membership."""
    classes = frozenset(int(c) for c in forget_classes)
    if not classes:
        raise ValueError("forget_classes is empty")
    if not classes <= set(range(train.num_classes)):
        raise ValueError("forget class outside the label range")
    if len(classes) == train.num_classes:
        raise ValueError("cannot forget every class: nothing would remain")
    wanted = np.array(sorted(classes), dtype=np.int64)

    def parts(ds):
        mask = np.isin(ds.labels, wanted)
        return subset(ds, np.flatnonzero(~mask)), subset(ds, np.flatnonzero(mask))

    retain_train, forget_train = parts(train)
    retain_test, forget_test = parts(test)
    return SplitBundle(
        CLASS_REMOVAL,
        retain_train,
        forget_train,
        retain_test=retain_test,
        forget_test=forget_test,
        forget_classes=classes,
    )


def split_hr(train, test, fraction, seed):
    """Uniformly sample round(fraction * n) training rows into the forget set.

    The draw is seeded and without replacement; the test set passes through
    untouched. Row order within each partition follows the original dataset.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    n = len(train)
    n_forget = int(np.floor(fraction * n + 0.5))
    if n_forget < 1 or n_forget >= n:
        raise ValueError("fraction leaves an empty retain or forget set")
    rng = np.random.default_rng(seed)
    forget_idx = np.sort(rng.choice(n, size=n_forget, replace=False))
    mask = np.zeros(n, dtype=bool)
    mask[forget_idx] = True
    return SplitBundle(
        HOMOGENEOUS_REMOVAL,
        subset(train, np.flatnonzero(~mask)),
        subset(train, forget_idx),
        test=test,
        forget_fraction=float(fraction),
    )


def seed_protocol(scenario, num_classes=None, fraction=0.1):
    """Run list for the multi-run protocols, as (seed, forget spec) pairs.

    Class removal: fixed seed 42 throughout, one forgotten class per run,
    strided so ten runs cover the label range (stride 1 for 10 classes,
    stride 10 for 100, and so on). Homogeneous removal: ten fixed seeds,
    each forgetting the same fraction.
    """
    if scenario == CLASS_REMOVAL:
        if num_classes is None or num_classes < 2:
            raise ValueError("num_classes >= 2 required for the class protocol")
        stride = max(1, num_classes // 10)
        count = min(10, num_classes)
        return [(42, frozenset({i * stride})) for i in range(count)]
    if scenario == HOMOGENEOUS_REMOVAL:
        if not 0.0 < fraction < 1.0:
            raise ValueError("fraction must be in (0, 1)")
        return [(seed, float(fraction)) for seed in HOMOGENEOUS_SEEDS]
    raise ValueError(f"unknown scenario {scenario!r}")
