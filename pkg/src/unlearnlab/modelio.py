"""Binary save/load for models plus cache-key derivation.

File layout (all integers little-endian uint32): magic ``ULMC``, format
version, backbone layer count, then a shape table (ndim followed by dims
for every parameter tensor in model order), then the raw float64 data of
every tensor concatenated in the same order.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from . import nn

MAGIC = b"ULMC"
VERSION = 1


class ModelFileError(ValueError):
    """Model file is corrupt or from an incompatible format version."""


def save_model(model, path):
    params = model.parameters()
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    chunks.append(struct.pack("<I", len(model.backbone_weights)))
    chunks.append(struct.pack("<I", len(params)))
    for p in params:
        chunks.append(struct.pack("<I", p.ndim))
        chunks.append(struct.pack(f"<{p.ndim}I", *p.shape))
    for p in params:
        chunks.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def _take(buf, offset, count, what):
    if offset + count > len(buf):
        raise ModelFileError(f"truncated model file while reading {what}")
    return buf[offset : offset + count], offset + count


def load_model(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    raw, offset = _take(buf, 0, 4, "magic")
    if raw != MAGIC:
        raise ModelFileError(f"bad magic {raw!r}")
    raw, offset = _take(buf, offset, 4, "version")
    (version,) = struct.unpack("<I", raw)
    if version != VERSION:
        raise ModelFileError(f"unsupported format version {version}")
    raw, offset = _take(buf, offset, 8, "counts")
    backbone_layers, n_tensors = struct.unpack("<II", raw)
    if n_tensors != 2 * (backbone_layers + 1):
        raise ModelFileError("tensor count does not match the layer count")
    shapes = []
    for _ in range(n_tensors):
        raw, offset = _take(buf, offset, 4, "shape table")
        (ndim,) = struct.unpack("<I", raw)
        raw, offset = _take(buf, offset, 4 * ndim, "shape table")
        shapes.append(struct.unpack(f"<{ndim}I", raw))
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw, offset = _take(buf, offset, 8 * count, "tensor data")
        tensors.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
    if offset != len(buf):
        raise ModelFileError(f"{len(buf) - offset} trailing bytes")
    weights = [tensors[2 * k] for k in range(backbone_layers)]
    biases = [tensors[2 * k + 1] for k in range(backbone_layers)]
    try:
        return nn.Model(weights, biases, tensors[-2], tensors[-1])
    except ValueError as exc:
        raise ModelFileError(f"inconsistent tensor shapes: {exc}") from exc


def cache_key(dataset_spec, model_spec, train_spec):
    """Stable hash naming one (dataset, architecture, training) combination."""
    text = repr((dataset_spec, model_spec, train_spec))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
