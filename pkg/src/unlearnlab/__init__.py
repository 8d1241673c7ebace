"""Desk-scale machine unlearning toolkit.

Trains small dense classifiers, removes the influence of a designated
forget set by pulling its embeddings toward the nearest wrong-class
centroid, and verifies forgetting with an adaptive unlearning score and a
membership inference attack.
"""

from . import baselines, cli, config, data, engine, harness, metrics, mia, modelio, nn

__version__ = "0.1.0"

__all__ = [
    "baselines",
    "cli",
    "config",
    "data",
    "engine",
    "harness",
    "metrics",
    "mia",
    "modelio",
    "nn",
    "__version__",
]
