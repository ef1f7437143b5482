"""Unsupervised clustering with gated contrastive experts.

Labels are 0-based numpy integer arrays. Points are float64 arrays with one
row per datapoint.
"""

from ._mice import (
    Config,
    MiceError,
    Model,
    __version__,
    acc,
    ari,
    generate,
    infonce_loss,
    mmd_centers,
    nmi,
    scores,
    spherical_kmeans,
    two_stage,
    verify,
)

__all__ = [
    "Config",
    "MiceError",
    "Model",
    "__version__",
    "acc",
    "ari",
    "generate",
    "infonce_loss",
    "mmd_centers",
    "nmi",
    "scores",
    "spherical_kmeans",
    "two_stage",
    "verify",
]
