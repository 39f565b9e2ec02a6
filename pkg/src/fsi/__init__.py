"""Transductive few-shot inference on fixed feature embeddings.

Per-task classifiers are fit at inference time by optimizing
information-theoretic objectives (gradient descent and alternating-direction
variants) or out-of-distribution margin objectives, over embeddings produced
by a frozen backbone or a synthetic generator.
"""

from fsi.features import (
    EmbeddingSet,
    SyntheticConfig,
    generate_synthetic,
    l2_normalize,
    load_embeddings,
    save_embeddings,
)
from fsi.episodes import (
    BasePoolNegatives,
    DirichletImbalance,
    Episode,
    TaskConfig,
    UniformSphereNegatives,
    sample_episode,
)
from fsi.classifier import Prototypes, accuracy, init_prototypes, posterior, predict
from fsi.losses import PoodleWeights, TimWeights

__all__ = [
    "EmbeddingSet",
    "SyntheticConfig",
    "generate_synthetic",
    "l2_normalize",
    "load_embeddings",
    "save_embeddings",
    "BasePoolNegatives",
    "DirichletImbalance",
    "Episode",
    "TaskConfig",
    "UniformSphereNegatives",
    "sample_episode",
    "Prototypes",
    "accuracy",
    "init_prototypes",
    "posterior",
    "predict",
    "PoodleWeights",
    "TimWeights",
]
