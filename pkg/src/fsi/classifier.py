"""Distance-based softmax classifier over normalized features.

The predictive distribution is softmax_k(-s * ||z_i - w_k||^2) with
z_i the l2-normalized feature and s either the scale gamma or the
temperature tau. Prototypes themselves are not normalized unless
explicitly requested; features always are.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from fsi.episodes import Episode
from fsi.features import DegenerateInputError, l2_normalize

DEFAULT_GAMMA = 10.0
DEFAULT_TAU = 15.0


@dataclass(frozen=True)
class Prototypes:
    """Per-class weight vectors plus the two softmax scales."""

    W: np.ndarray  # K x D
    gamma: float = DEFAULT_GAMMA
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        object.__setattr__(self, "W", W)
        if W.ndim != 2:
            raise ValueError("W must be K x D")
        if not np.all(np.isfinite(W)):
            raise ValueError("W must be finite")
        if self.gamma <= 0 or self.tau <= 0:
            raise ValueError("gamma and tau must be positive")

    @property
    def ways(self):
        return self.W.shape[0]

    def scale(self, scale_source: str) -> float:
        if scale_source == "gamma":
            return self.gamma
        if scale_source == "tau":
            return self.tau
        raise ValueError(f"unknown scale source {scale_source!r}")

    def with_weights(self, W) -> "Prototypes":
        return replace(self, W=W)


def init_prototypes(episode: Episode, gamma=DEFAULT_GAMMA, tau=DEFAULT_TAU) -> Prototypes:
    """Each w_k is the arithmetic mean of the raw support features of class k."""
    ways = int(episode.support_y.max()) + 1
    W = np.stack(
        [episode.support_x[episode.support_y == k].mean(axis=0) for k in range(ways)]
    )
    return Prototypes(W=W, gamma=gamma, tau=tau)


def squared_distances(Z, W):
    """Pairwise squared Euclidean distances, rows of Z against rows of W."""
    d = (
        np.sum(Z * Z, axis=1)[:, None]
        + np.sum(W * W, axis=1)[None, :]
        - 2.0 * (Z @ W.T)
    )
    np.maximum(d, 0.0, out=d)
    return d


def logits_for(proto: Prototypes, X, scale_source="gamma", normalize_prototypes=False):
    """Return (Z, logits) with Z the normalized rows of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise DegenerateInputError("empty feature matrix")
    Z = l2_normalize(X)
    W = l2_normalize(proto.W) if normalize_prototypes else proto.W
    return Z, -proto.scale(scale_source) * squared_distances(Z, W)


def softmax(logits):
    """Row-wise softmax with max-subtraction stabilization."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def posterior(proto: Prototypes, X, scale_source="gamma", normalize_prototypes=False):
    """Q x K row-stochastic posterior p(k | x_i, W)."""
    _, logits = logits_for(proto, X, scale_source, normalize_prototypes)
    return softmax(logits)


def predict(P):
    """Argmax class per row; ties broken by lowest class index."""
    return np.argmax(P, axis=1)


def accuracy(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if truth.size == 0:
        raise DegenerateInputError("accuracy undefined for an empty query set")
    return float(np.mean(pred == truth))
