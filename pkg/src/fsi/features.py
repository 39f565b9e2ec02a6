"""Feature embeddings: storage, synthetic generation, normalization and I/O.

Embeddings stand in for the output of a frozen backbone. On disk they are
32-bit floats; in memory everything is promoted to float64 so that
analytic-vs-finite-difference gradient checks hold at tight tolerances.

Binary format (little-endian, no padding):
    magic "FSE1" | u32 version=1 | u32 D | u32 N | u32 num_classes
    | N*D float32 features, row-major | N u32 labels

CSV import: one row per sample, ``label,v1,...,vD``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"FSE1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class EmbeddingIOError(Exception):
    """Base class for embedding file errors."""


class BadMagicError(EmbeddingIOError):
    pass


class VersionMismatchError(EmbeddingIOError):
    pass


class TruncatedFileError(EmbeddingIOError):
    pass


class LabelRangeError(EmbeddingIOError):
    pass


class DegenerateInputError(ValueError):
    """Raised for inputs that make an operation ill-defined (e.g. zero vectors)."""


def l2_normalize(v):
    """Return v / ||v||_2. Works on a vector or row-wise on a matrix."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / norms


@dataclass(frozen=True)
class EmbeddingSet:
    """Labeled feature vectors for one dataset split.

    Immutable after construction; safe to share across threads.
    """

    dim: int
    num_classes: int
    features: np.ndarray  # N x dim, float64
    labels: np.ndarray  # N, int64
    name: str = ""

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        if self.dim < 1 or self.num_classes < 1:
            raise ValueError("dim and num_classes must be positive")
        if feats.ndim != 2 or feats.shape[1] != self.dim:
            raise ValueError(f"features must be N x {self.dim}")
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        if feats.shape[0] < self.num_classes:
            raise ValueError("need at least one sample per class")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= self.num_classes:
            raise LabelRangeError("label outside [0, num_classes)")
        present = np.unique(labels)
        if present.size != self.num_classes:
            raise ValueError("every class id must appear at least once")
        feats.setflags(write=False)
        labels.setflags(write=False)

    def __len__(self):
        return self.features.shape[0]

    def class_indices(self, class_id):
        return np.nonzero(self.labels == class_id)[0]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.num_classes == other.num_classes
            and self.name == other.name
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class SyntheticConfig:
    dim: int
    num_classes: int
    per_class: int
    spread: float
    seed: int
    name: str = "synthetic"

    def __post_init__(self):
        if self.per_class < 1:
            raise ValueError("per_class must be >= 1")
        if self.spread < 0:
            raise ValueError("spread must be >= 0")


def make_rng(seed, stream=0):
    """Counter-based Philox generator keyed by (seed, stream).

    Philox is a documented counter-based RNG, so any run is reproducible
    from the (seed, stream) pair alone, and distinct streams are
    statistically independent.
    """
    return np.random.Generator(np.random.Philox(key=np.array([seed, stream], dtype=np.uint64)))


def sample_unit_sphere(rng, count, dim):
    """Uniform points on S^{dim-1}: normalized standard Gaussian rows."""
    if dim < 2:
        raise DegenerateInputError("sphere sampling needs dim >= 2")
    g = rng.standard_normal((count, dim))
    return l2_normalize(g)


def generate_synthetic(cfg: SyntheticConfig) -> EmbeddingSet:
    """Gaussian clusters around uniform-on-sphere class means, renormalized.

    Each sample is l2_normalize(mean + spread * gaussian). Deterministic
    given cfg.seed.
    """
    rng = make_rng(cfg.seed)
    means = sample_unit_sphere(rng, cfg.num_classes, cfg.dim)
    n = cfg.num_classes * cfg.per_class
    labels = np.repeat(np.arange(cfg.num_classes), cfg.per_class)
    noise = rng.standard_normal((n, cfg.dim)) if cfg.spread > 0 else 0.0
    feats = l2_normalize(means[labels] + cfg.spread * noise)
    # Round-trip through float32 so in-memory sets match their on-disk form.
    feats = feats.astype(np.float32).astype(np.float64)
    return EmbeddingSet(cfg.dim, cfg.num_classes, feats, labels, name=cfg.name)


def save_embeddings(eset: EmbeddingSet, path):
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, eset.dim, len(eset), eset.num_classes))
        f.write(np.ascontiguousarray(eset.features, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(eset.labels, dtype="<u4").tobytes())


def load_embeddings(path, name=None) -> EmbeddingSet:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than header")
    magic, version, dim, n, num_classes = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    expected = _HEADER.size + 4 * n * dim + 4 * n
    if len(blob) < expected:
        raise TruncatedFileError(f"{path}: {len(blob)} bytes, expected {expected}")
    feats = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=_HEADER.size)
    labels = np.frombuffer(blob, dtype="<u4", count=n, offset=_HEADER.size + 4 * n * dim)
    if n and labels.max() >= num_classes:
        raise LabelRangeError(f"{path}: label {labels.max()} >= num_classes {num_classes}")
    return EmbeddingSet(
        dim,
        num_classes,
        feats.astype(np.float64).reshape(n, dim),
        labels.astype(np.int64),
        name=name if name is not None else str(path),
    )


def load_csv(path, name=None) -> EmbeddingSet:
    """Plain-text import: one row per sample, ``label,v1,...,vD``."""
    raw = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if raw.shape[1] < 2:
        raise EmbeddingIOError(f"{path}: need label plus at least one feature column")
    labels = raw[:, 0]
    if not np.all(labels == np.round(labels)) or labels.min() < 0:
        raise LabelRangeError(f"{path}: labels must be non-negative integers")
    labels = labels.astype(np.int64)
    feats = raw[:, 1:].astype(np.float32).astype(np.float64)
    return EmbeddingSet(
        feats.shape[1],
        int(labels.max()) + 1,
        feats,
        labels,
        name=name if name is not None else str(path),
    )


def save_csv(eset: EmbeddingSet, path):
    out = np.concatenate(
        [eset.labels[:, None].astype(np.float64), eset.features.astype(np.float32)], axis=1
    )
    fmt = ["%d"] + ["%.9g"] * eset.dim
    np.savetxt(path, out, delimiter=",", fmt=fmt)
