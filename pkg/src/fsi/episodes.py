"""Episode sampling: few-shot tasks with support/query/negative pools.

Every episode is a pure function of (dataset, config, episode_index): the
per-episode RNG stream is Philox keyed by (seed, episode_index), so episodes
are independent and can be sampled concurrently in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from fsi.features import EmbeddingSet, l2_normalize, make_rng, sample_unit_sphere


class SamplingError(Exception):
    """Raised when a task cannot be drawn from the given pools."""


@dataclass(frozen=True)
class DirichletImbalance:
    """Query counts drawn from a symmetric Dirichlet with concentration kappa."""

    concentration: float
    total_queries: int

    def __post_init__(self):
        if self.concentration <= 0:
            raise ValueError("concentration must be > 0")
        if self.total_queries < 0:
            raise ValueError("total_queries must be >= 0")


@dataclass(frozen=True)
class BasePoolNegatives:
    count: int
    resample: bool = True  # fresh draw per episode; False reuses episode-0 stream

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("negative count must be >= 1")


@dataclass(frozen=True)
class UniformSphereNegatives:
    count: int
    resample: bool = True

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("negative count must be >= 1")


Negatives = Union[BasePoolNegatives, UniformSphereNegatives, None]


@dataclass(frozen=True)
class TaskConfig:
    ways: int = 5
    shots: int = 1
    queries_per_class: int = 15
    imbalance: Optional[DirichletImbalance] = None
    negatives: Negatives = None
    seed: int = 0

    def __post_init__(self):
        if self.ways < 2:
            raise ValueError("ways must be >= 2")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.queries_per_class < 0:
            raise ValueError("queries_per_class must be >= 0")


@dataclass(frozen=True)
class Episode:
    """One few-shot task. query_y is ground truth for evaluation only."""

    support_x: np.ndarray  # (ways*shots) x D
    support_y: np.ndarray  # task-local labels in [0, ways)
    query_x: np.ndarray  # Q x D
    query_y: np.ndarray  # Q, evaluation only
    class_map: np.ndarray  # task-local -> dataset class ids
    negatives_x: Optional[np.ndarray] = None  # M x D, l2-normalized


def sample_dirichlet_counts(kappa, ways, total, rng):
    """Integer query counts per class summing exactly to ``total``.

    Proportions p ~ Dirichlet(kappa * 1) are scaled by ``total`` and rounded
    with the largest-remainder rule, which preserves the total and the
    ordering of the proportions. Zero counts are allowed.
    """
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    if total < 0:
        raise ValueError("total must be >= 0")
    p = rng.dirichlet(np.full(ways, float(kappa)))
    scaled = p * total
    counts = np.floor(scaled).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        frac = scaled - counts
        order = np.lexsort((np.arange(ways), -frac))  # largest remainder, ties by index
        counts[order[:remainder]] += 1
    return counts


def sample_uniform_sphere(count, dim, rng):
    """count x dim matrix of unit vectors, rotation-invariant."""
    return sample_unit_sphere(rng, count, dim)


def sample_negatives_from_base(base: EmbeddingSet, count, excluded_classes, rng):
    """Uniform without-replacement draw from base samples outside the excluded
    classes; rows are l2-normalized."""
    excluded = np.asarray(sorted(excluded_classes), dtype=np.int64)
    eligible = np.nonzero(~np.isin(base.labels, excluded))[0]
    if eligible.size < count:
        raise SamplingError(
            f"negative pool exhausted: {eligible.size} eligible samples, need {count}"
        )
    picked = rng.choice(eligible, size=count, replace=False)
    return l2_normalize(base.features[picked])


def episode_rng(cfg: TaskConfig, episode_index):
    return make_rng(cfg.seed, episode_index)


def sample_episode(
    eset: EmbeddingSet,
    base: Optional[EmbeddingSet],
    cfg: TaskConfig,
    episode_index: int,
) -> Episode:
    """Draw one task. Within-class sampling is without replacement."""
    if eset.num_classes < cfg.ways:
        raise SamplingError(f"need {cfg.ways} classes, set has {eset.num_classes}")
    rng = episode_rng(cfg, episode_index)

    classes = rng.choice(eset.num_classes, size=cfg.ways, replace=False)
    if cfg.imbalance is None:
        counts = np.full(cfg.ways, cfg.queries_per_class, dtype=np.int64)
    else:
        counts = sample_dirichlet_counts(
            cfg.imbalance.concentration, cfg.ways, cfg.imbalance.total_queries, rng
        )

    support_rows, query_rows, query_y = [], [], []
    for k, cls in enumerate(classes):
        idx = eset.class_indices(cls)
        need = cfg.shots + int(counts[k])
        if idx.size < need:
            raise SamplingError(
                f"class {cls} has {idx.size} samples, task needs {need}"
            )
        picked = rng.choice(idx, size=need, replace=False)
        support_rows.append(picked[: cfg.shots])
        query_rows.append(picked[cfg.shots :])
        query_y.append(np.full(int(counts[k]), k, dtype=np.int64))

    support_idx = np.concatenate(support_rows)
    query_idx = np.concatenate(query_rows) if query_rows else np.empty(0, dtype=np.int64)
    support_y = np.repeat(np.arange(cfg.ways), cfg.shots)
    query_y = np.concatenate(query_y) if query_y else np.empty(0, dtype=np.int64)

    negatives_x = None
    neg = cfg.negatives
    if neg is not None:
        neg_rng = rng if neg.resample else make_rng(cfg.seed, 0)
        if isinstance(neg, UniformSphereNegatives):
            negatives_x = sample_uniform_sphere(neg.count, eset.dim, neg_rng)
        else:
            if base is None:
                raise SamplingError("base pool negatives requested but no base set given")
            # Class ids are treated as one shared space: the episode's classes
            # are always excluded, so negatives stay out-of-distribution even
            # when base and novel pools come from the same split.
            negatives_x = sample_negatives_from_base(base, neg.count, classes, neg_rng)

    return Episode(
        support_x=eset.features[support_idx],
        support_y=support_y,
        query_x=eset.features[query_idx],
        query_y=query_y,
        class_map=classes.astype(np.int64),
        negatives_x=negatives_x,
    )
