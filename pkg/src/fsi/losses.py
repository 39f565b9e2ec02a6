"""Scalar objectives: entropies, mutual information, the information-maximization
loss, and the margin (pull/push) losses over prototypes.

Conventions: entropies use natural log and average over the query set;
the weighted-distance losses sum over samples. Probabilities are clamped
at 1e-300 before any log, which bounds the values without masking a
collapse toward the simplex vertices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from fsi.classifier import Prototypes, logits_for, softmax

LOG_CLAMP = 1e-300


@dataclass(frozen=True)
class TimWeights:
    """Weights and ablation flags for the information-maximization loss."""

    lambda_ce: float = 0.1
    alpha_cond: float = 0.1
    use_ce: bool = True
    use_conditional: bool = True
    use_marginal: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.lambda_ce) and np.isfinite(self.alpha_cond)):
            raise ValueError("weights must be finite")
        if self.lambda_ce < 0 or self.alpha_cond < 0:
            raise ValueError("weights must be >= 0")


@dataclass(frozen=True)
class PoodleWeights:
    """Pull/push coefficients and stop-gradient placement for the margin loss."""

    alpha_pull: float = 1.0
    beta_push: float = 0.5
    stop_grad_pull: bool = True
    stop_grad_push: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.alpha_pull) and np.isfinite(self.beta_push)):
            raise ValueError("weights must be finite")
        if self.alpha_pull < 0 or self.beta_push < 0:
            raise ValueError("weights must be >= 0")


def _safe_log(p):
    return np.log(np.clip(p, LOG_CLAMP, None))


def cross_entropy(P_support, y):
    """-(1/|S|) sum_i log P[i, y_i]."""
    P_support = np.asarray(P_support, dtype=np.float64)
    y = np.asarray(y)
    return float(-np.mean(_safe_log(P_support[np.arange(len(y)), y])))


def conditional_entropy(P_query):
    """Mean per-row Shannon entropy, with 0 log 0 := 0."""
    P = np.asarray(P_query, dtype=np.float64)
    return float(-np.mean(np.sum(P * _safe_log(P), axis=1)))


def marginal_entropy(P_query):
    """Entropy of the mean predicted class distribution."""
    p_bar = np.asarray(P_query, dtype=np.float64).mean(axis=0)
    return float(-np.sum(p_bar * _safe_log(p_bar)))


def mutual_information(P_query, alpha=1.0):
    """H(Y) - alpha * H(Y|X) of the empirical posterior."""
    return marginal_entropy(P_query) - alpha * conditional_entropy(P_query)


def tim_loss(P_support, y, P_query, w: TimWeights):
    """lambda*CE + alpha*H(Y|X) - H(Y), each term gated by its flag."""
    loss = 0.0
    if w.use_ce:
        loss += w.lambda_ce * cross_entropy(P_support, y)
    if w.use_conditional:
        loss += w.alpha_cond * conditional_entropy(P_query)
    if w.use_marginal:
        loss -= marginal_entropy(P_query)
    return float(loss)


def weighted_distance_loss(
    proto: Prototypes, X, treat_weights_as_constant=True, scale_source="gamma"
):
    """sum_i sum_k s*d(z_i, w_k) * P[i,k].

    ``treat_weights_as_constant`` only affects gradients (stop-gradient on
    the posterior factor); the value is identical either way.
    """
    del treat_weights_as_constant
    _, logits = logits_for(proto, X, scale_source)
    P = softmax(logits)
    return float(-np.sum(logits * P))


def lse_loss(proto: Prototypes, X, scale_source="gamma"):
    """-sum_i log sum_k exp(-s * d(z_i, w_k))."""
    _, logits = logits_for(proto, X, scale_source)
    return float(-np.sum(logsumexp(logits, axis=1)))


def expected_distance_loss(proto: Prototypes, X, scale_source="gamma"):
    """Same value as the weighted-distance loss, but the posterior factor is
    inside the differentiation path (no stop-gradient)."""
    return weighted_distance_loss(proto, X, treat_weights_as_constant=False,
                                  scale_source=scale_source)


def poodle_loss(
    proto: Prototypes,
    support_x,
    support_y,
    positives,
    negatives,
    w: PoodleWeights,
    scale_source="gamma",
):
    """CE over the support set + alpha * pull(positives) - beta * push(negatives).

    Positives are the support set alone (inductive) or support plus query
    (transductive); negatives may be None or empty.
    """
    from fsi.classifier import posterior

    loss = cross_entropy(posterior(proto, support_x, scale_source), support_y)
    loss += w.alpha_pull * weighted_distance_loss(
        proto, positives, w.stop_grad_pull, scale_source
    )
    if negatives is not None and len(negatives) > 0:
        loss -= w.beta_push * weighted_distance_loss(
            proto, negatives, w.stop_grad_push, scale_source
        )
    return float(loss)
