"""Analytic gradients, an Adam optimizer, and the gradient-descent solvers.

All gradients are derived by chain rule through the softmax posterior:
with logits L[i,k] = -s * ||z_i - w_k||^2, any scalar loss has

    dLoss/dw_k = -2s * (sum_i G[i,k] * w_k - sum_i G[i,k] * z_i),

where G = dLoss/dL. The pull/push losses with stop-gradient bypass this
route and use the closed form  dL_wd/dw_j = sum_i P[i,j] * 2s * (w_j - z_i),
which coincides with the gradient of the log-sum-exp loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from fsi.classifier import Prototypes, accuracy, init_prototypes, predict, softmax
from fsi.episodes import Episode
from fsi.features import l2_normalize
from fsi.losses import (
    LOG_CLAMP,
    PoodleWeights,
    TimWeights,
    cross_entropy,
    mutual_information,
)

DIVERGENCE_LIMIT = 1e12


class NumericDivergenceError(RuntimeError):
    """Loss became non-finite or blew up; carries the trace recorded so far."""

    def __init__(self, message, trace=None, iteration=None):
        super().__init__(message)
        self.trace = trace
        self.iteration = iteration


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-3):
        return cls(np.zeros_like(params), np.zeros_like(params), lr=lr)


def adam_step(state: AdamState, params, gradient):
    """Standard bias-corrected Adam update; returns the new parameters."""
    state.step_count += 1
    t = state.step_count
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * gradient
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * gradient**2
    m_hat = state.first_moment / (1 - state.beta1**t)
    v_hat = state.second_moment / (1 - state.beta2**t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def finite_difference_gradient(loss_fn, params, h=1e-5):
    """Central differences (f(x+h) - f(x-h)) / 2h, one coordinate at a time."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    flat = params.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn(params)
        flat[i] = orig - h
        down = loss_fn(params)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def _chain_to_w(G, Z, W, s):
    """Map a logit-space gradient G to prototype space."""
    return -2.0 * s * (G.sum(axis=0)[:, None] * W - G.T @ Z)


def _logits(W, Z, s):
    d = (
        np.sum(Z * Z, axis=1)[:, None]
        + np.sum(W * W, axis=1)[None, :]
        - 2.0 * (Z @ W.T)
    )
    np.maximum(d, 0.0, out=d)
    return -s * d


def _ce_logit_grad(P, y_onehot, weight):
    return (weight / P.shape[0]) * (P - y_onehot)


def _cond_entropy_logit_grad(P, weight):
    logP = np.log(np.clip(P, LOG_CLAMP, None))
    row_ent = -np.sum(P * logP, axis=1, keepdims=True)
    return (-weight / P.shape[0]) * P * (logP + row_ent)


def _marg_entropy_logit_grad(P, weight):
    p_bar = P.mean(axis=0)
    log_pbar = np.log(np.clip(p_bar, LOG_CLAMP, None))
    centered = log_pbar[None, :] - (P @ log_pbar)[:, None]
    return (-weight / P.shape[0]) * P * centered


def _ed_logit_grad(logits, P, weight):
    # L_ed = -sum_ik L[i,k] P[i,k]; expectation term reappears via softmax.
    expect = np.sum(logits * P, axis=1, keepdims=True)
    return -weight * P * (1.0 + logits - expect)


def _wd_grad_stopgrad(P, Z, W, s, weight):
    # Closed form with the posterior treated as constant.
    return 2.0 * s * weight * (P.sum(axis=0)[:, None] * W - P.T @ Z)


def grad_lse(proto: Prototypes, X, scale_source="gamma"):
    """Analytic gradient of the log-sum-exp loss w.r.t. W."""
    s = proto.scale(scale_source)
    Z = l2_normalize(np.asarray(X, dtype=np.float64))
    P = softmax(_logits(proto.W, Z, s))
    return _chain_to_w(-P, Z, proto.W, s)


def grad_wd(proto: Prototypes, X, treat_weights_as_constant=True, scale_source="gamma"):
    """Gradient of the pull/push weighted-distance term w.r.t. W."""
    s = proto.scale(scale_source)
    Z = l2_normalize(np.asarray(X, dtype=np.float64))
    logits = _logits(proto.W, Z, s)
    P = softmax(logits)
    if treat_weights_as_constant:
        return _wd_grad_stopgrad(P, Z, proto.W, s, 1.0)
    return _chain_to_w(_ed_logit_grad(logits, P, 1.0), Z, proto.W, s)


def grad_tim(proto: Prototypes, episode: Episode, w: TimWeights, scale_source="tau"):
    """Exact gradient of the information-maximization loss w.r.t. W."""
    s = proto.scale(scale_source)
    W = proto.W
    grad = np.zeros_like(W)
    if w.use_ce:
        Zs = l2_normalize(episode.support_x)
        Ps = softmax(_logits(W, Zs, s))
        y1 = np.eye(W.shape[0])[episode.support_y]
        grad += _chain_to_w(_ce_logit_grad(Ps, y1, w.lambda_ce), Zs, W, s)
    if (w.use_conditional or w.use_marginal) and len(episode.query_x) > 0:
        Zq = l2_normalize(episode.query_x)
        Pq = softmax(_logits(W, Zq, s))
        G = np.zeros_like(Pq)
        if w.use_conditional:
            G += _cond_entropy_logit_grad(Pq, w.alpha_cond)
        if w.use_marginal:
            G -= _marg_entropy_logit_grad(Pq, 1.0)
        grad += _chain_to_w(G, Zq, W, s)
    if not np.all(np.isfinite(grad)):
        raise NumericDivergenceError("non-finite gradient in information-maximization loss")
    return grad


def grad_poodle(
    proto: Prototypes,
    episode: Episode,
    positives,
    negatives,
    w: PoodleWeights,
    scale_source="gamma",
):
    """Gradient of CE + alpha*pull - beta*push w.r.t. W."""
    s = proto.scale(scale_source)
    W = proto.W
    Zs = l2_normalize(episode.support_x)
    Ps = softmax(_logits(W, Zs, s))
    y1 = np.eye(W.shape[0])[episode.support_y]
    grad = _chain_to_w(_ce_logit_grad(Ps, y1, 1.0), Zs, W, s)
    if positives is not None and len(positives) > 0 and w.alpha_pull > 0:
        grad += w.alpha_pull * grad_wd(proto, positives, w.stop_grad_pull, scale_source)
    if negatives is not None and len(negatives) > 0 and w.beta_push > 0:
        grad -= w.beta_push * grad_wd(proto, negatives, w.stop_grad_push, scale_source)
    if not np.all(np.isfinite(grad)):
        raise NumericDivergenceError("non-finite gradient in margin loss")
    return grad


@dataclass
class SolverTrace:
    """Per-iteration records; index 0 is the initialization state."""

    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    mutual_information: list = field(default_factory=list)
    wall_seconds: list = field(default_factory=list)
    diverged: bool = False

    def record(self, loss, acc, mi, seconds):
        self.loss.append(float(loss))
        self.accuracy.append(float(acc))
        self.mutual_information.append(float(mi))
        self.wall_seconds.append(float(seconds))

    def __len__(self):
        return len(self.loss)


def _check_finite(loss, trace, iteration):
    if not np.isfinite(loss) or abs(loss) > DIVERGENCE_LIMIT:
        trace.diverged = True
        raise NumericDivergenceError(
            f"loss diverged at iteration {iteration}: {loss}", trace, iteration
        )


def _safe_log_rows(P):
    return np.log(np.clip(P, LOG_CLAMP, None))


def _logits_pre(W, Z, z2, s):
    # Same as _logits with ||z||^2 hoisted out of the solver loop.
    d = z2[:, None] + np.sum(W * W, axis=1)[None, :] - 2.0 * (Z @ W.T)
    np.maximum(d, 0.0, out=d)
    return -s * d


def _run_tim_gd_fast(episode, weights, iters, lr, tau, proto):
    """Trace-free variant of the W-only solver; identical iterates."""
    W = proto.W.copy()
    K = W.shape[0]
    Zs = l2_normalize(episode.support_x)
    has_queries = len(episode.query_x) > 0 and (
        weights.use_conditional or weights.use_marginal
    )
    ns = len(episode.support_y)
    nq = len(episode.query_y)
    Z = np.vstack([Zs, l2_normalize(episode.query_x)]) if has_queries else Zs
    z2 = np.sum(Z * Z, axis=1)
    y1 = np.eye(K)[episode.support_y]
    s = tau

    state = AdamState.for_params(W, lr=lr)
    for it in range(iters):
        logits = _logits_pre(W, Z, z2, s)
        P = softmax(logits)
        G = np.zeros_like(P)
        if weights.use_ce:
            G[:ns] = _ce_logit_grad(P[:ns], y1, weights.lambda_ce)
        if has_queries:
            Pq = P[ns:]
            logPq = _safe_log_rows(Pq)
            if weights.use_conditional:
                row_ent = -np.sum(Pq * logPq, axis=1)
                G[ns:] += (-weights.alpha_cond / nq) * Pq * (logPq + row_ent[:, None])
            if weights.use_marginal:
                p_bar = Pq.mean(axis=0)
                log_pbar = _safe_log_rows(p_bar)
                centered = log_pbar[None, :] - (Pq @ log_pbar)[:, None]
                G[ns:] += (1.0 / nq) * Pq * centered
        W = adam_step(state, W, _chain_to_w(G, Z, W, s))
        if not np.all(np.isfinite(W)):
            trace = SolverTrace()
            trace.diverged = True
            raise NumericDivergenceError(
                f"prototypes diverged at iteration {it}", trace, it
            )
    return proto.with_weights(W), SolverTrace()


def run_tim_gd(
    episode: Episode,
    weights: TimWeights = TimWeights(),
    iters: int = 1000,
    lr: float = 1e-3,
    tau: float = 15.0,
    record_trace: bool = True,
):
    """Adam on W only, the feature embeddings stay fixed.

    Returns (Prototypes, SolverTrace); the trace has iters + 1 records
    when ``record_trace`` is on, and is empty otherwise (the iterates are
    identical either way).
    """
    proto = init_prototypes(episode, tau=tau)
    if not record_trace:
        return _run_tim_gd_fast(episode, weights, iters, lr, tau, proto)
    W = proto.W.copy()
    K = W.shape[0]
    Zs = l2_normalize(episode.support_x)
    has_queries = len(episode.query_x) > 0
    Zq = l2_normalize(episode.query_x) if has_queries else None
    y = episode.support_y
    y1 = np.eye(K)[y]
    ns = len(y)
    nq = len(episode.query_y)
    s = tau

    state = AdamState.for_params(W, lr=lr)
    trace = SolverTrace()
    start = time.perf_counter()

    for it in range(iters + 1):
        Ps = softmax(_logits(W, Zs, s))
        logPs = _safe_log_rows(Ps)
        loss = 0.0
        G_s = None
        if weights.use_ce:
            loss += weights.lambda_ce * (-np.mean(logPs[np.arange(ns), y]))
            G_s = _ce_logit_grad(Ps, y1, weights.lambda_ce)

        acc = np.nan
        mi = np.nan
        G_q = None
        if has_queries:
            logits_q = _logits(W, Zq, s)
            Pq = softmax(logits_q)
            logPq = _safe_log_rows(Pq)
            row_ent = -np.sum(Pq * logPq, axis=1)
            cond = float(np.mean(row_ent))
            p_bar = Pq.mean(axis=0)
            marg = float(-np.sum(p_bar * _safe_log_rows(p_bar)))
            mi = marg - cond
            acc = float(np.mean(np.argmax(Pq, axis=1) == episode.query_y))
            if weights.use_conditional:
                loss += weights.alpha_cond * cond
            if weights.use_marginal:
                loss -= marg
            G_q = np.zeros_like(Pq)
            if weights.use_conditional:
                G_q += (-weights.alpha_cond / nq) * Pq * (logPq + row_ent[:, None])
            if weights.use_marginal:
                log_pbar = _safe_log_rows(p_bar)
                centered = log_pbar[None, :] - (Pq @ log_pbar)[:, None]
                G_q -= (-1.0 / nq) * Pq * centered

        trace.record(loss, acc, mi, time.perf_counter() - start)
        _check_finite(loss, trace, it)
        if it == iters:
            break

        grad = np.zeros_like(W)
        if G_s is not None:
            grad += _chain_to_w(G_s, Zs, W, s)
        if G_q is not None:
            grad += _chain_to_w(G_q, Zq, W, s)
        W = adam_step(state, W, grad)

    return proto.with_weights(W), trace


def run_entmin(episode: Episode, iters: int = 1000, lr: float = 1e-3, tau: float = 15.0,
               record_trace: bool = True):
    """Entropy-minimization baseline: CE + H(Y|X) over W, no marginal term."""
    weights = TimWeights(lambda_ce=1.0, alpha_cond=1.0, use_marginal=False)
    return run_tim_gd(episode, weights, iters=iters, lr=lr, tau=tau,
                      record_trace=record_trace)


def run_poodle(
    episode: Episode,
    weights: PoodleWeights = PoodleWeights(),
    mode: str = "transductive",
    iters: int = 250,
    lr: float = 1e-3,
    gamma: float = 10.0,
    learn_gamma: bool = False,
    record_trace: bool = True,
):
    """Margin-loss solver: Adam on W (and optionally gamma).

    ``mode`` selects the positives: support only (inductive) or support
    plus query (transductive). Negatives come from the episode, if any.
    With ``record_trace`` off the trace is empty but iterates are identical.
    """
    if mode not in ("inductive", "transductive"):
        raise ValueError(f"unknown mode {mode!r}")
    proto = init_prototypes(episode, gamma=gamma)
    W = proto.W.copy()
    K = W.shape[0]
    Zs = l2_normalize(episode.support_x)
    has_queries = len(episode.query_x) > 0
    Zq = l2_normalize(episode.query_x) if has_queries else None
    if mode == "transductive" and has_queries:
        Zp = np.vstack([Zs, Zq])
    else:
        Zp = Zs
    Zn = None
    if episode.negatives_x is not None and len(episode.negatives_x) > 0:
        Zn = l2_normalize(episode.negatives_x)
    y = episode.support_y
    y1 = np.eye(K)[y]
    ns = len(y)
    s = gamma

    state = AdamState.for_params(W, lr=lr)
    gamma_state = AdamState.for_params(np.zeros(1), lr=lr) if learn_gamma else None
    trace = SolverTrace()
    start = time.perf_counter()

    for it in range(iters + 1):
        logits_s = _logits(W, Zs, s)
        Ps = softmax(logits_s)
        logits_p = _logits(W, Zp, s)
        Pp = softmax(logits_p)
        Pn = logits_n = None
        if Zn is not None:
            logits_n = _logits(W, Zn, s)
            Pn = softmax(logits_n)

        if record_trace:
            loss = -np.mean(_safe_log_rows(Ps)[np.arange(ns), y])
            loss += weights.alpha_pull * float(-np.sum(logits_p * Pp))
            if Pn is not None:
                loss -= weights.beta_push * float(-np.sum(logits_n * Pn))
            acc = np.nan
            mi = np.nan
            if has_queries:
                Pq = softmax(_logits(W, Zq, s))
                mi = mutual_information(Pq)
                acc = float(np.mean(np.argmax(Pq, axis=1) == episode.query_y))
            trace.record(loss, acc, mi, time.perf_counter() - start)
            _check_finite(loss, trace, it)
        elif not np.all(np.isfinite(W)):
            trace.diverged = True
            raise NumericDivergenceError(
                f"prototypes diverged at iteration {it}", trace, it
            )
        if it == iters:
            break

        grad = _chain_to_w(_ce_logit_grad(Ps, y1, 1.0), Zs, W, s)
        if weights.stop_grad_pull:
            grad += weights.alpha_pull * _wd_grad_stopgrad(Pp, Zp, W, s, 1.0)
        else:
            grad += weights.alpha_pull * _chain_to_w(
                _ed_logit_grad(logits_p, Pp, 1.0), Zp, W, s
            )
        if Zn is not None:
            if weights.stop_grad_push:
                grad -= weights.beta_push * _wd_grad_stopgrad(Pn, Zn, W, s, 1.0)
            else:
                grad -= weights.beta_push * _chain_to_w(
                    _ed_logit_grad(logits_n, Pn, 1.0), Zn, W, s
                )

        if learn_gamma:
            d_s = _gamma_derivative(W, Zs, Zp, Zn, logits_s, logits_p, logits_n,
                                    Ps, Pp, Pn, y, weights, s)
            new_s = adam_step(gamma_state, np.array([s]), np.array([d_s]))
            s = float(max(new_s[0], 1e-6))
        W = adam_step(state, W, grad)

    return Prototypes(W=W, gamma=s, tau=proto.tau), trace


def _gamma_derivative(W, Zs, Zp, Zn, logits_s, logits_p, logits_n,
                      Ps, Pp, Pn, y, weights, s):
    """Total derivative of the margin loss w.r.t. the scale factor."""
    # Logits are linear in s: dL[i,k]/ds = L[i,k] / s.
    ns = len(y)
    y1 = np.eye(W.shape[0])[y]
    d = float(np.sum(_ce_logit_grad(Ps, y1, 1.0) * logits_s)) / s
    if weights.stop_grad_pull:
        d += weights.alpha_pull * float(-np.sum(logits_p * Pp)) / s
    else:
        d += weights.alpha_pull * float(np.sum(_ed_logit_grad(logits_p, Pp, 1.0) * logits_p)) / s
    if Zn is not None:
        if weights.stop_grad_push:
            d -= weights.beta_push * float(-np.sum(logits_n * Pn)) / s
        else:
            d -= weights.beta_push * float(np.sum(_ed_logit_grad(logits_n, Pn, 1.0) * logits_n)) / s
    return d
