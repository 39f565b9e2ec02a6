"""Alternating-direction solver for the information-maximization objective.

Instead of gradient steps on W, the query posterior is decoupled into an
auxiliary soft assignment q (rows on the simplex) and the two blocks are
updated in closed form. The surrogate being minimized is

    F(W, q) = (lam/|S|) * sum_{i in S} s*d(z_i, w_{y_i})
            + (a/|Q|)   * sum_{i in Q, k} q[i,k] * s*d(z_i, w_k)
            + (c/|Q|)   * sum_{i in Q, k} q[i,k] * log q[i,k]
            + m * sum_k q_bar[k] * log q_bar[k]

with q_bar the column means of q, a the query-coupling weight, c the
entropic weight, and m in {0, 1} switching the marginal-balancing term.
Both block updates minimize F exactly, so F never increases.
See docs/adm_derivation.md for the full derivation and the mapping from
the loss weights to (a, c, m).
"""

from __future__ import annotations

import time

import numpy as np

from fsi.classifier import Prototypes, init_prototypes, posterior, softmax
from fsi.episodes import Episode
from fsi.features import l2_normalize
from fsi.losses import LOG_CLAMP, TimWeights, tim_loss, mutual_information
from fsi.optim import NumericDivergenceError, SolverTrace, _logits

_FIXED_POINT_TOL = 1e-15
_FIXED_POINT_MAX_ITERS = 10_000


def _coeffs(weights: TimWeights):
    """Map loss weights/flags to the surrogate coefficients (lam, a, c, m)."""
    lam = weights.lambda_ce if weights.use_ce else 0.0
    a = (weights.alpha_cond if weights.use_conditional else 0.0) + (
        1.0 if weights.use_marginal else 0.0
    )
    c = a if a > 0 else 1.0
    m = 1.0 if weights.use_marginal else 0.0
    return lam, a, c, m


def _solve_q(log_base, m_over_c, q0):
    """Exact minimizer of the strictly convex q-subproblem.

    Stationarity gives q[i,k] proportional to exp(log_base[i,k]) * r_k with
    r_k = q_bar[k]^(-m/c); r is resolved by fixed-point iteration on the
    K-dimensional column means, which is cheap and converges to the unique
    minimizer.
    """
    if m_over_c == 0.0:
        return softmax(log_base)
    log_r0 = -m_over_c * np.log(np.clip(q0.mean(axis=0), LOG_CLAMP, None))
    log_r = _solve_log_r(log_base, m_over_c, log_r0)
    return softmax(log_base + log_r[None, :])


def _solve_log_r(log_base, m_over_c, log_r0):
    """Converged balancing offsets for the q-subproblem.

    Plain iteration of the map contracts slowly when the column means are
    nearly balanced, so accelerate with Aitken extrapolation (Steffensen):
    two map evaluations per step, near-quadratic convergence at the root.
    """

    def step_and_q(log_r):
        q = softmax(log_base + log_r[None, :])
        return -m_over_c * np.log(np.clip(q.mean(axis=0), LOG_CLAMP, None)), q

    # Newton's method on g(r) = step(r) - r. The Jacobian of the map is
    # A[j,l] = -(m/c) / u_j * mean_i q[i,j] (delta_jl - q[i,l]) with u the
    # column means; A 1 = 0 by shift invariance, so A - I is nonsingular.
    log_r = np.asarray(log_r0, dtype=np.float64)
    K = log_r.shape[0]
    eye = np.eye(K)
    for _ in range(_FIXED_POINT_MAX_ITERS):
        r1, q = step_and_q(log_r)
        g = r1 - log_r
        if np.max(np.abs(g)) < _FIXED_POINT_TOL:
            return r1
        u = q.mean(axis=0)
        A = (-m_over_c / np.clip(u, LOG_CLAMP, None))[:, None] * (
            np.diag(u) - (q.T @ q) / q.shape[0]
        )
        try:
            delta = np.linalg.solve(A - eye, -g)
        except np.linalg.LinAlgError:
            delta = g  # fall back to the plain fixed-point step
        if not np.all(np.isfinite(delta)) or np.max(np.abs(delta)) > 10.0:
            delta = g
        log_r = log_r + delta
    return log_r


def update_q(proto: Prototypes, query_x, q_prev, weights: TimWeights, tau=None):
    """Closed-form simplex-projected assignment update.

    Each row combines the scaled log-posterior with a marginal-balancing
    factor; rows stay on the simplex exactly.
    """
    s = proto.tau if tau is None else tau
    _, a, c, m = _coeffs(weights)
    Zq = l2_normalize(np.asarray(query_x, dtype=np.float64))
    logits = _logits(proto.W, Zq, s)
    q = _solve_q((a / c) * logits, m / c, q_prev)
    if not np.all(np.isfinite(q)):
        raise NumericDivergenceError("non-finite assignment update")
    return q


def update_w(support_x, support_y, query_x, q, weights: TimWeights,
             proto: Prototypes) -> Prototypes:
    """Closed-form weighted-mean update: each w_k is a convex combination of
    the support features of class k and the q-weighted query features."""
    lam, a, _, _ = _coeffs(weights)
    support_x = np.asarray(support_x, dtype=np.float64)
    K = proto.ways
    ns = len(support_y)
    nq = len(q)
    num = np.zeros_like(proto.W)
    den = np.zeros(K)
    if lam > 0:
        for k in range(K):
            mask = support_y == k
            num[k] += (lam / ns) * support_x[mask].sum(axis=0)
            den[k] += (lam / ns) * mask.sum()
    if a > 0 and nq > 0:
        Zq = l2_normalize(np.asarray(query_x, dtype=np.float64))
        num += (a / nq) * (q.T @ Zq)
        den += (a / nq) * q.sum(axis=0)
    W = proto.W.copy()
    active = den > 0
    W[active] = num[active] / den[active, None]
    return proto.with_weights(W)


def surrogate_value(proto: Prototypes, support_x, support_y, query_x, q,
                    weights: TimWeights, tau=None):
    """Value of the surrogate F(W, q); used to verify block monotonicity."""
    s = proto.tau if tau is None else tau
    lam, a, c, m = _coeffs(weights)
    value = 0.0
    if lam > 0:
        Zs = l2_normalize(np.asarray(support_x, dtype=np.float64))
        d_s = -_logits(proto.W, Zs, s) / s
        value += (lam / len(support_y)) * s * float(
            np.sum(d_s[np.arange(len(support_y)), support_y])
        )
    nq = len(q)
    if nq > 0:
        Zq = l2_normalize(np.asarray(query_x, dtype=np.float64))
        d_q = -_logits(proto.W, Zq, s) / s
        value += (a / nq) * s * float(np.sum(q * d_q))
        value += (c / nq) * float(np.sum(q * np.log(np.clip(q, LOG_CLAMP, None))))
        q_bar = q.mean(axis=0)
        value += m * float(np.sum(q_bar * np.log(np.clip(q_bar, LOG_CLAMP, None))))
    return value


def _run_tim_adm_fast(episode, weights, iters, tau, proto):
    """Trace-free fused variant of the alternating solver; same iterates.

    Normalized features, squared norms and the support-side sums of the
    prototype update are hoisted out of the loop, and the inner fixed
    point warm-starts from the previous outer iteration's offsets.
    """
    lam, a, c, m = _coeffs(weights)
    s = tau
    W = proto.W
    K = proto.ways
    ns = len(episode.support_y)
    nq = len(episode.query_y)
    if nq == 0 or a == 0:
        # Without query coupling the prototype update is support-only and
        # the iteration is stationary after one step.
        q = np.zeros((0, K))
        for _ in range(min(iters, 1)):
            proto = update_w(episode.support_x, episode.support_y,
                             episode.query_x, q, weights, proto)
        return proto, SolverTrace()

    Zq = l2_normalize(np.asarray(episode.query_x, dtype=np.float64))
    z2q = np.sum(Zq * Zq, axis=1)
    support_x = np.asarray(episode.support_x, dtype=np.float64)
    num_s = np.zeros_like(W)
    den_s = np.zeros(K)
    if lam > 0:
        for k in range(K):
            mask = episode.support_y == k
            num_s[k] = (lam / ns) * support_x[mask].sum(axis=0)
            den_s[k] = (lam / ns) * mask.sum()

    d0 = z2q[:, None] + np.sum(W * W, axis=1)[None, :] - 2.0 * (Zq @ W.T)
    np.maximum(d0, 0.0, out=d0)
    q = softmax(-s * d0)
    log_r = None
    m_over_c = m / c
    for it in range(iters):
        d = z2q[:, None] + np.sum(W * W, axis=1)[None, :] - 2.0 * (Zq @ W.T)
        np.maximum(d, 0.0, out=d)
        log_base = (a / c) * (-s * d)
        if m_over_c == 0.0:
            q = softmax(log_base)
        else:
            if log_r is None:
                log_r = -m_over_c * np.log(np.clip(q.mean(axis=0), LOG_CLAMP, None))
            log_r = _solve_log_r(log_base, m_over_c, log_r)
            q = softmax(log_base + log_r[None, :])
        num = num_s + (a / nq) * (q.T @ Zq)
        den = den_s + (a / nq) * q.sum(axis=0)
        active = den > 0
        W = W.copy()
        W[active] = num[active] / den[active, None]
        if not np.all(np.isfinite(W)):
            trace = SolverTrace()
            trace.diverged = True
            raise NumericDivergenceError(
                f"prototypes diverged at iteration {it}", trace, it
            )
    return proto.with_weights(W), SolverTrace()


def run_tim_adm(
    episode: Episode,
    weights: TimWeights = TimWeights(),
    iters: int = 150,
    tau: float = 15.0,
    record_trace: bool = True,
):
    """Alternate assignment and prototype updates; the trace records the true
    information-maximization loss, query accuracy and mutual information.
    With ``record_trace`` off the trace is empty but iterates are identical."""
    proto = init_prototypes(episode, tau=tau)
    if not record_trace:
        return _run_tim_adm_fast(episode, weights, iters, tau, proto)
    has_queries = len(episode.query_x) > 0
    q = posterior(proto, episode.query_x, "tau") if has_queries else None

    trace = SolverTrace()
    start = time.perf_counter()

    for it in range(iters + 1):
        if record_trace:
            Ps = posterior(proto, episode.support_x, "tau")
            acc = np.nan
            mi = np.nan
            if has_queries:
                Pq = posterior(proto, episode.query_x, "tau")
                mi = mutual_information(Pq)
                acc = float(np.mean(np.argmax(Pq, axis=1) == episode.query_y))
                loss = tim_loss(Ps, episode.support_y, Pq, weights)
            else:
                from fsi.losses import cross_entropy

                loss = (
                    weights.lambda_ce * cross_entropy(Ps, episode.support_y)
                    if weights.use_ce
                    else 0.0
                )
            trace.record(loss, acc, mi, time.perf_counter() - start)
            if not np.isfinite(loss):
                trace.diverged = True
                raise NumericDivergenceError(
                    f"loss diverged at iteration {it}", trace, it
                )
        elif not np.all(np.isfinite(proto.W)):
            trace.diverged = True
            raise NumericDivergenceError(
                f"prototypes diverged at iteration {it}", trace, it
            )
        if it == iters:
            break

        if has_queries:
            q = update_q(proto, episode.query_x, q, weights, tau)
        proto = update_w(
            episode.support_x, episode.support_y, episode.query_x,
            q if has_queries else np.zeros((0, proto.ways)), weights, proto
        )

    return proto, trace
