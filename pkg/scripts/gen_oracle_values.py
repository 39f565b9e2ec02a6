#!/usr/bin/env python3
"""Generate high-precision reference values for the test suite.

Deliberately independent of the package: inputs are rebuilt from bare
numpy RNG calls and all math is done with mpmath scalar loops at 50
digits, then printed to 17 significant digits for freezing into tests.
Run: python3 scripts/gen_oracle_values.py
"""

import numpy as np
from mpmath import mp, mpf, exp, log, sqrt

mp.dps = 50


def normalize_rows(X):
    out = []
    for row in X:
        n = sqrt(sum(mpf(v) ** 2 for v in row))
        out.append([mpf(v) / n for v in row])
    return out


def sq_dist(z, w):
    return sum((a - mpf(b)) ** 2 for a, b in zip(z, w))


def softmax_row(logits):
    m = max(logits)
    e = [exp(v - m) for v in logits]
    s = sum(e)
    return [v / s for v in e]


def posterior(X, W, s):
    Z = normalize_rows(X)
    P = []
    for z in Z:
        logits = [-mpf(s) * sq_dist(z, w) for w in W]
        P.append(softmax_row(logits))
    return P


def fmt(x):
    return mp.nstr(x, 17)


def show_matrix(name, M):
    print(f"{name} = [")
    for row in M:
        print("    [" + ", ".join(fmt(v) for v in row) + "],")
    print("]")


def main():
    # --- instance A: posteriors and scalar losses -----------------------
    rng = np.random.default_rng(123)
    X = rng.normal(size=(5, 4))
    W = rng.normal(size=(3, 4))
    s = 7.5
    print("# instance A: rng(123), X=normal(5,4), W=normal(3,4), s=7.5")
    P = posterior(X, W, s)
    show_matrix("POSTERIOR_A", P)

    y = [0, 1, 2, 0, 1]
    ce = -sum(log(P[i][y[i]]) for i in range(5)) / 5
    print("CE_A =", fmt(ce))
    hcond = -sum(sum(p * log(p) for p in row) for row in P) / 5
    print("HCOND_A =", fmt(hcond))
    pbar = [sum(P[i][k] for i in range(5)) / 5 for k in range(3)]
    hmarg = -sum(p * log(p) for p in pbar)
    print("HMARG_A =", fmt(hmarg))
    tim = mpf("0.1") * ce + mpf("0.1") * hcond - hmarg
    print("TIM_A =", fmt(tim))

    Z = normalize_rows(X)
    dists = [[sq_dist(z, w) for w in W] for z in Z]
    lwd = sum(
        mpf(s) * dists[i][k] * P[i][k] for i in range(5) for k in range(3)
    )
    print("LWD_A =", fmt(lwd))
    lse = -sum(
        log(sum(exp(-mpf(s) * dists[i][k]) for k in range(3))) for i in range(5)
    )
    print("LLSE_A =", fmt(lse))
    rowent = sum(-sum(p * log(p) for p in row) for row in P)
    print("ROWENT_SUM_A =", fmt(rowent))
    print("decomposition residual (lwd - (rowent + lse)) =",
          fmt(lwd - (rowent + lse)))

    # --- instance B: margin loss with negatives -------------------------
    rngn = np.random.default_rng(321)
    XN = rngn.normal(size=(4, 4))
    PN = posterior(XN, W, s)
    ZN = normalize_rows(XN)
    dN = [[sq_dist(z, w) for w in W] for z in ZN]
    push = sum(mpf(s) * dN[i][k] * PN[i][k] for i in range(4) for k in range(3))
    # support = rows 0..2 of X with labels [0,1,2]; positives = all 5 rows
    ce_support = -sum(log(P[i][y[i]]) for i in range(3)) / 3
    poodle = ce_support + mpf(1.0) * lwd - mpf("0.5") * push
    print("# instance B: negatives rng(321) normal(4,4); support rows 0..2 labels 0,1,2")
    print("PUSH_B =", fmt(push))
    print("CE_SUPPORT_B =", fmt(ce_support))
    print("POODLE_B =", fmt(poodle))

    # --- one-step adam on a hand-picked gradient ------------------------
    print("# adam one step: params [1.0,-2.0], grad [0.5,-1.5], lr 1e-3")
    for p, g in [(mpf(1), mpf("0.5")), (mpf(-2), mpf("-1.5"))]:
        m1 = (1 - mpf("0.9")) * g
        v1 = (1 - mpf("0.999")) * g * g
        mhat = m1 / (1 - mpf("0.9"))
        vhat = v1 / (1 - mpf("0.999"))
        upd = p - mpf("0.001") * mhat / (sqrt(vhat) + mpf("1e-8"))
        print("ADAM_STEP:", fmt(upd))

    # --- two-point softmax example --------------------------------------
    print("# z=(1,0), w0=(1,0), w1=(0,1), s=15 -> d=(0,2)")
    p0 = 1 / (1 + exp(mpf(-30)))
    print("P2_0 =", fmt(p0))
    print("P2_1 =", fmt(1 - p0))

    # --- largest remainder ----------------------------------------------
    print("# largest remainder probs [0.42,0.265,0.315] total 10 -> [4,3,3]")
    print("# tie case [0.25 x4] total 2 -> [1,1,0,0]")


if __name__ == "__main__":
    main()
