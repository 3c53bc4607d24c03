"""Brute-force reference implementations, written loop-by-loop with the math module.

Nothing here imports the package's numeric code paths.
"""

import itertools
import math


def attention_logits_loops(F, S, U, V, P_mat, b, w):
    """A[p][c] = sum_j w[j] * (sum_i tanh(fu_p[i] * sv_c[i]) * P_mat[i][j] + b[j])."""
    n_p, d_v = len(F), len(F[0])
    n_c = len(S)
    d_1, d_2 = len(U[0]), len(w)
    fu = [[sum(F[p][k] * U[k][i] for k in range(d_v)) for i in range(d_1)] for p in range(n_p)]
    sv = [[sum(S[c][k] * V[k][i] for k in range(d_v)) for i in range(d_1)] for c in range(n_c)]
    out = [[0.0] * n_c for _ in range(n_p)]
    for p in range(n_p):
        for c in range(n_c):
            h = [math.tanh(fu[p][i] * sv[c][i]) for i in range(d_1)]
            z = [sum(h[i] * P_mat[i][j] for i in range(d_1)) + b[j] for j in range(d_2)]
            out[p][c] = sum(z[j] * w[j] for j in range(d_2))
    return out


def aggregate_loops(M):
    n_p, n_c = len(M), len(M[0])
    out = []
    for c in range(n_c):
        col = [M[p][c] for p in range(n_p)]
        top = max(col)
        e = [math.exp(x - top) for x in col]
        z = sum(e)
        out.append(sum(x * ei / z for x, ei in zip(col, e)))
    return out


def asl_scalar(p, y, gamma_pos, gamma_neg, clip, eps=1e-7):
    p = min(max(p, eps), 1 - eps)
    if y == 1:
        return (1 - p) ** gamma_pos * -math.log(p)
    pm = max(p - clip, 0.0)
    weight = 0.0 if (pm == 0.0 and gamma_neg > 0) else pm**gamma_neg
    return weight * -math.log(1 - pm)


def asl_soft_loops(probs, targets, gamma_pos, gamma_neg, clip):
    return sum(
        t * asl_scalar(p, 1, gamma_pos, gamma_neg, clip) + (1 - t) * asl_scalar(p, 0, gamma_pos, gamma_neg, clip)
        for p, t in zip(probs, targets)
    )


def masked_asl_loops(probs, labels, gamma_pos, gamma_neg, clip):
    return sum(asl_scalar(p, y, gamma_pos, gamma_neg, clip) for p, y in zip(probs, labels) if y != -1)


def sigmoid(x):
    return 1 / (1 + math.exp(-x))


def average_precision_bruteforce(scores, relevance, ids=None):
    """Rank by (score desc, id asc) and average precision@k over relevant positions."""
    ids = list(range(len(scores))) if ids is None else list(ids)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], ids[i]))
    hits, total = 0, 0.0
    for k, i in enumerate(order, start=1):
        if relevance[i]:
            hits += 1
            total += hits / k
    return total / sum(1 for r in relevance if r)


def auc_pairwise(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0.0
    for a, b in itertools.product(pos, neg):
        wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def central_difference(f, x, h=1e-5):
    """Gradient of scalar f at numpy array x (perturbed in place, restored)."""
    import numpy as np

    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        fp = f(x)
        flat[j] = orig - h
        fm = f(x)
        flat[j] = orig
        gflat[j] = (fp - fm) / (2 * h)
    return g
