"""Independent reference implementations evaluated in 50-digit arithmetic.

Each loss is written straight from its definition, without the stabilizing
rewrites used by the kernels, so agreement is evidence that the rewrites are
exact.
"""

from __future__ import annotations

import mpmath as mp
import numpy as np

mp.mp.dps = 50


def _m(x):
    return [mp.mpf(float(v)) for v in np.ravel(x)]


def softmax_full(pos, all_scores):
    e = [mp.e ** s for s in _m(all_scores)]
    return -mp.log(mp.e ** mp.mpf(float(pos)) / mp.fsum(e))


def sampled_softmax(pos, negs, q):
    p = mp.mpf(float(pos))
    terms = [mp.e ** (s - mp.log(qq)) for s, qq in zip(_m(negs), _m(q))]
    return -mp.log(mp.e ** p / (mp.e ** p + mp.fsum(terms)))


def infonce(pos, negs, t):
    t = mp.mpf(t)
    p = mp.mpf(float(pos)) / t
    z = [mp.e ** (s / t) for s in _m(negs)]
    return -mp.log(mp.e ** p / (mp.e ** p + mp.fsum(z)))


def debiased_infonce(pos, negs, extra, tau, t, lam):
    t, tau, lam = mp.mpf(t), mp.mpf(float(tau)), mp.mpf(lam)
    n, m = len(np.ravel(negs)), len(np.ravel(extra))
    neg_mean = mp.fsum(mp.e ** (s / t) for s in _m(negs)) / n
    pos_mean = mp.fsum(mp.e ** (s / t) for s in _m(extra)) / m
    g = max((neg_mean - tau * pos_mean) / (1 - tau), mp.e ** (-1 / t))
    p = mp.e ** (mp.mpf(float(pos)) / t)
    return -mp.log(p / (p + lam * g))


def mine(pos, negs):
    return -(mp.mpf(float(pos)) - mp.log(mp.fsum(mp.e ** s for s in _m(negs))))


def mine_plus(pos, negs, t, lam):
    t, lam = mp.mpf(t), mp.mpf(lam)
    return -mp.mpf(float(pos)) / t + lam * mp.log(mp.fsum(mp.e ** (s / t) for s in _m(negs)))


def bpr(pos, negs):
    p = mp.mpf(float(pos))
    return mp.fsum(-mp.log(1 / (1 + mp.e ** (-(p - s)))) for s in _m(negs))


def _l_neg(s, kind, eps):
    if kind == "mse":
        return s * s
    return max(s - mp.mpf(eps), mp.mpf(0))


def _l_pos(s, kind):
    return (1 - s) ** 2 if kind == "mse" else 1 - s


def pointwise(pos, negs, kind, eps, w):
    negs = _m(negs)
    return _l_pos(mp.mpf(float(pos)), kind) + mp.mpf(w) * mp.fsum(_l_neg(s, kind, eps) for s in negs) / len(negs)


def debiased_pointwise(pos, negs, extra, tau, kind, eps, lam, clamp=True):
    negs, extra, tau = _m(negs), _m(extra), mp.mpf(float(tau))
    bracket = (mp.fsum(_l_neg(s, kind, eps) for s in negs) / len(negs)
               - tau * mp.fsum(_l_neg(s, kind, eps) for s in extra) / len(extra))
    if clamp:
        bracket = max(bracket, mp.mpf(0))
    return tau * _l_pos(mp.mpf(float(pos)), kind) + mp.mpf(lam) * bracket


def loss(spec, pos, negs, extra=None, tau=None, q=None):
    """Dispatch on a LossSpec; returns an mpf."""
    f = spec.family
    n = len(np.ravel(negs))
    if f == "softmax_full":
        return softmax_full(pos, negs)
    if f == "sampled_softmax":
        return sampled_softmax(pos, negs, q)
    if f == "infonce":
        return infonce(pos, negs, spec.t)
    if f == "debiased_infonce":
        return debiased_infonce(pos, negs, extra, tau, spec.t, spec.lam(n))
    if f == "mine":
        return mine(pos, negs)
    if f == "mine_plus":
        return mine_plus(pos, negs, spec.t, spec.lam(n))
    if f == "bpr":
        if spec.bound_only:
            return mp.fsum(s - mp.mpf(float(pos)) for s in _m(negs)) / n
        return bpr(pos, negs)
    if f in ("mse", "ccl"):
        return pointwise(pos, negs, f, spec.margin or 0.0, spec.ccl_weight)
    kind = "mse" if f == "debiased_mse" else "ccl"
    return debiased_pointwise(pos, negs, extra, tau, kind, spec.margin or 0.0, spec.lam(n), spec.clamp)


def ease_column_solve(X, lam, alpha=0.0, debiased=False):
    """Item-item weights by solving each column's constrained ridge problem separately.

    Column j minimizes ||X e_j - X w||^2 - a ||X w||^2 + lam ||w||^2 (plain
    EASE when a = 0) subject to w_j = 0: drop row/column j of the Gram matrix
    and solve the reduced normal equations ((1 - a) G + lam I) w = g_j.
    """
    X = np.asarray(X, dtype=np.float64)
    G = mp.matrix((X.T @ X).tolist())
    n = G.rows
    a = mp.mpf(alpha) if debiased else mp.mpf(0)
    W = np.zeros((n, n))
    for j in range(n):
        keep = [i for i in range(n) if i != j]
        A = mp.matrix(n - 1, n - 1)
        b = mp.matrix(n - 1, 1)
        for r, i in enumerate(keep):
            b[r] = G[i, j]
            for c, k in enumerate(keep):
                A[r, c] = (1 - a) * G[i, k] + (mp.mpf(lam) if i == k else 0)
        w = mp.lu_solve(A, b)
        for r, i in enumerate(keep):
            W[i, j] = float(w[r])
    return W
