"""Pure-numpy implementations of the compiled kernels in ``_core.pyx``.

Both modules expose the same three functions with the same argument order.
"""

from __future__ import annotations

import numpy as np

SAMPLED_SOFTMAX = 0
INFONCE = 1
DEBIASED_INFONCE = 2
MINE = 3
MINE_PLUS = 4
BPR = 5
MSE = 6
CCL = 7
DEBIASED_MSE = 8
DEBIASED_CCL = 9


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    nonneg = x >= 0
    out[nonneg] = 1.0 / (1.0 + np.exp(-x[nonneg]))
    e = np.exp(x[~nonneg])
    out[~nonneg] = e / (1.0 + e)
    return out


def _log1p_sum(pos, negs, logq, scale):
    x = scale * (negs - pos[:, None])
    if logq is not None:
        x = x - logq
    m = np.maximum(x.max(axis=1), 0.0)
    e = np.exp(x - m[:, None])
    z = np.exp(-m) + e.sum(axis=1)
    val = m + np.log(z)
    dnegs = scale * e / z[:, None]
    return val, -dnegs.sum(axis=1), dnegs


def _lse_minus_pos(pos, negs, scale, lam):
    x = scale * negs
    m = x.max(axis=1)
    e = np.exp(x - m[:, None])
    z = e.sum(axis=1)
    val = lam * (m + np.log(z)) - scale * pos
    dnegs = lam * scale * e / z[:, None]
    return val, np.full_like(pos, -scale), dnegs


def _debiased_infonce(pos, negs, extra, tau, t, lam):
    B, N = negs.shape
    M = extra.shape[1]
    a = negs / t
    c = extra / t
    m = np.maximum(a.max(axis=1), c.max(axis=1) if M else -np.inf)
    ea = np.exp(a - m[:, None])
    ec = np.exp(c - m[:, None])
    tm = 1.0 - tau
    br = (ea.sum(axis=1) / N - tau * ec.sum(axis=1) / M) / tm
    log_floor = -1.0 / t
    with np.errstate(divide="ignore", invalid="ignore"):
        log_br = np.where(br > 0, m + np.log(np.where(br > 0, br, 1.0)), -np.inf)
    active = log_br > log_floor
    logg = np.where(active, log_br, log_floor)
    if lam <= 0:
        return np.zeros(B), np.zeros(B), np.zeros((B, N)), np.zeros((B, M))
    z = np.log(lam) + logg - pos / t
    val = _softplus(z)
    sz = _sigmoid(z)
    dpos = -sz / t
    safe_br = np.where(active, br, 1.0)
    coef = np.where(active, sz / (t * tm * safe_br), 0.0)
    dnegs = coef[:, None] * ea / N
    dextra = -(coef * tau)[:, None] * ec / M
    return val, dpos, dnegs, dextra


def _bpr(pos, negs, bound_only):
    x = negs - pos[:, None]
    N = negs.shape[1]
    if bound_only:
        return x.mean(axis=1), -np.ones_like(pos), np.full_like(x, 1.0 / N)
    sig = _sigmoid(x)
    return _softplus(x).sum(axis=1), -sig.sum(axis=1), sig


def _lneg(is_mse, s, eps):
    if is_mse:
        return s * s, 2.0 * s
    return np.where(s > eps, s - eps, 0.0), (s > eps).astype(np.float64)


def _pointwise(pos, negs, is_mse, eps, w):
    N = negs.shape[1]
    l, dl = _lneg(is_mse, negs, eps)
    if is_mse:
        val = (1.0 - pos) ** 2 + w * l.sum(axis=1) / N
        dpos = -2.0 * (1.0 - pos)
    else:
        val = (1.0 - pos) + w * l.sum(axis=1) / N
        dpos = -np.ones_like(pos)
    return val, dpos, w * dl / N


def _debiased_pointwise(pos, negs, extra, tau, is_mse, eps, lam, clamp):
    N = negs.shape[1]
    M = extra.shape[1]
    if is_mse:
        lpos, dlpos = (1.0 - pos) ** 2, -2.0 * (1.0 - pos)
    else:
        lpos, dlpos = 1.0 - pos, -np.ones_like(pos)
    ln, dln = _lneg(is_mse, negs, eps)
    le, dle = _lneg(is_mse, extra, eps)
    br = ln.sum(axis=1) / N - tau * le.sum(axis=1) / M
    active = np.ones_like(br, dtype=bool) if not clamp else br > 0
    br = np.where(active, br, 0.0)
    act = active.astype(np.float64)[:, None]
    val = tau * lpos + lam * br
    dnegs = act * lam * dln / N
    dextra = -act * (lam * tau)[:, None] * dle / M
    return val, tau * dlpos, dnegs, dextra


def loss_batch(family, pos, negs, extra, tau, logq, use_q, t, lam, eps, w, clamp, bound_only):
    """Evaluate one loss family row-wise; returns (values, d_pos, d_negs, d_extra)."""
    B, _ = negs.shape
    M = extra.shape[1]
    no_extra = np.zeros((B, M))
    if family == SAMPLED_SOFTMAX:
        return (*_log1p_sum(pos, negs, logq if use_q else None, 1.0), no_extra)
    if family == INFONCE:
        return (*_log1p_sum(pos, negs, None, 1.0 / t), no_extra)
    if family == DEBIASED_INFONCE:
        return _debiased_infonce(pos, negs, extra, tau, t, lam)
    if family == MINE:
        return (*_lse_minus_pos(pos, negs, 1.0, 1.0), no_extra)
    if family == MINE_PLUS:
        return (*_lse_minus_pos(pos, negs, 1.0 / t, lam), no_extra)
    if family == BPR:
        return (*_bpr(pos, negs, bound_only), no_extra)
    if family in (MSE, CCL):
        return (*_pointwise(pos, negs, family == MSE, eps, w), no_extra)
    if family in (DEBIASED_MSE, DEBIASED_CCL):
        return _debiased_pointwise(pos, negs, extra, tau, family == DEBIASED_MSE, eps, lam, clamp)
    raise ValueError(f"unknown family code {family}")


def gather_scores(A, Bm, rows, cols):
    """S[b, k] = <A[rows[b]], Bm[cols[b, k]]>."""
    return np.einsum("bd,bkd->bk", A[rows], Bm[cols])


def scatter_grads(A, Bm, rows, cols, G, gA, gB):
    """Accumulate dL/dA and dL/dB for S = gather_scores(A, Bm, rows, cols), given G = dL/dS."""
    np.add.at(gA, rows, np.einsum("bk,bkd->bd", G, Bm[cols]))
    d = A.shape[1]
    np.add.at(gB, cols.ravel(), (G[:, :, None] * A[rows][:, None, :]).reshape(-1, d))
