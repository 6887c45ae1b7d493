# cython: language_level=3
"""Compiled hot loops: batched loss kernels and row gather/scatter.

Family codes must match ``recloss.kernels.FAMILY_CODES``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, INFINITY

cnp.import_array()

DEF SAMPLED_SOFTMAX = 0
DEF INFONCE = 1
DEF DEBIASED_INFONCE = 2
DEF MINE = 3
DEF MINE_PLUS = 4
DEF BPR = 5
DEF MSE = 6
DEF CCL = 7
DEF DEBIASED_MSE = 8
DEF DEBIASED_CCL = 9


cdef inline double _softplus(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef void _log1p_sum(const double[::1] pos, const double[:, ::1] negs,
                     const double[:, ::1] logq, bint use_q, double scale,
                     double[::1] val, double[::1] dpos, double[:, ::1] dnegs) noexcept nogil:
    # value = log(1 + sum_j exp(scale * (s_j - p) - logq_j)), the InfoNCE shape
    cdef Py_ssize_t b, j, B = negs.shape[0], N = negs.shape[1]
    cdef double m, z, x, acc
    for b in range(B):
        m = 0.0
        for j in range(N):
            x = scale * (negs[b, j] - pos[b])
            if use_q:
                x = x - logq[b, j]
            dnegs[b, j] = x
            if x > m:
                m = x
        z = exp(-m)
        for j in range(N):
            dnegs[b, j] = exp(dnegs[b, j] - m)
            z += dnegs[b, j]
        val[b] = m + log(z)
        acc = 0.0
        for j in range(N):
            dnegs[b, j] = scale * dnegs[b, j] / z
            acc += dnegs[b, j]
        dpos[b] = -acc


cdef void _lse_minus_pos(const double[::1] pos, const double[:, ::1] negs, double scale,
                         double lam, double[::1] val, double[::1] dpos,
                         double[:, ::1] dnegs) noexcept nogil:
    # value = lam * LSE(scale * s) - scale * p
    cdef Py_ssize_t b, j, B = negs.shape[0], N = negs.shape[1]
    cdef double m, z, x
    for b in range(B):
        m = -INFINITY
        for j in range(N):
            x = scale * negs[b, j]
            if x > m:
                m = x
        z = 0.0
        for j in range(N):
            dnegs[b, j] = exp(scale * negs[b, j] - m)
            z += dnegs[b, j]
        val[b] = lam * (m + log(z)) - scale * pos[b]
        dpos[b] = -scale
        for j in range(N):
            dnegs[b, j] = lam * scale * dnegs[b, j] / z


cdef void _debiased_infonce(const double[::1] pos, const double[:, ::1] negs,
                            const double[:, ::1] extra, const double[::1] tau,
                            double t, double lam, double[::1] val, double[::1] dpos,
                            double[:, ::1] dnegs, double[:, ::1] dextra) noexcept nogil:
    cdef Py_ssize_t b, j, k, B = negs.shape[0], N = negs.shape[1], M = extra.shape[1]
    cdef double inv_t = 1.0 / t, log_floor = -1.0 / t
    cdef double m, a_sum, c_sum, br, logg, z, sz, tp, tm, coef
    cdef bint active
    for b in range(B):
        tp = tau[b]
        tm = 1.0 - tp
        m = -INFINITY
        for j in range(N):
            if negs[b, j] * inv_t > m:
                m = negs[b, j] * inv_t
        for k in range(M):
            if extra[b, k] * inv_t > m:
                m = extra[b, k] * inv_t
        a_sum = 0.0
        for j in range(N):
            dnegs[b, j] = exp(negs[b, j] * inv_t - m)
            a_sum += dnegs[b, j]
        c_sum = 0.0
        for k in range(M):
            dextra[b, k] = exp(extra[b, k] * inv_t - m)
            c_sum += dextra[b, k]
        br = (a_sum / N - tp * c_sum / M) / tm
        active = False
        logg = log_floor
        if br > 0:
            if m + log(br) > log_floor:
                active = True
                logg = m + log(br)
        if lam <= 0:
            val[b] = 0.0
            dpos[b] = 0.0
            for j in range(N):
                dnegs[b, j] = 0.0
            for k in range(M):
                dextra[b, k] = 0.0
            continue
        z = log(lam) + logg - pos[b] * inv_t
        val[b] = _softplus(z)
        sz = _sigmoid(z)
        dpos[b] = -sz * inv_t
        if active:
            coef = sz * inv_t / (tm * br)
            for j in range(N):
                dnegs[b, j] = coef * dnegs[b, j] / N
            for k in range(M):
                dextra[b, k] = -coef * tp * dextra[b, k] / M
        else:
            for j in range(N):
                dnegs[b, j] = 0.0
            for k in range(M):
                dextra[b, k] = 0.0


cdef void _bpr(const double[::1] pos, const double[:, ::1] negs, bint bound_only,
               double[::1] val, double[::1] dpos, double[:, ::1] dnegs) noexcept nogil:
    cdef Py_ssize_t b, j, B = negs.shape[0], N = negs.shape[1]
    cdef double acc, g, x
    for b in range(B):
        acc = 0.0
        g = 0.0
        for j in range(N):
            x = negs[b, j] - pos[b]
            if bound_only:
                acc += x
                dnegs[b, j] = 1.0 / N
            else:
                acc += _softplus(x)
                dnegs[b, j] = _sigmoid(x)
                g += dnegs[b, j]
        if bound_only:
            val[b] = acc / N
            dpos[b] = -1.0
        else:
            val[b] = acc
            dpos[b] = -g


cdef inline double _lneg(bint is_mse, double s, double eps) noexcept nogil:
    if is_mse:
        return s * s
    return s - eps if s > eps else 0.0


cdef inline double _dlneg(bint is_mse, double s, double eps) noexcept nogil:
    if is_mse:
        return 2.0 * s
    return 1.0 if s > eps else 0.0


cdef void _pointwise(const double[::1] pos, const double[:, ::1] negs, bint is_mse,
                     double eps, double w, double[::1] val, double[::1] dpos,
                     double[:, ::1] dnegs) noexcept nogil:
    cdef Py_ssize_t b, j, B = negs.shape[0], N = negs.shape[1]
    cdef double acc, p
    for b in range(B):
        p = pos[b]
        acc = 0.0
        for j in range(N):
            acc += _lneg(is_mse, negs[b, j], eps)
            dnegs[b, j] = w * _dlneg(is_mse, negs[b, j], eps) / N
        if is_mse:
            val[b] = (1.0 - p) * (1.0 - p) + w * acc / N
            dpos[b] = -2.0 * (1.0 - p)
        else:
            val[b] = (1.0 - p) + w * acc / N
            dpos[b] = -1.0


cdef void _debiased_pointwise(const double[::1] pos, const double[:, ::1] negs,
                              const double[:, ::1] extra, const double[::1] tau,
                              bint is_mse, double eps, double lam, bint clamp,
                              double[::1] val, double[::1] dpos, double[:, ::1] dnegs,
                              double[:, ::1] dextra) noexcept nogil:
    cdef Py_ssize_t b, j, k, B = negs.shape[0], N = negs.shape[1], M = extra.shape[1]
    cdef double a, c, br, p, tp, lpos, dlpos
    cdef bint active
    for b in range(B):
        p = pos[b]
        tp = tau[b]
        if is_mse:
            lpos = (1.0 - p) * (1.0 - p)
            dlpos = -2.0 * (1.0 - p)
        else:
            lpos = 1.0 - p
            dlpos = -1.0
        a = 0.0
        for j in range(N):
            a += _lneg(is_mse, negs[b, j], eps)
        c = 0.0
        for k in range(M):
            c += _lneg(is_mse, extra[b, k], eps)
        br = a / N - tp * c / M
        active = (not clamp) or br > 0
        if not active:
            br = 0.0
        val[b] = tp * lpos + lam * br
        dpos[b] = tp * dlpos
        for j in range(N):
            dnegs[b, j] = lam * _dlneg(is_mse, negs[b, j], eps) / N if active else 0.0
        for k in range(M):
            dextra[b, k] = -lam * tp * _dlneg(is_mse, extra[b, k], eps) / M if active else 0.0


def loss_batch(int family, const double[::1] pos, const double[:, ::1] negs,
               const double[:, ::1] extra, const double[::1] tau,
               const double[:, ::1] logq, bint use_q, double t, double lam,
               double eps, double w, bint clamp, bint bound_only):
    """Evaluate one loss family row-wise; returns (values, d_pos, d_negs, d_extra)."""
    cdef Py_ssize_t B = negs.shape[0], N = negs.shape[1], M = extra.shape[1]
    val_a = np.empty(B, dtype=np.float64)
    dpos_a = np.empty(B, dtype=np.float64)
    dnegs_a = np.zeros((B, N), dtype=np.float64)
    dextra_a = np.zeros((B, M), dtype=np.float64)
    cdef double[::1] val = val_a
    cdef double[::1] dpos = dpos_a
    cdef double[:, ::1] dnegs = dnegs_a
    cdef double[:, ::1] dextra = dextra_a
    with nogil:
        if family == SAMPLED_SOFTMAX:
            _log1p_sum(pos, negs, logq, use_q, 1.0, val, dpos, dnegs)
        elif family == INFONCE:
            _log1p_sum(pos, negs, logq, False, 1.0 / t, val, dpos, dnegs)
        elif family == DEBIASED_INFONCE:
            _debiased_infonce(pos, negs, extra, tau, t, lam, val, dpos, dnegs, dextra)
        elif family == MINE:
            _lse_minus_pos(pos, negs, 1.0, 1.0, val, dpos, dnegs)
        elif family == MINE_PLUS:
            _lse_minus_pos(pos, negs, 1.0 / t, lam, val, dpos, dnegs)
        elif family == BPR:
            _bpr(pos, negs, bound_only, val, dpos, dnegs)
        elif family == MSE:
            _pointwise(pos, negs, True, eps, w, val, dpos, dnegs)
        elif family == CCL:
            _pointwise(pos, negs, False, eps, w, val, dpos, dnegs)
        elif family == DEBIASED_MSE:
            _debiased_pointwise(pos, negs, extra, tau, True, eps, lam, clamp,
                                val, dpos, dnegs, dextra)
        elif family == DEBIASED_CCL:
            _debiased_pointwise(pos, negs, extra, tau, False, eps, lam, clamp,
                                val, dpos, dnegs, dextra)
        else:
            with gil:
                raise ValueError(f"unknown family code {family}")
    return val_a, dpos_a, dnegs_a, dextra_a


def gather_scores(const double[:, ::1] A, const double[:, ::1] Bm,
                  const cnp.int64_t[::1] rows, const cnp.int64_t[:, ::1] cols):
    """S[b, k] = <A[rows[b]], Bm[cols[b, k]]>."""
    cdef Py_ssize_t nb = cols.shape[0], K = cols.shape[1], d = A.shape[1]
    cdef Py_ssize_t b, k, f, r, c
    cdef double acc
    out_a = np.empty((nb, K), dtype=np.float64)
    cdef double[:, ::1] out = out_a
    with nogil:
        for b in range(nb):
            r = rows[b]
            for k in range(K):
                c = cols[b, k]
                acc = 0.0
                for f in range(d):
                    acc += A[r, f] * Bm[c, f]
                out[b, k] = acc
    return out_a


def scatter_grads(const double[:, ::1] A, const double[:, ::1] Bm,
                  const cnp.int64_t[::1] rows, const cnp.int64_t[:, ::1] cols,
                  const double[:, ::1] G, double[:, ::1] gA, double[:, ::1] gB):
    """Accumulate dL/dA and dL/dB for S = gather_scores(A, Bm, rows, cols), given G = dL/dS."""
    cdef Py_ssize_t nb = cols.shape[0], K = cols.shape[1], d = A.shape[1]
    cdef Py_ssize_t b, k, f, r, c
    cdef double g
    with nogil:
        for b in range(nb):
            r = rows[b]
            for k in range(K):
                g = G[b, k]
                if g == 0.0:
                    continue
                c = cols[b, k]
                for f in range(d):
                    gA[r, f] += g * Bm[c, f]
                    gB[c, f] += g * A[r, f]
