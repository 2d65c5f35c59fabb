# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow

cnp.import_array()


def kinloss(pred, target, int t_f, double weight=1.0, bint velocity_supervision=False,
            bint want_grad=True):
    if t_f < 2:
        raise ValueError("kinematic loss needs T_f >= 2")
    out_shape = np.shape(pred)
    pred_a = np.asarray(pred, dtype=np.float64)
    targ_a = np.asarray(target, dtype=np.float64)
    if pred_a.shape != targ_a.shape:
        raise ValueError(f"prediction shape {pred_a.shape} != target shape {targ_a.shape}")
    width = 2 * t_f - 1
    if pred_a.shape[len(pred_a.shape) - 1] != width:
        raise ValueError(f"expected last dimension {width} for T_f={t_f}, "
                         f"got {pred_a.shape[len(pred_a.shape) - 1]}")
    pred2 = np.ascontiguousarray(pred_a.reshape(-1, width))
    targ2 = np.ascontiguousarray(targ_a.reshape(-1, width))
    grad_a = np.zeros_like(pred2)
    cdef double[:, ::1] p = pred2
    cdef double[:, ::1] y = targ2
    cdef double[:, ::1] g = grad_a
    cdef Py_ssize_t rows = p.shape[0]
    cdef Py_ssize_t r, k
    cdef double total = 0.0, row_v, row_c, row_e, d, c
    cdef double inv_t = 1.0 / t_f, inv_t1 = 1.0 / (t_f - 1)
    for r in range(rows):
        row_v = 0.0
        row_c = 0.0
        row_e = 0.0
        for k in range(t_f):
            d = p[r, k] - y[r, k]
            row_v += d * d
            g[r, k] = 2.0 * d * inv_t
        for k in range(1, t_f):
            c = p[r, k] - p[r, k - 1] - p[r, t_f + k - 1]
            row_c += c * c
            c = 2.0 * weight * c * inv_t1
            g[r, k] += c
            g[r, k - 1] -= c
            g[r, t_f + k - 1] = -c
        if velocity_supervision:
            for k in range(t_f - 1):
                d = p[r, t_f + k] - y[r, t_f + k]
                row_e += d * d
                g[r, t_f + k] += 2.0 * d * inv_t1
        total += row_v * inv_t + weight * row_c * inv_t1 + row_e * inv_t1
    if not want_grad:
        return total / rows, None
    grad_a /= rows
    return total / rows, grad_a.reshape(out_shape)


def adam_update(param, grad, m, v, double lr, double beta1, double beta2, double eps, long t):
    cdef double[::1] p = param.reshape(-1)
    cdef double[::1] g = np.ascontiguousarray(grad, dtype=np.float64).reshape(-1)
    cdef double[::1] mm = m.reshape(-1)
    cdef double[::1] vv = v.reshape(-1)
    cdef Py_ssize_t n = p.shape[0], i
    if g.shape[0] != n or mm.shape[0] != n or vv.shape[0] != n:
        raise ValueError("adam state size mismatch")
    cdef double c1 = 1.0 - pow(beta1, t)
    cdef double c2 = 1.0 - pow(beta2, t)
    cdef double gi
    for i in range(n):
        gi = g[i]
        mm[i] = beta1 * mm[i] + (1.0 - beta1) * gi
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * gi * gi
        p[i] -= lr * (mm[i] / c1) / (sqrt(vv[i] / c2) + eps)


def signed_rank_counts(doubled_ranks):
    cdef cnp.int64_t[::1] ranks = np.ascontiguousarray(doubled_ranks, dtype=np.int64)
    cdef Py_ssize_t n = ranks.shape[0], i, k
    cdef long total = 0, reach = 0, r
    for i in range(n):
        if ranks[i] < 0:
            raise ValueError("ranks must be non-negative")
        total += ranks[i]
    counts_a = np.zeros(total + 1, dtype=np.float64)
    cdef double[::1] counts = counts_a
    counts[0] = 1.0
    for i in range(n):
        r = ranks[i]
        if r == 0:
            for k in range(reach + 1):
                counts[k] *= 2.0
            continue
        for k in range(reach, -1, -1):
            counts[k + r] += counts[k]
        reach += r
    return counts_a
