# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: fused relation-masked attention head and tail scoring.

Attention delegates its matrix products to numpy (BLAS) and fuses the
softmax, masking and renormalization passes. Tail scores run in plain loops
with sequential sums so they match a scalar reference bit for bit.
"""

import numpy as np
from libc.math cimport exp, sqrt, INFINITY

cdef enum:
    POST = 0
    POST_RENORM = 1
    PRE = 2
    TRANSE = 0


cdef void _branch_forward(const double[:, ::1] s, const double[:, ::1] mask, int mode,
                          double scale, double[:, ::1] p, double[:, ::1] w) noexcept nogil:
    # s holds the raw Gram matrix a a^T; p receives the softmax, w accumulates
    cdef Py_ssize_t m = s.shape[0]
    cdef Py_ssize_t i, j
    cdef double dot, rowmax, total, usum
    for i in range(m):
        rowmax = -INFINITY
        for j in range(m):
            if mode == PRE and mask[i, j] == 0.0:
                continue
            dot = s[i, j] * scale
            p[i, j] = dot
            if dot > rowmax:
                rowmax = dot
        total = 0.0
        for j in range(m):
            if mode == PRE and mask[i, j] == 0.0:
                p[i, j] = 0.0
            else:
                p[i, j] = exp(p[i, j] - rowmax)
                total = total + p[i, j]
        for j in range(m):
            p[i, j] = p[i, j] / total
        if mode == POST:
            for j in range(m):
                w[i, j] += p[i, j] * mask[i, j]
        elif mode == POST_RENORM:
            usum = 0.0
            for j in range(m):
                usum = usum + p[i, j] * mask[i, j]
            for j in range(m):
                w[i, j] += p[i, j] * mask[i, j] / usum
        else:
            for j in range(m):
                w[i, j] += p[i, j]


cdef void _branch_backward(const double[:, ::1] p, const double[:, ::1] mask, int mode,
                           double scale, const double[:, ::1] dw,
                           double[:, ::1] ds) noexcept nogil:
    # ds receives scale * (ds + ds^T), ready to multiply by a
    cdef Py_ssize_t m = p.shape[0]
    cdef Py_ssize_t i, j
    cdef double usum, inner, t
    for i in range(m):
        if mode == POST:
            for j in range(m):
                ds[i, j] = dw[i, j] * mask[i, j]
        elif mode == POST_RENORM:
            usum = 0.0
            for j in range(m):
                usum = usum + p[i, j] * mask[i, j]
            inner = 0.0
            for j in range(m):
                inner = inner + dw[i, j] * (p[i, j] * mask[i, j] / usum)
            for j in range(m):
                ds[i, j] = (dw[i, j] - inner) / usum * mask[i, j]
        else:
            for j in range(m):
                ds[i, j] = dw[i, j]
        inner = 0.0
        for j in range(m):
            inner = inner + ds[i, j] * p[i, j]
        for j in range(m):
            ds[i, j] = p[i, j] * (ds[i, j] - inner)
    for i in range(m):
        for j in range(i, m):
            t = (ds[i, j] + ds[j, i]) * scale
            ds[i, j] = t
            ds[j, i] = t


def masked_attention_forward(q, v, ra, rc,
                             const double[:, ::1] ma, const double[:, ::1] mc,
                             int mode, double scale):
    # matrix products go through BLAS; the softmax, masking and merge are fused here
    a_arr, c_arr = q + ra, q + rc
    sa_arr, sc_arr = a_arr @ a_arr.T, c_arr @ c_arr.T
    cdef Py_ssize_t m = sa_arr.shape[0]
    pa_arr = np.empty((m, m))
    pc_arr = np.empty((m, m))
    w_arr = np.zeros((m, m))
    cdef double[:, ::1] sa = sa_arr, sc = sc_arr, pa = pa_arr, pc = pc_arr, w = w_arr
    with nogil:
        _branch_forward(sa, ma, mode, scale, pa, w)
        _branch_forward(sc, mc, mode, scale, pc, w)
    return w_arr @ v, w_arr, pa_arr, pc_arr


def masked_attention_backward(q, v, ra, rc,
                              const double[:, ::1] ma, const double[:, ::1] mc,
                              int mode, double scale, w,
                              const double[:, ::1] pa, const double[:, ::1] pc, dout):
    dw_arr = np.ascontiguousarray(dout @ v.T)
    dv_arr = w.T @ dout
    cdef Py_ssize_t m = dw_arr.shape[0]
    dsa_arr = np.empty((m, m))
    dsc_arr = np.empty((m, m))
    cdef double[:, ::1] dw = dw_arr, dsa = dsa_arr, dsc = dsc_arr
    with nogil:
        _branch_backward(pa, ma, mode, scale, dw, dsa)
        _branch_backward(pc, mc, mode, scale, dw, dsc)
    da = dsa_arr @ (q + ra)
    dc = dsc_arr @ (q + rc)
    return da + dc, dv_arr, da.sum(axis=0), dc.sum(axis=0)


def tail_scores_forward(const double[:, ::1] q, const double[:, ::1] e, int fn):
    cdef Py_ssize_t nb = q.shape[0], nt = e.shape[0], d = q.shape[1]
    cdef Py_ssize_t b, t, i
    out_arr = np.empty((nb, nt))
    cdef double[:, ::1] out = out_arr
    cdef double acc, diff
    with nogil:
        for b in range(nb):
            for t in range(nt):
                acc = 0.0
                if fn == TRANSE:
                    for i in range(d):
                        diff = q[b, i] - e[t, i]
                        acc = acc + diff * diff
                    out[b, t] = -sqrt(acc)
                else:
                    for i in range(d):
                        acc = acc + q[b, i] * e[t, i]
                    out[b, t] = acc
    return out_arr


def tail_scores_backward(const double[:, ::1] q, const double[:, ::1] e,
                         const double[:, ::1] out, const double[:, ::1] dout, int fn):
    cdef Py_ssize_t nb = q.shape[0], nt = e.shape[0], d = q.shape[1]
    cdef Py_ssize_t b, t, i
    dq_arr = np.zeros((nb, d))
    de_arr = np.zeros((nt, d))
    cdef double[:, ::1] dq = dq_arr, de = de_arr
    cdef double coef, g
    with nogil:
        for b in range(nb):
            for t in range(nt):
                g = dout[b, t]
                if g == 0.0:
                    continue
                if fn == TRANSE:
                    if out[b, t] == 0.0:
                        continue
                    coef = g / out[b, t]
                    for i in range(d):
                        dq[b, i] += coef * (q[b, i] - e[t, i])
                        de[t, i] -= coef * (q[b, i] - e[t, i])
                else:
                    for i in range(d):
                        dq[b, i] += g * e[t, i]
                        de[t, i] += g * q[b, i]
    return dq_arr, de_arr
