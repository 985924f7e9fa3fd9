"""Pure numpy implementations of the hot kernels.

Signatures mirror the compiled ``_cext`` module exactly; see
``gramlink.kernels`` for the contract.
"""

import numpy as np

POST, POST_RENORM, PRE = 0, 1, 2
TRANSE, DISTMULT = 0, 1


def _softmax_rows(s):
    s = s - s.max(axis=1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=1, keepdims=True)
    return p


def _branch_forward(a, mask, mode, scale):
    s = (a @ a.T) * scale
    if mode == PRE:
        s = np.where(mask > 0, s, -np.inf)
    p = _softmax_rows(s)
    if mode == POST:
        w = p * mask
    elif mode == POST_RENORM:
        u = p * mask
        w = u / u.sum(axis=1, keepdims=True)
    else:
        w = p
    return p, w


def _branch_backward(a, p, mask, mode, scale, dw):
    if mode == POST:
        dp = dw * mask
    elif mode == POST_RENORM:
        u = p * mask
        total = u.sum(axis=1, keepdims=True)
        wb = u / total
        du = (dw - (dw * wb).sum(axis=1, keepdims=True)) / total
        dp = du * mask
    else:
        dp = dw
    ds = p * (dp - (dp * p).sum(axis=1, keepdims=True))
    return scale * ((ds + ds.T) @ a)


def masked_attention_forward(q, v, ra, rc, ma, mc, mode, scale):
    """Returns ``(out, w, pa, pc)``: output rows, combined weights, raw softmaxes."""
    pa, wa = _branch_forward(q + ra, ma, mode, scale)
    pc, wc = _branch_forward(q + rc, mc, mode, scale)
    w = wa + wc
    return w @ v, w, pa, pc


def masked_attention_backward(q, v, ra, rc, ma, mc, mode, scale, w, pa, pc, dout):
    dw = dout @ v.T
    dv = w.T @ dout
    da = _branch_backward(q + ra, pa, ma, mode, scale, dw)
    dc = _branch_backward(q + rc, pc, mc, mode, scale, dw)
    return da + dc, dv, da.sum(axis=0), dc.sum(axis=0)


def tail_scores_forward(q, e, fn):
    # accumulate feature by feature so the summation order matches a scalar loop
    acc = np.zeros((q.shape[0], e.shape[0]))
    if fn == TRANSE:
        for i in range(q.shape[1]):
            d = q[:, i, None] - e[None, :, i]
            acc += d * d
        return -np.sqrt(acc)
    for i in range(q.shape[1]):
        acc += q[:, i, None] * e[None, :, i]
    return acc


def tail_scores_backward(q, e, out, dout, fn):
    if fn == TRANSE:
        dist = -out
        safe = np.where(dist > 0, dist, 1.0)
        coef = np.where(dist > 0, -dout / safe, 0.0)
        dq = coef.sum(axis=1)[:, None] * q - coef @ e
        de = coef.sum(axis=0)[:, None] * e - coef.T @ q
        return dq, de
    return dout @ e, dout.T @ q
