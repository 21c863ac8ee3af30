"""Single-pass loops for the memory-bound parts of a conv block.

Each kernel is the fused equivalent of a numpy expression in
:mod:`aadnet.autodiff.functional`; the test-suite checks them against the
unfused ops and against finite differences.
"""

import numba
import numpy as np

_jit = numba.njit(cache=True, boundscheck=False)
_jit_fast = numba.njit(cache=True, boundscheck=False, fastmath=True)


@_jit_fast
def channel_moments(x):
    """Per-channel mean and biased variance of (B, C, N), accumulated in float64."""
    b_, c_, n_ = x.shape
    mean = np.zeros(c_)
    var = np.zeros(c_)
    n = b_ * n_
    for c in range(c_):
        s = 0.0
        for b in range(b_):
            for k in range(n_):
                s += x[b, c, k]
        mu = s / n
        ss = 0.0
        for b in range(b_):
            for k in range(n_):
                d = x[b, c, k] - mu
                ss += d * d
        mean[c] = mu
        var[c] = ss / n
    return mean, var


@_jit_fast
def affine_dropout_relu(x, mean, invstd, gamma, beta, rand, thr, scale, out):
    """out = relu(keep * scale * (gamma * (x - mean) * invstd + beta)) on (B, C, N).

    ``rand`` holds uint16 draws; an element is kept when ``rand >= thr``.
    Pass a 1-element ``rand`` to disable dropout.
    """
    b_, c_, n_ = x.shape
    use_mask = rand.size == x.size
    for b in range(b_):
        for c in range(c_):
            a = gamma[c] * invstd[c]
            sh = beta[c] - a * mean[c]
            if use_mask:
                for k in range(n_):
                    v = (a * x[b, c, k] + sh) * (scale * (rand[b, c, k] >= thr))
                    out[b, c, k] = max(v, 0.0)
            else:
                for k in range(n_):
                    out[b, c, k] = max(a * x[b, c, k] + sh, 0.0)


@_jit_fast
def affine_dropout_relu_backward(x, out, g, mean, invstd, gamma, scale, training):
    """Gradients of :func:`affine_dropout_relu` w.r.t. x, gamma and beta."""
    b_, c_, n_ = x.shape
    n = b_ * n_
    gx = np.empty_like(x)
    ggamma = np.zeros(c_)
    gbeta = np.zeros(c_)
    for c in range(c_):
        mu = mean[c]
        s = invstd[c]
        sg = 0.0
        sgx = 0.0
        for b in range(b_):
            for k in range(n_):
                gy = g[b, c, k] * (scale * (out[b, c, k] > 0.0))
                gx[b, c, k] = gy
                sg += gy
                sgx += gy * (x[b, c, k] - mu)
        sgx *= s
        gbeta[c] = sg
        ggamma[c] = sgx
        kk = gamma[c] * s
        if training:
            m1 = sg / n
            m2 = sgx / n * s
            for b in range(b_):
                for k in range(n_):
                    gx[b, c, k] = kk * (gx[b, c, k] - m1 - (x[b, c, k] - mu) * m2)
        else:
            for b in range(b_):
                for k in range(n_):
                    gx[b, c, k] = kk * gx[b, c, k]
    return gx, ggamma, gbeta


@_jit
def maxpool_forward(x, qh, qw):
    """Non-overlapping max pool over the last two axes of (B, C, H, W).

    Returns the pooled map and the row-major offset of the first maximum.
    """
    b_, c_, h_, w_ = x.shape
    ho = h_ // qh
    wo = w_ // qw
    out = np.empty((b_, c_, ho, wo), dtype=x.dtype)
    idx = np.empty((b_, c_, ho, wo), dtype=np.int32)
    for b in range(b_):
        for c in range(c_):
            for i in range(ho):
                for j in range(wo):
                    best = x[b, c, i * qh, j * qw]
                    k = 0
                    for di in range(qh):
                        for dj in range(qw):
                            v = x[b, c, i * qh + di, j * qw + dj]
                            if v > best:
                                best = v
                                k = di * qw + dj
                    out[b, c, i, j] = best
                    idx[b, c, i, j] = k
    return out, idx


@_jit
def maxpool_backward(g, idx, qh, qw, h_, w_):
    b_, c_, ho, wo = g.shape
    gx = np.zeros((b_, c_, h_, w_), dtype=g.dtype)
    for b in range(b_):
        for c in range(c_):
            for i in range(ho):
                for j in range(wo):
                    k = idx[b, c, i, j]
                    gx[b, c, i * qh + k // qw, j * qw + k % qw] = g[b, c, i, j]
    return gx
