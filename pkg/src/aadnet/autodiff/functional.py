"""Layer primitives with hand-written backward passes.

Image-like tensors are laid out (batch, channels, height, width); for the
attention model height is time and width is electrodes or frequency bins.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as _k
from .tensor import Tensor, make_node

# Upper bound on the im2col buffer per chunk (elements).
_COL_BUDGET = 24_000_000

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


def conv_output_size(n: int, kernel: int, padding: int, dilation: int) -> int:
    """Stride-1 output extent: n + 2p - d(k - 1)."""
    return n + 2 * padding - dilation * (kernel - 1)


# -- convolution -----------------------------------------------------------------


def _im2col(xp, kh, kw, dh, dw, ho, wo):
    # xp: (nb, C, Hp, Wp) -> (nb, C, kh, kw, ho, wo)
    nb, c = xp.shape[:2]
    cols = np.empty((nb, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i * dh : i * dh + ho, j * dw : j * dw + wo]
    return cols


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, padding=(0, 0), dilation=(1, 1)) -> Tensor:
    """Stride-1 dilated 2-D cross-correlation with zero padding.

    ``x`` is (B, C, H, W) or (C, H, W); ``weight`` is (O, C, kh, kw).
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    w = weight.data
    if xd.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {xd.shape} and {w.shape}")
    b_, c, h, wdt = xd.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise ValueError(f"weight expects {cw} input channels, input has {c}")
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    ho = conv_output_size(h, kh, ph, dh)
    wo = conv_output_size(wdt, kw, pw, dw)
    if ho < 1 or wo < 1:
        raise ValueError(f"non-positive conv output extent ({ho}, {wo}) for input ({h}, {wdt})")

    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else xd
    ck = c * kh * kw
    wm = w.reshape(o, ck)
    chunk = max(1, min(b_, _COL_BUDGET // max(ck * ho * wo, 1)))
    out = np.empty((b_, o, ho * wo), dtype=xd.dtype)
    for s in range(0, b_, chunk):
        cols = _im2col(xp[s : s + chunk], kh, kw, dh, dw, ho, wo)
        np.matmul(wm, cols.reshape(cols.shape[0], ck, ho * wo), out=out[s : s + cols.shape[0]])
    if bias is not None:
        out += bias.data.reshape(1, o, 1)
    out = out.reshape(b_, o, ho, wo)
    if squeeze:
        out = out[0]

    need_x = x.requires_grad

    def backward(g):
        g3 = (g[None] if squeeze else g).reshape(b_, o, ho * wo)
        gw = np.zeros((o, ck), dtype=g3.dtype)
        gxp = np.zeros_like(xp) if need_x else None
        for s in range(0, b_, chunk):
            gs = g3[s : s + chunk]
            nb = gs.shape[0]
            cols = _im2col(xp[s : s + nb], kh, kw, dh, dw, ho, wo).reshape(nb, ck, ho * wo)
            for k in range(nb):
                gw += gs[k] @ cols[k].T
            if need_x:
                gcols = np.matmul(wm.T, gs).reshape(nb, c, kh, kw, ho, wo)
                gt = gxp[s : s + nb]
                for i in range(kh):
                    for j in range(kw):
                        gt[:, :, i * dh : i * dh + ho, j * dw : j * dw + wo] += gcols[:, :, i, j]
        gx = None
        if need_x:
            gx = gxp[:, :, ph : ph + h, pw : pw + wdt] if ph or pw else gxp
            gx = gx[0] if squeeze else gx
        gb = g3.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw.reshape(w.shape), gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward)


# -- pooling ---------------------------------------------------------------------


def maxpool2d(x: Tensor, pool) -> Tensor:
    """Non-overlapping max pooling over the last two axes.

    Trailing rows/columns that do not fill a window are dropped. The
    gradient goes to the first (row-major) maximum of each window.
    """
    qh, qw = _pair(pool)
    if qh < 1 or qw < 1:
        raise ValueError(f"pool sizes must be >= 1, got {(qh, qw)}")
    if qh == 1 and qw == 1:
        return x
    xd = x.data
    *lead, h, w = xd.shape
    if h // qh < 1 or w // qw < 1:
        raise ValueError(f"pool {(qh, qw)} larger than input ({h}, {w})")
    x4 = np.ascontiguousarray(xd).reshape(-1, 1, h, w)
    out, idx = _k.maxpool_forward(x4, qh, qw)
    out = out.reshape(*lead, h // qh, w // qw)

    def backward(g):
        g4 = np.ascontiguousarray(g).reshape(idx.shape)
        return (_k.maxpool_backward(g4, idx, qh, qw, h, w).reshape(xd.shape),)

    return make_node(out, (x,), backward)


def adaptive_window_bounds(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(n_out)
    start = (i * n_in) // n_out
    end = -((-(i + 1) * n_in) // n_out)
    return start, end


def adaptive_maxpool_rows(x: Tensor, n_out: int) -> Tensor:
    """Max-pool the second-to-last axis into exactly ``n_out`` windows.

    Window i covers rows [floor(i*n/m), ceil((i+1)*n/m)); windows may overlap
    or repeat rows when ``n_out`` is close to or above the input length.
    """
    xd = x.data
    h = xd.shape[-2]
    start, end = adaptive_window_bounds(h, n_out)
    out = np.empty(xd.shape[:-2] + (n_out, xd.shape[-1]), dtype=xd.dtype)
    arg = np.empty(out.shape, dtype=np.int64)  # argmax relative to window start
    for i in range(n_out):
        seg = xd[..., start[i] : end[i], :]
        k = seg.argmax(axis=-2)
        arg[..., i, :] = k
        out[..., i, :] = np.take_along_axis(seg, k[..., None, :], axis=-2)[..., 0, :]

    def backward(g):
        gx = np.zeros(xd.shape, dtype=g.dtype)
        for i in range(n_out):
            # windows may share rows, so accumulate window by window
            sub = np.zeros(xd.shape[:-2] + (end[i] - start[i], xd.shape[-1]), dtype=g.dtype)
            np.put_along_axis(sub, arg[..., i : i + 1, :], g[..., i : i + 1, :], axis=-2)
            gx[..., start[i] : end[i], :] += sub
        return (gx,)

    return make_node(out, (x,), backward)


# -- normalization / regularization -------------------------------------------


def _bn_stats(xd, training, running_mean, running_var, momentum):
    axes = (0, 2, 3)
    if training:
        n = xd.shape[0] * xd.shape[2] * xd.shape[3]
        if xd.shape[0] < 2:
            raise ValueError("batch norm in training mode needs a batch of at least 2")
        mean = xd.mean(axis=axes)
        var = np.square(xd - mean.reshape(1, -1, 1, 1)).mean(axis=axes)
        if running_mean is not None:
            running_mean *= 1 - momentum
            running_mean += momentum * mean
            running_var *= 1 - momentum
            running_var += momentum * var * n / max(n - 1, 1)
    else:
        mean, var = running_mean, running_var
    return mean.astype(xd.dtype), var.astype(xd.dtype)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
    training: bool = True,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalization of a (B, C, H, W) tensor.

    Training mode normalizes with biased batch statistics and folds them
    into the running buffers (unbiased variance) in place; eval mode uses
    the running buffers.
    """
    out, backward = _bn_forward(x.data, gamma.data, beta.data, running_mean, running_var,
                                training, momentum, eps)
    return make_node(out, (x, gamma, beta), backward)


def _bn_forward(xd, gd, bd, running_mean, running_var, training, momentum, eps):
    mean, var = _bn_stats(xd, training, running_mean, running_var, momentum)
    invstd = 1.0 / np.sqrt(var + eps)
    m4, s4 = mean.reshape(1, -1, 1, 1), invstd.reshape(1, -1, 1, 1)
    out = (xd - m4) * (s4 * gd.reshape(1, -1, 1, 1)) + bd.reshape(1, -1, 1, 1)
    n = xd.shape[0] * xd.shape[2] * xd.shape[3]

    def backward(g):
        xhat = (xd - m4) * s4
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        scale = (gd * invstd).reshape(1, -1, 1, 1)
        if training:
            gx = scale * (g - (gbeta / n).reshape(1, -1, 1, 1) - xhat * (ggamma / n).reshape(1, -1, 1, 1))
        else:
            gx = scale * g
        return gx, ggamma, gbeta

    return out, backward


def _keep_mask(shape, p, rng):
    # 16-bit uniforms: the realized drop probability is thr / 65536
    thr = int(round(p * 65536))
    keep = rng.integers(0, 65536, size=shape, dtype=np.uint16) >= thr
    return keep, 65536.0 / (65536 - thr)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``p``, rescale survivors."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        rng = np.random.default_rng()
    keep, scale = _keep_mask(x.shape, p, rng)
    factor = keep * x.data.dtype.type(scale)
    return make_node(x.data * factor, (x,), lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    return make_node(out, (x,), lambda g: (g * (out > 0),))


def bn_dropout_relu(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    p: float,
    training: bool,
    rng: np.random.Generator | None = None,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """relu(dropout(batchnorm2d(x))) as one node.

    Same result as composing the three ops (with the same dropout draws)
    but runs as two passes over the data and stores only the output: a
    positive output means the unit was kept and active, so ``out > 0`` is
    the whole backward mask.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    xd = np.ascontiguousarray(x.data)
    if xd.ndim != 4:
        raise ValueError(f"expected (B, C, H, W) input, got {xd.shape}")
    if training:
        if xd.shape[0] < 2:
            raise ValueError("batch norm in training mode needs a batch of at least 2")
        mean, var = _k.channel_moments(xd.reshape(xd.shape[0], xd.shape[1], -1))
        if running_mean is not None:
            n = xd.shape[0] * xd.shape[2] * xd.shape[3]
            running_mean *= 1 - momentum
            running_mean += momentum * mean
            running_var *= 1 - momentum
            running_var += momentum * var * n / max(n - 1, 1)
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    invstd = 1.0 / np.sqrt(var + eps)
    gd = gamma.data.astype(np.float64)
    bd = beta.data.astype(np.float64)

    rand, thr, scale = _NO_DRAWS, 0, 1.0
    if training and p > 0.0:
        if rng is None:
            rng = np.random.default_rng()
        thr = int(round(p * 65536))
        rand = rng.integers(0, 65536, size=xd.shape, dtype=np.uint16)
        scale = 65536.0 / (65536 - thr)
    b_, c_ = xd.shape[:2]
    x3 = xd.reshape(b_, c_, -1)
    out = np.empty_like(xd)
    _k.affine_dropout_relu(x3, mean, invstd, gd, bd, rand.reshape(rand.shape[0], rand.shape[1], -1),
                           thr, scale, out.reshape(b_, c_, -1))
    del rand

    def backward(g):
        gx, ggamma, gbeta = _k.affine_dropout_relu_backward(
            x3, out.reshape(b_, c_, -1), np.ascontiguousarray(g).reshape(b_, c_, -1),
            mean, invstd, gd, scale, training,
        )
        return gx.reshape(xd.shape), ggamma.astype(gamma.dtype), gbeta.astype(beta.dtype)

    return make_node(out, (x, gamma, beta), backward)


_NO_DRAWS = np.zeros((1, 1, 1, 1), dtype=np.uint16)


# -- dense / recurrent -----------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ W + b with x (N, F_in), W (F_in, F_out)."""
    xd, w = x.data, weight.data
    if xd.ndim != 2 or w.ndim != 2 or xd.shape[1] != w.shape[0]:
        raise ValueError(f"linear shape mismatch: input {xd.shape}, weight {w.shape}")
    out = xd @ w
    if bias is not None:
        if bias.shape != (w.shape[1],):
            raise ValueError(f"bias shape {bias.shape} does not match {w.shape[1]} outputs")
        out = out + bias.data

    def backward(g):
        gx = g @ w.T if x.requires_grad else None
        return gx, xd.T @ g, (g.sum(axis=0) if bias is not None else None)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward)


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over (B, T, F) input, zero initial state.

    Gate blocks in the 4H axis are ordered input, forget, candidate, output;
    one bias per gate. With ``reverse`` the sequence is consumed from the
    last step to the first and outputs stay aligned with their input steps.
    """
    xd = x.data
    squeeze = xd.ndim == 2
    if squeeze:
        xd = xd[None]
    b_, t_, f_ = xd.shape
    hsz = w_hh.shape[0]
    wih, whh, bb = w_ih.data, w_hh.data, bias.data
    if wih.shape != (f_, 4 * hsz) or whh.shape != (hsz, 4 * hsz) or bb.shape != (4 * hsz,):
        raise ValueError("lstm parameter shapes do not match input/hidden sizes")
    dt = xd.dtype
    steps = range(t_ - 1, -1, -1) if reverse else range(t_)
    xz = (xd.reshape(-1, f_) @ wih).reshape(b_, t_, 4 * hsz) + bb
    gates = np.empty((b_, t_, 4 * hsz), dtype=dt)  # post-activation
    cs = np.empty((b_, t_, hsz), dtype=dt)
    tcs = np.empty((b_, t_, hsz), dtype=dt)
    hs = np.empty((b_, t_, hsz), dtype=dt)
    h = np.zeros((b_, hsz), dtype=dt)
    c = np.zeros((b_, hsz), dtype=dt)
    for t in steps:
        z = xz[:, t] + h @ whh
        a = gates[:, t]
        a[:, : 2 * hsz] = _sigmoid(z[:, : 2 * hsz])
        a[:, 2 * hsz : 3 * hsz] = np.tanh(z[:, 2 * hsz : 3 * hsz])
        a[:, 3 * hsz :] = _sigmoid(z[:, 3 * hsz :])
        i_, f, gg, o = np.split(a, 4, axis=1)
        c = f * c + i_ * gg
        tc = np.tanh(c)
        h = o * tc
        cs[:, t], tcs[:, t], hs[:, t] = c, tc, h
    out = hs[0] if squeeze else hs

    def backward(g):
        g3 = g[None] if squeeze else g
        dz_all = np.empty((b_, t_, 4 * hsz), dtype=dt)
        dh_next = np.zeros((b_, hsz), dtype=dt)
        dc_next = np.zeros((b_, hsz), dtype=dt)
        order = list(steps)
        for k in range(t_ - 1, -1, -1):
            t = order[k]
            prev = order[k - 1] if k > 0 else None
            i_, f, gg, o = np.split(gates[:, t], 4, axis=1)
            dh = g3[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tcs[:, t] ** 2)
            c_prev = cs[:, prev] if prev is not None else np.zeros_like(dc)
            dz = dz_all[:, t]
            dz[:, :hsz] = dc * gg * i_ * (1.0 - i_)
            dz[:, hsz : 2 * hsz] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * hsz : 3 * hsz] = dc * i_ * (1.0 - gg ** 2)
            dz[:, 3 * hsz :] = dh * tcs[:, t] * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ whh.T
        # h_{prev} feeds step t through w_hh
        h_prev = np.zeros_like(hs)
        order_arr = np.asarray(order)
        h_prev[:, order_arr[1:]] = hs[:, order_arr[:-1]]
        dz2 = dz_all.reshape(-1, 4 * hsz)
        gwhh = h_prev.reshape(-1, hsz).T @ dz2
        gwih = xd.reshape(-1, f_).T @ dz2
        gb = dz2.sum(axis=0)
        gx = (dz2 @ wih.T).reshape(b_, t_, f_) if x.requires_grad else None
        if gx is not None and squeeze:
            gx = gx[0]
        return gx, gwih, gwhh, gb

    return make_node(out, (x, w_ih, w_hh, bias), backward)


# -- output --------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Mean negative log-likelihood of ``labels`` under softmax(logits).

    Returns the scalar loss tensor and the probability matrix.
    """
    z = logits.data
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ValueError(f"logits {z.shape} and labels {labels.shape} disagree")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    n = z.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    probs = np.exp(logp)

    def backward(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return make_node(np.asarray(loss, dtype=z.dtype), (logits,), backward), probs
