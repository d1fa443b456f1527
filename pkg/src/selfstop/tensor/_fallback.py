"""Pure-numpy versions of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Arrays are C-contiguous; plane layouts are ``(P, H, W)`` where ``P`` folds
batch and channel axes together.
"""
import numpy as np


def upsample2x_forward(x):
    """Bilinear x2 upsampling with half-pixel centres and edge clamping."""
    p, h, w = x.shape
    # rows: out[2i] = .25 x[i-1] + .75 x[i] ; out[2i+1] = .75 x[i] + .25 x[i+1]
    prev = np.concatenate([x[:, :1], x[:, :-1]], axis=1)
    nxt = np.concatenate([x[:, 1:], x[:, -1:]], axis=1)
    rows = np.empty((p, 2 * h, w), dtype=x.dtype)
    rows[:, 0::2] = 0.25 * prev + 0.75 * x
    rows[:, 1::2] = 0.75 * x + 0.25 * nxt
    prev = np.concatenate([rows[:, :, :1], rows[:, :, :-1]], axis=2)
    nxt = np.concatenate([rows[:, :, 1:], rows[:, :, -1:]], axis=2)
    out = np.empty((p, 2 * h, 2 * w), dtype=x.dtype)
    out[:, :, 0::2] = 0.25 * prev + 0.75 * rows
    out[:, :, 1::2] = 0.75 * rows + 0.25 * nxt
    return out


def _adjoint_1d(g, axis):
    # transpose of the 1-D interpolation along `axis`
    even = np.take(g, np.arange(0, g.shape[axis], 2), axis=axis)
    odd = np.take(g, np.arange(1, g.shape[axis], 2), axis=axis)
    out = 0.75 * (even + odd)
    n = out.shape[axis]
    sl = [slice(None)] * g.ndim

    def s(a, b):
        sl[axis] = slice(a, b)
        return tuple(sl)

    # even output 2i pulls .25 from input i-1 (input 0 when i == 0)
    out[s(0, n - 1)] += 0.25 * even[s(1, n)]
    out[s(0, 1)] += 0.25 * even[s(0, 1)]
    # odd output 2i+1 pulls .25 from input i+1 (input n-1 when i == n-1)
    out[s(1, n)] += 0.25 * odd[s(0, n - 1)]
    out[s(n - 1, n)] += 0.25 * odd[s(n - 1, n)]
    return out


def upsample2x_backward(g):
    return np.ascontiguousarray(_adjoint_1d(_adjoint_1d(g, 2), 1))


def norm_forward(x, eps, per_sample):
    """Normalise ``x`` of shape (N, C, M) to zero mean and unit variance.

    Statistics are taken per (n, c) when ``per_sample`` else per c over
    (n, m). Returns ``(y, mean, var)`` with mean/var as float64 arrays of
    shape (N, C) or (C,).
    """
    axes = (2,) if per_sample else (0, 2)
    xd = x.astype(np.float64)
    mean = xd.mean(axis=axes)
    var = xd.var(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    if per_sample:
        y = (xd - mean[:, :, None]) * inv[:, :, None]
    else:
        y = (xd - mean[None, :, None]) * inv[None, :, None]
    return y.astype(x.dtype), mean, var


def norm_backward(g, y, var, eps, per_sample):
    axes = (2,) if per_sample else (0, 2)
    gd = g.astype(np.float64)
    yd = y.astype(np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    gm = gd.mean(axis=axes, keepdims=True)
    gym = (gd * yd).mean(axis=axes, keepdims=True)
    if per_sample:
        inv = inv[:, :, None]
    else:
        inv = inv[None, :, None]
    return (inv * (gd - gm - yd * gym)).astype(g.dtype)


def im2col(x, k, stride, pad):
    """(N, C, H, W) -> (N, C*k*k, Ho*Wo), zero padding."""
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def col2im(cols, shape, k, stride, pad):
    n, c, h, w = shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(n, c, k, k, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    if pad:
        xp = xp[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(xp)


def up_relu_norm_forward(x, eps):
    """Fused ``norm(relu(upsample2x(x)))`` per plane; returns ``(y, mean, var)``."""
    p, h, w = x.shape
    r = np.maximum(upsample2x_forward(x), 0)
    y, mean, var = norm_forward(r.reshape(1, p, 4 * h * w), eps, True)
    return y.reshape(p, 2 * h, 2 * w), mean[0], var[0]


def up_relu_norm_backward(g, y, mean, var, eps):
    p, h2, w2 = g.shape
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    var = np.asarray(var, dtype=np.float64).reshape(-1)
    d = norm_backward(g.reshape(1, p, -1), y.reshape(1, p, -1), var[None], eps, True).reshape(g.shape)
    # clamped activations sit exactly at the normalised image of zero
    inv = 1.0 / np.sqrt(var + eps)
    zero_level = ((0.0 - mean) * inv).astype(y.dtype)
    d = np.where(y > zero_level[:, None, None], d, 0).astype(g.dtype)
    return upsample2x_backward(d)
