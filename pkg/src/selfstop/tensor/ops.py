"""Differentiable operations.

All image tensors use NCHW layout. Each op computes its forward value with
numpy or the kernels in :mod:`.kernels` and returns a :class:`Tensor` whose
backward closure maps the output gradient to one gradient per input.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from . import kernels
from .tensor import Tensor, check_finite, grad_enabled, make_result


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        if x.is_leaf:
            check_finite(x.data, x.name or "input")
        return x
    dtype = like.dtype if like is not None else None
    t = Tensor(x, dtype=dtype)
    check_finite(t.data, "input")
    return t


def _conv_out(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, ``x`` (N, C, H, W) with ``w`` (O, C, k, k)."""
    x = _as_tensor(x)
    w = _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError("conv2d", "expected NCHW input and square OCkk weight", x.shape, w.shape)
    n, c, h, wd = x.shape
    o, ci, k, _ = w.shape
    if ci != c:
        raise ShapeError("conv2d", f"input has {c} channels, weight expects {ci}", x.shape, w.shape)
    if stride < 1 or padding < 0:
        raise ShapeError("conv2d", f"invalid stride={stride} padding={padding}")
    ho, wo = _conv_out(h, k, stride, padding), _conv_out(wd, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d", "kernel larger than padded input", x.shape, w.shape)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (o,):
            raise ShapeError("conv2d", "bias must have one entry per output channel", b.shape, (o,))

    xd, wm = x.data, w.data.reshape(o, c * k * k)
    if k == 1 and stride == 1 and padding == 0:
        out, back = _conv_pointwise(xd, wm)
    elif stride == 1:
        out, back = _conv_shifted(xd, w.data, padding, ho, wo)
    else:
        out, back = _conv_im2col(xd, wm, k, stride, padding, ho, wo)
    out = out.reshape(n, o, ho, wo)
    if b is not None:
        out += b.data[None, :, None, None]

    def backward(g):
        dx, dw = back(np.ascontiguousarray(g).reshape(n, o, ho * wo))
        db = g.sum(axis=(0, 2, 3)) if b is not None else None
        return dx, dw.reshape(w.shape), db

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, "conv2d", parents, backward)


def _conv_pointwise(xd, wm):
    n, c, h, wd = xd.shape
    xf = xd.reshape(n, c, h * wd)
    out = np.matmul(wm, xf)

    def back(g):
        dx = np.matmul(wm.T, g).reshape(xd.shape)
        dw = g[0] @ xf[0].T
        for i in range(1, n):
            dw += g[i] @ xf[i].T
        return dx, dw

    return out, back


def _conv_shifted(xd, w, pad, ho, wo):
    # stride-1 conv as a sum of matmuls over contiguous shifted windows of the
    # flattened padded image; the k-1 spill columns per row are discarded
    n, c, h, wd = xd.shape
    o, _, k, _ = w.shape
    hp, wp = h + 2 * pad, wd + 2 * pad
    span = ho * wp
    flat = np.zeros((n, c, hp * wp + k - 1), dtype=xd.dtype)
    flat[:, :, : hp * wp].reshape(n, c, hp, wp)[:, :, pad:pad + h, pad:pad + wd] = xd
    taps = [(i, j, np.ascontiguousarray(w[:, :, i, j])) for i in range(k) for j in range(k)]
    full = np.zeros((n, o, span), dtype=xd.dtype)
    for i, j, wij in taps:
        off = i * wp + j
        full += np.matmul(wij, flat[:, :, off:off + span])
    out = np.ascontiguousarray(full.reshape(n, o, ho, wp)[:, :, :, :wo])

    def back(g):
        gf = np.zeros((n, o, ho, wp), dtype=g.dtype)
        gf[:, :, :, :wo] = g.reshape(n, o, ho, wo)
        gf = gf.reshape(n, o, span)
        dflat = np.zeros_like(flat)
        dw = np.zeros_like(w)
        for i, j, wij in taps:
            off = i * wp + j
            dflat[:, :, off:off + span] += np.matmul(wij.T, gf)
            win = flat[:, :, off:off + span]
            acc = gf[0] @ win[0].T
            for s in range(1, n):
                acc += gf[s] @ win[s].T
            dw[:, :, i, j] = acc
        dx = dflat[:, :, : hp * wp].reshape(n, c, hp, wp)[:, :, pad:pad + h, pad:pad + wd]
        return np.ascontiguousarray(dx), dw

    return out, back


def _conv_im2col(xd, wm, k, stride, pad, ho, wo):
    cols = kernels.im2col(xd, k, stride, pad)
    out = np.matmul(wm, cols)

    def back(g):
        dcols = np.matmul(wm.T, g)
        dx = kernels.col2im(dcols, xd.shape, k, stride, pad)
        dw = g[0] @ cols[0].T
        for i in range(1, g.shape[0]):
            dw += g[i] @ cols[i].T
        return dx, dw

    return out, back


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x`` (N, in) times ``w`` (out, in) transposed, plus optional bias."""
    x = _as_tensor(x)
    w = _as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError("linear", "expected (N, in) input and (out, in) weight", x.shape, w.shape)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeError("linear", "bias must match out features", b.shape, (w.shape[0],))
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        return g @ w.data, g.T @ x.data, (g.sum(axis=0) if b is not None else None)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, "linear", parents, backward)


def upsample2x(x: Tensor) -> Tensor:
    """Bilinear upsampling by two in both spatial dims (half-pixel centres)."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError("bilinear_upsample", "expected NCHW input", x.shape)
    n, c, h, w = x.shape
    out = kernels.upsample2x_forward(x.data.reshape(n * c, h, w)).reshape(n, c, 2 * h, 2 * w)

    def backward(g):
        g = np.ascontiguousarray(g).reshape(n * c, 2 * h, 2 * w)
        return (kernels.upsample2x_backward(g).reshape(n, c, h, w),)

    return make_result(out, "bilinear_upsample", (x,), backward)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)

    def backward(g):
        return (g * (out > 0),)

    return make_result(out, "relu", (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype, copy=False)

    def backward(g):
        return (g * out * (1 - out),)

    return make_result(out, "sigmoid", (x,), backward)


def sine(x: Tensor, omega: float = 1.0) -> Tensor:
    """Elementwise ``sin(omega * x)``."""
    x = _as_tensor(x)
    arg = x.data * x.data.dtype.type(omega)
    out = np.sin(arg)

    def backward(g):
        return (g * (omega * np.cos(arg)),)

    return make_result(out, "sine", (x,), backward)


@dataclass
class BatchNormState:
    """Affine parameters and running statistics of one batch-norm layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    num_batches: int = field(default=0)

    @classmethod
    def create(cls, channels: int, dtype=np.float32, name: str = "bn", momentum=0.1, eps=1e-5):
        return cls(
            gamma=Tensor(np.ones(channels), requires_grad=True, name=f"{name}.weight", dtype=dtype),
            beta=Tensor(np.zeros(channels), requires_grad=True, name=f"{name}.bias", dtype=dtype),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            momentum=momentum,
            eps=eps,
        )


def _nc_m(x: Tensor, op: str):
    if x.ndim == 4:
        n, c, h, w = x.shape
        return x.data.reshape(n, c, h * w)
    if x.ndim == 2:
        n, c = x.shape
        return x.data.reshape(n, c, 1)
    raise ShapeError(op, "expected (N, C, H, W) or (N, C) input", x.shape)


def batch_norm(x: Tensor, state: BatchNormState, training: bool = True) -> Tensor:
    """Batch normalisation over (N, H, W) per channel with affine output.

    In training mode batch statistics are used and the running estimates are
    updated with ``state.momentum`` (unbiased running variance). In eval mode
    the running estimates are used.
    """
    x = _as_tensor(x)
    x3 = _nc_m(x, "batch_norm")
    n, c, m = x3.shape
    if state.gamma.shape != (c,):
        raise ShapeError("batch_norm", "channel count mismatch", x.shape, state.gamma.shape)
    gamma, beta = state.gamma, state.beta
    gd = gamma.data[None, :, None]
    if training:
        count = n * m
        if count < 2:
            raise ShapeError("batch_norm", "training mode needs more than one value per channel", x.shape)
        xhat, mean, var = kernels.norm_forward(np.ascontiguousarray(x3), state.eps, False)
        if grad_enabled():
            mom = state.momentum
            state.running_mean = (1 - mom) * state.running_mean + mom * mean
            state.running_var = (1 - mom) * state.running_var + mom * var * count / (count - 1)
            state.num_batches += 1

        def backward(g):
            g3 = np.ascontiguousarray(g).reshape(n, c, m)
            dgamma = np.einsum("ncm,ncm->c", g3, xhat, dtype=np.float64).astype(gamma.dtype)
            dbeta = g3.sum(axis=(0, 2), dtype=np.float64).astype(beta.dtype)
            dx = kernels.norm_backward(np.ascontiguousarray(g3 * gd), xhat, var, state.eps, False)
            return dx.reshape(x.shape), dgamma, dbeta
    else:
        inv = (1.0 / np.sqrt(state.running_var + state.eps)).astype(x.dtype)
        xhat = (x3 - state.running_mean.astype(x.dtype)[None, :, None]) * inv[None, :, None]

        def backward(g):
            g3 = g.reshape(n, c, m)
            dgamma = np.einsum("ncm,ncm->c", g3, xhat, dtype=np.float64).astype(gamma.dtype)
            dbeta = g3.sum(axis=(0, 2), dtype=np.float64).astype(beta.dtype)
            dx = g3 * (gd * inv[None, :, None])
            return dx.reshape(x.shape), dgamma, dbeta

    out = (xhat * gd + beta.data[None, :, None]).reshape(x.shape)
    return make_result(out, "batch_norm", (x, gamma, beta), backward)


def channel_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalisation over spatial dims (no affine)."""
    x = _as_tensor(x)
    x3 = _nc_m(x, "channel_norm")
    if x3.shape[2] < 2:
        raise ShapeError("channel_norm", "needs more than one spatial position", x.shape)
    y, _mean, var = kernels.norm_forward(np.ascontiguousarray(x3), eps, True)

    def backward(g):
        g3 = np.ascontiguousarray(g).reshape(x3.shape)
        return (kernels.norm_backward(g3, y, var, eps, True).reshape(x.shape),)

    return make_result(y.reshape(x.shape), "channel_norm", (x,), backward)


def up_relu_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """``channel_norm(relu(upsample2x(x)))`` in one pass per channel plane.

    Numerically the same map as the three ops chained; it exists because the
    chained form streams a full-resolution tensor through memory six times.
    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError("up_relu_norm", "expected NCHW input", x.shape)
    n, c, h, w = x.shape
    y, mean, var = kernels.up_relu_norm_forward(np.ascontiguousarray(x.data).reshape(n * c, h, w), eps)

    def backward(g):
        g = np.ascontiguousarray(g, dtype=y.dtype).reshape(n * c, 2 * h, 2 * w)
        return (kernels.up_relu_norm_backward(g, y, mean, var, eps).reshape(x.shape),)

    return make_result(y.reshape(n, c, 2 * h, 2 * w), "up_relu_norm", (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.shape != b.shape:
        raise ShapeError("add", "operands must have identical shapes", a.shape, b.shape)

    def backward(g):
        return g, g

    return make_result(a.data + b.data, "add", (a, b), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat", "needs at least one input")
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or any(
            d1 != d2 for i, (d1, d2) in enumerate(zip(ref, t.shape)) if i != axis % len(ref)
        ):
            raise ShapeError("concat", f"shapes differ off axis {axis}", ref, t.shape)
    sizes = [t.shape[axis] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(lo, hi)
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return make_result(out, "concat", ts, backward)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape to {tuple(shape)}", x.shape) from None

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result(out, "reshape", (x,), backward)


def permute(x: Tensor, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError("permute", f"axes {axes} are not a permutation", x.shape)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return make_result(out, "permute", (x,), backward)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = _as_tensor(x)
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)

    def backward(g):
        return (np.full(x.shape, g, dtype=x.dtype),)

    return make_result(out, "sum", (x,), backward)


def _target(pred: Tensor, target, op: str) -> np.ndarray:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        if t.ndim == 0:
            t = np.broadcast_to(t, pred.shape)
        else:
            raise ShapeError(op, "prediction and target differ", pred.shape, t.shape)
    return t


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error, reduced in float64. The target may be a Tensor,
    array or scalar."""
    pred = _as_tensor(pred)
    tgt_t = target if isinstance(target, Tensor) else None
    t = _target(pred, target, "mse")
    diff = pred.data - t
    n = diff.size
    out = np.asarray(np.dot(diff.reshape(-1).astype(np.float64), diff.reshape(-1).astype(np.float64)) / n,
                     dtype=pred.dtype)

    def backward(g):
        d = diff * pred.dtype.type(2.0 * float(g) / n)
        return (d, -d) if tgt_t is not None else (d,)

    parents = (pred, tgt_t) if tgt_t is not None else (pred,)
    return make_result(out, "mse", parents, backward)


def l1(pred: Tensor, target) -> Tensor:
    """Mean absolute error; the subgradient at zero is 0."""
    pred = _as_tensor(pred)
    tgt_t = target if isinstance(target, Tensor) else None
    t = _target(pred, target, "l1")
    diff = pred.data - t
    n = diff.size
    out = np.asarray(np.abs(diff).sum(dtype=np.float64) / n, dtype=pred.dtype)

    def backward(g):
        d = np.sign(diff) * pred.dtype.type(float(g) / n)
        return (d, -d) if tgt_t is not None else (d,)

    parents = (pred, tgt_t) if tgt_t is not None else (pred,)
    return make_result(out, "l1", parents, backward)


def external_loss(x: Tensor, fn, name: str = "external_loss") -> Tensor:
    """Scalar loss computed outside the graph.

    ``fn(array) -> (value, grad_array)`` must return the loss value and its
    gradient with respect to ``x``.
    """
    x = _as_tensor(x)
    value, grad = fn(x.data)
    grad = np.asarray(grad, dtype=x.dtype)
    if grad.shape != x.shape:
        raise ShapeError(name, "gradient shape differs from input", grad.shape, x.shape)
    check_finite(grad, name)

    def backward(g):
        return (grad * x.dtype.type(float(g)),)

    return make_result(np.asarray(value, dtype=x.dtype), name, (x,), backward)


OPS = {
    "conv2d": conv2d,
    "linear": linear,
    "bilinear_upsample": upsample2x,
    "relu": relu,
    "sine": sine,
    "sigmoid": sigmoid,
    "batch_norm": batch_norm,
    "channel_norm": channel_norm,
    "up_relu_norm": up_relu_norm,
    "add": add,
    "concat": concat,
    "mse": mse,
    "l1": l1,
    "sum": sum,
    "reshape": reshape,
    "permute": permute,
}


def forward_op(op_kind: str, inputs, **attrs) -> Tensor:
    """Dispatch by name: ``forward_op("conv2d", [x, w], stride=2, padding=1)``."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise ShapeError(op_kind, f"unknown op; expected one of {sorted(OPS)}") from None
    if op_kind == "concat":
        return fn(list(inputs), **attrs)
    return fn(*inputs, **attrs)
