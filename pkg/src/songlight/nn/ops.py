"""Differentiable operations over :class:`~songlight.nn.tensor.Tensor`.

Each op computes its forward value eagerly and, when a tape is active and an
input requires gradients, records a vector-Jacobian product closure.  All ops
preserve the dtype of their floating inputs, so float64 tensors can be used
for finite-difference verification.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, active_tape

BN_MODES = ("train", "batch_stats_eval", "running_stats_eval")
PROB_FLOOR = 1e-7


def _finish(out_data, inputs, vjp):
    req = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, req)
    tape = active_tape()
    if tape is not None and req:
        tape.record(out, tuple(inputs), vjp)
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb
    return _finish(a.data + b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb
    return _finish(a.data * b.data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D tensors")
    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb
    return _finish(a.data @ b.data, (a, b), vjp)


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b`` with a fused backward record."""
    if x.data.ndim != 2:
        raise ValueError("fully_connected expects a 2-D input")
    def vjp(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb
    return _finish(x.data @ w.data + b.data, (x, w, b), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    def vjp(g):
        return (g.reshape(old),)
    return _finish(x.data.reshape(shape), (x,), vjp)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    def vjp(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, tensors))
    return _finish(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def select_step(x: Tensor, t: int) -> Tensor:
    """Pick step ``t`` from a [batch, steps, features] tensor."""
    if x.data.ndim != 3:
        raise ValueError("select_step expects a 3-D tensor")
    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, t, :] = g
        return (gx,)
    return _finish(x.data[:, t, :], (x,), vjp)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError("slice_cols expects a 2-D tensor")
    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)
    return _finish(x.data[:, start:stop], (x,), vjp)


def sum_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _finish(x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


_CONV_INDEX_CACHE: dict[tuple, np.ndarray] = {}


def _conv_scatter_index(h, w, kh, kw, sh, sw, oh, ow):
    """Flat input positions for each (output position, kernel offset) pair."""
    key = (h, w, kh, kw, sh, sw)
    idx = _CONV_INDEX_CACHE.get(key)
    if idx is None:
        rows = (sh * np.arange(oh)[:, None] + np.arange(kh)[None, :])  # [oh, kh]
        cols = (sw * np.arange(ow)[:, None] + np.arange(kw)[None, :])  # [ow, kw]
        flat = (rows[:, None, :, None] * w + cols[None, :, None, :])   # [oh, ow, kh, kw]
        idx = flat.reshape(oh * ow, kh * kw)
        _CONV_INDEX_CACHE[key] = idx
    return idx


def conv2d(x: Tensor, kernel: Tensor, stride) -> Tensor:
    """Valid 2-D convolution, NHWC input and [kh, kw, c_in, c_out] kernel."""
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ValueError("stride components must be positive")
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError("conv2d expects 4-D input and kernel")
    n, h, w, c_in = x.shape
    kh, kw, kc, c_out = kernel.shape
    if kc != c_in:
        raise ValueError(f"kernel expects {kc} input channels, got {c_in}")
    if kh > h or kw > w:
        raise ValueError("kernel larger than input")
    oh = (h - kh) // sh + 1
    ow = (w - kw) // sw + 1
    xd = np.ascontiguousarray(x.data)
    s0, s1, s2, s3 = xd.strides
    patches = np.lib.stride_tricks.as_strided(
        xd, (n, oh, ow, kh, kw, c_in), (s0, s1 * sh, s2 * sw, s1, s2, s3))
    pmat = patches.reshape(n * oh * ow, kh * kw * c_in)
    kmat = kernel.data.reshape(kh * kw * c_in, c_out)
    out = (pmat @ kmat).reshape(n, oh, ow, c_out)

    def vjp(g):
        gmat = g.reshape(n * oh * ow, c_out)
        gk = (pmat.T @ gmat).reshape(kernel.shape) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            # [n, oh*ow, kh*kw, c_in] contributions scattered back to input
            gp = (gmat @ kmat.T).reshape(n, oh * ow, kh * kw, c_in)
            gx_flat = np.zeros((n, h * w, c_in), dtype=g.dtype)
            idx = _conv_scatter_index(h, w, kh, kw, sh, sw, oh, ow)
            np.add.at(gx_flat, (slice(None), idx), gp)
            gx = gx_flat.reshape(x.shape)
        return gx, gk
    return _finish(out, (x, kernel), vjp)


def time_max_pool(x: Tensor) -> Tensor:
    """Max over the time axis of a [batch, time, 1, channels] tensor.

    The backward pass routes each gradient to the earliest maximal frame.
    """
    if x.data.ndim != 4 or x.shape[2] != 1:
        raise ValueError("time_max_pool expects a [n, t, 1, c] tensor")
    if x.shape[1] < 1:
        raise ValueError("empty time axis")
    squeezed = x.data[:, :, 0, :]
    idx = np.argmax(squeezed, axis=1)  # earliest max per (n, c)
    out = np.take_along_axis(squeezed, idx[:, None, :], axis=1)[:, 0, :]
    def vjp(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx[:, :, 0, :], idx[:, None, :], g[:, None, :], axis=1)
        return (gx,)
    return _finish(out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    def vjp(g):
        return (g * (x.data > 0),)
    return _finish(np.maximum(x.data, 0), (x,), vjp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    def vjp(g):
        return (g * (1.0 - y * y),)
    return _finish(y, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)
    def vjp(g):
        return (g * y * (1.0 - y),)
    return _finish(y, (x,), vjp)


def softmax(x: Tensor, axis: int) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    den = e.sum(axis=axis, keepdims=True, dtype=np.float64)
    y = (e / den).astype(x.data.dtype, copy=False)
    def vjp(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)
    return _finish(y, (x,), vjp)


def dropout(x: Tensor, rate: float, *, train: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: keep probability ``1 - rate``, survivors scaled up."""
    if not (0.0 <= rate < 1.0):
        raise ValueError("dropout rate must be in [0, 1)")
    if not train or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    scale = 1.0 / (1.0 - rate)
    def vjp(g):
        return (g * keep * scale,)
    return _finish(x.data * keep * scale, (x,), vjp)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor,
               running_var: Tensor, *, mode: str, momentum: float = 0.9,
               eps: float = 1e-5) -> Tensor:
    """Normalize over all axes but the last.

    Modes: ``train`` uses batch statistics and updates the running buffers;
    ``batch_stats_eval`` uses batch statistics without updates (so a song's
    chunks normalize each other at inference); ``running_stats_eval`` uses the
    stored buffers.  Batch-statistics modes need at least two samples.
    """
    if mode not in BN_MODES:
        raise ValueError(f"unknown batch_norm mode {mode!r}")
    axes = tuple(range(x.data.ndim - 1))
    if mode != "running_stats_eval":
        count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
        if count < 2:
            raise ValueError("batch-statistics modes need a batch of at least 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if mode == "train":
            running_mean.data[...] = momentum * running_mean.data + (1 - momentum) * mu
            running_var.data[...] = momentum * running_var.data + (1 - momentum) * var
    else:
        mu = running_mean.data
        var = running_var.data
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    def vjp(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            if mode == "running_stats_eval":
                gx = g * (gamma.data * inv_std)
            else:
                n = x.data.size // x.shape[-1]
                gxhat = g * gamma.data
                gx = (inv_std / n) * (n * gxhat
                                      - gxhat.sum(axis=axes)
                                      - xhat * (gxhat * xhat).sum(axis=axes))
        return gx, ggamma, gbeta
    return _finish(out, (x, gamma, beta), vjp)


def _as_target(target, shape):
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.shape != shape:
        raise ValueError(f"target shape {t.shape} does not match predictions {shape}")
    return t.astype(np.float64, copy=False)


def binary_cross_entropy(pred: Tensor, target) -> Tensor:
    """Mean over batch and classes of per-class binary cross-entropy."""
    y = _as_target(target, pred.shape)
    lo, hi = PROB_FLOOR, 1.0 - PROB_FLOOR
    p = np.clip(pred.data, lo, hi)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean()
    def vjp(g):
        inside = (pred.data > lo) & (pred.data < hi)
        gp = g * inside * (p - y) / (p * (1.0 - p) * p.size)
        return (gp.astype(pred.data.dtype, copy=False), None)
    return _finish(np.asarray(loss, dtype=pred.data.dtype), (pred, Tensor._wrap(y, False)), vjp)


def categorical_cross_entropy(pred: Tensor, target) -> Tensor:
    """Mean over the batch of ``-log p[true class]`` against one-hot targets."""
    y = _as_target(target, pred.shape)
    lo, hi = PROB_FLOOR, 1.0 - PROB_FLOOR
    p = np.clip(pred.data, lo, hi)
    n = pred.shape[0]
    loss = -(y * np.log(p)).sum() / n
    def vjp(g):
        inside = (pred.data > lo) & (pred.data < hi)
        gp = g * inside * (-y / p) / n
        return (gp.astype(pred.data.dtype, copy=False), None)
    return _finish(np.asarray(loss, dtype=pred.data.dtype), (pred, Tensor._wrap(y, False)), vjp)
