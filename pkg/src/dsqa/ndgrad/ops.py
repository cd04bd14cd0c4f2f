"""Differentiable primitives.

Every function takes and returns :class:`DiffArray`; numpy arrays and python
scalars are accepted wherever an operand is constant.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .core import DTYPE, ConfigError, DiffArray, DimensionError, as_array, record
from .rng import RngState


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: DiffArray, b: DiffArray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return record("add", a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return record("sub", a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return record(
        "mul", av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def div(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    _broadcast_shape("div", a, b)
    av, bv = a.value, b.value
    out = av / bv

    def bwd(g):
        return _unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)

    return record("div", out, (a, b), bwd)


def neg(a) -> DiffArray:
    a = as_array(a)
    return record("neg", -a.value, (a,), lambda g: (-g,))


def exp(a) -> DiffArray:
    a = as_array(a)
    out = np.exp(a.value)
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> DiffArray:
    a = as_array(a)
    av = a.value
    return record("log", np.log(av), (a,), lambda g: (g / av,))


def square(a) -> DiffArray:
    a = as_array(a)
    av = a.value
    return record("square", av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a) -> DiffArray:
    a = as_array(a)
    out = np.sqrt(a.value)
    return record("sqrt", out, (a,), lambda g: (0.5 * g / out,))


def where(cond, a, b) -> DiffArray:
    """Elementwise select; ``cond`` is a constant boolean mask."""
    a, b = as_array(a), as_array(b)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    out = np.where(cond, a.value, b.value)

    def bwd(g):
        zero = np.zeros((), dtype=g.dtype)
        return _unbroadcast(np.where(cond, g, zero), sa), _unbroadcast(np.where(cond, zero, g), sb)

    return record("where", out.astype(DTYPE, copy=False), (a, b), bwd)


# -------------------------------------------------------------- activations


def relu(x) -> DiffArray:
    x = as_array(x)
    pos = x.value > 0
    return record("relu", np.where(pos, x.value, 0).astype(DTYPE), (x,), lambda g: (g * pos,))


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x) -> DiffArray:
    x = as_array(x)
    s = _sigmoid_np(x.value)
    return record("sigmoid", s, (x,), lambda g: (g * s * (1 - s),))


def saturating_sigmoid(x) -> DiffArray:
    """max(0, min(1, 1.2 * sigmoid(x) - 0.1)); zero gradient where clamped."""
    x = as_array(x)
    s = _sigmoid_np(x.value)
    raw = DTYPE(1.2) * s - DTYPE(0.1)
    out = np.clip(raw, 0.0, 1.0).astype(DTYPE)
    live = (raw > 0) & (raw < 1)
    return record("saturating_sigmoid", out, (x,), lambda g: (g * (1.2 * s * (1 - s)) * live,))


def tanh(x) -> DiffArray:
    x = as_array(x)
    t = np.tanh(x.value)
    return record("tanh", t, (x,), lambda g: (g * (1 - t * t),))


# --------------------------------------------------------------- reductions


def sum(x, axis=None, keepdims: bool = False) -> DiffArray:  # noqa: A001
    x = as_array(x)
    shape = x.shape
    out = np.sum(x.value, axis=axis, keepdims=keepdims, dtype=DTYPE)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(DTYPE),)

    return record("sum", np.asarray(out, dtype=DTYPE), (x,), bwd)


def mean(x, axis=None, keepdims: bool = False) -> DiffArray:
    x = as_array(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# ----------------------------------------------------------------- shaping


def reshape(x, shape) -> DiffArray:
    x = as_array(x)
    old = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {old} into {shape}") from None
    return record("reshape", out, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes: Sequence[int]) -> DiffArray:
    x = as_array(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record("transpose", x.value.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swapaxes(x, a: int, b: int) -> DiffArray:
    x = as_array(x)
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def getitem(x, index) -> DiffArray:
    """Basic (slice/int) indexing; for gathers use :func:`take`."""
    x = as_array(x)
    shape = x.shape

    def bwd(g):
        full = np.zeros(shape, dtype=DTYPE)
        full[index] = g
        return (full,)

    return record("getitem", np.ascontiguousarray(x.value[index]), (x,), bwd)


def concat(xs: Sequence, axis: int = 0) -> DiffArray:
    xs = [as_array(x) for x in xs]
    try:
        out = np.concatenate([x.value for x in xs], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[x.shape for x in xs]}") from None
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return record("concat", out, xs, lambda g: np.split(g, splits, axis=axis))


def take(table, ids) -> DiffArray:
    """Row lookup ``table[ids]`` (embedding); gradient scatters back into rows."""
    table = as_array(table)
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def bwd(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, *shape[1:]))
        return (full,)

    return record("take", table.value[ids], (table,), bwd)


def stop_gradient(x) -> DiffArray:
    return DiffArray(as_array(x).value)


def gradient_redirect(forward_value, grad_target) -> DiffArray:
    """Forward exactly ``forward_value``; backward sends everything to ``grad_target``.

    Equivalent to ``forward_value + grad_target - stop_gradient(grad_target)``
    but bit-exact in the forward direction.
    """
    fv, gt = as_array(forward_value), as_array(grad_target)
    if fv.shape != gt.shape:
        raise DimensionError(f"gradient_redirect: shapes {fv.shape} and {gt.shape} differ")
    return record("gradient_redirect", fv.value.copy(), (fv, gt), lambda g: (None, g))


# ---------------------------------------------------------------- linear


def matmul(a, b) -> DiffArray:
    a, b = as_array(a), as_array(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    av, bv = a.value, b.value

    def bwd(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return record("matmul", av @ bv, (a, b), bwd)


def affine(x, weight, bias=None) -> DiffArray:
    """``x @ weight + bias`` over the last axis of ``x``."""
    x, weight = as_array(x), as_array(weight)
    d = x.shape[-1] if x.ndim else 0
    if weight.ndim != 2 or d != weight.shape[0]:
        raise DimensionError(f"affine: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None:
        bias = as_array(bias)
        if bias.shape != (weight.shape[1],):
            raise DimensionError(f"affine: bias {bias.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.value.reshape(-1, d)
    w = weight.value
    out = x2 @ w
    if bias is not None:
        out = out + bias.value
    out = out.reshape(*lead, w.shape[1])

    def bwd(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.T).reshape(*lead, d)
        gw = x2.T @ g2
        return (gx, gw) if bias is None else (gx, gw, g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record("affine", out, parents, bwd)


def conv1d(x, kernel, bias=None, stride: int = 1) -> DiffArray:
    """SAME-padded cross-correlation along the length axis.

    ``x`` is ``[..., length, ch_in]``, ``kernel`` is ``[width, ch_in, ch_out]``;
    the result has length ``ceil(length / stride)``. Zero padding is split as
    evenly as possible with the extra element on the right.
    """
    x, kernel = as_array(x), as_array(kernel)
    if stride < 1:
        raise ConfigError(f"conv1d: stride must be >= 1, got {stride}")
    if kernel.ndim != 3 or kernel.shape[0] < 1:
        raise ConfigError(f"conv1d: kernel must be [width>=1, ch_in, ch_out], got {kernel.shape}")
    width, cin, cout = kernel.shape
    if x.ndim < 2 or x.shape[-1] != cin:
        raise DimensionError(f"conv1d: input {x.shape} incompatible with kernel {kernel.shape}")
    length = x.shape[-2]
    if length < 1:
        raise DimensionError("conv1d: empty sequence")
    out_len = -(-length // stride)
    pad_total = max((out_len - 1) * stride + width - length, 0)
    left = pad_total // 2
    right = pad_total - left
    lead = x.shape[:-2]
    xv = x.value.reshape(-1, length, cin)
    xp = np.pad(xv, ((0, 0), (left, right), (0, 0)))
    kv = kernel.value
    stop = (out_len - 1) * stride + 1
    taps = [xp[:, j : j + stop : stride, :] for j in range(width)]
    cols = np.concatenate(taps, axis=-1)  # [B, out_len, width*cin]
    kflat = kv.reshape(width * cin, cout)
    out = cols @ kflat
    if bias is not None:
        bias = as_array(bias)
        out = out + bias.value
    out = out.reshape(*lead, out_len, cout)

    def bwd(g):
        g3 = g.reshape(-1, out_len, cout)
        gk = (cols.reshape(-1, width * cin).T @ g3.reshape(-1, cout)).reshape(width, cin, cout)
        gcols = g3 @ kflat.T
        gxp = np.zeros_like(xp)
        for j in range(width):
            gxp[:, j : j + stop : stride, :] += gcols[:, :, j * cin : (j + 1) * cin]
        gx = gxp[:, left : left + length, :].reshape(*lead, length, cin)
        if bias is None:
            return gx, gk
        return gx, gk, g3.sum(axis=(0, 1))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv1d", out.astype(DTYPE, copy=False), parents, bwd)


# ------------------------------------------------------------ normalizing


def layer_norm(x, gain, bias, epsilon: float = 1e-6) -> DiffArray:
    x, gain, bias = as_array(x), as_array(gain), as_array(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs input {x.shape}")
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = xc * inv
    out = xhat * gain.value + bias.value

    def bwd(g):
        gxhat = g * gain.value
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_norm", out.astype(DTYPE, copy=False), (x, gain, bias), bwd)


def _log_softmax_np(v: np.ndarray, axis: int) -> np.ndarray:
    m = v.max(axis=axis, keepdims=True)
    z = v - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(x, axis: int = -1) -> DiffArray:
    x = as_array(x)
    p = np.exp(_log_softmax_np(x.value, axis))

    def bwd(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return record("softmax", p, (x,), bwd)


def log_softmax(x, axis: int = -1) -> DiffArray:
    x = as_array(x)
    out = _log_softmax_np(x.value, axis)
    p = np.exp(out)
    return record("log_softmax", out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits, targets, mask=None) -> DiffArray:
    """Mean negative log-likelihood in nats over positions where ``mask`` is 1."""
    logits = as_array(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    mask = np.ones(targets.shape, dtype=DTYPE) if mask is None else np.asarray(mask, dtype=DTYPE)
    if mask.shape != targets.shape:
        raise DimensionError(f"cross_entropy: mask {mask.shape} vs targets {targets.shape}")
    count = float(mask.sum())
    if count <= 0:
        raise ValueError("cross_entropy: mask selects no positions, mean is undefined")
    lsm = _log_softmax_np(logits.value, -1)
    picked = np.take_along_axis(lsm, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum(dtype=np.float64) / count

    def bwd(g):
        grad = np.exp(lsm)
        np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1.0, -1)
        return (grad * (mask[..., None] * (float(g) / count)),)

    return record("cross_entropy", np.asarray(loss, dtype=DTYPE), (logits,), bwd)


# ------------------------------------------------------------- stochastic


def gaussian_noise(shape, sigma: float, rng: RngState) -> DiffArray:
    """Constant i.i.d. Normal(0, sigma^2) samples."""
    if sigma < 0:
        raise ConfigError(f"gaussian_noise: sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return DiffArray(np.zeros(shape, dtype=DTYPE))
    return DiffArray(rng.normal(shape) * DTYPE(sigma))


def dropout(x, rate: float, rng: RngState | None, train: bool) -> DiffArray:
    x = as_array(x)
    if not train or rate <= 0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode requires an rng")
    keep = (rng.uniform(x.shape) >= rate).astype(DTYPE) / DTYPE(1.0 - rate)
    return mul(x, keep)


def sinusoidal_positions(length: int, dim: int, offset: int = 0) -> np.ndarray:
    pos = np.arange(offset, offset + length, dtype=np.float64)[:, None]
    half = dim // 2
    freq = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = pos * freq[None, :]
    out = np.zeros((length, dim), dtype=DTYPE)
    out[:, :half] = np.sin(ang)
    out[:, half : 2 * half] = np.cos(ang)
    return out


# ------------------------------------------------------------- operators


def _rev(fn):
    return lambda self, other: fn(other, self)


DiffArray.__add__ = add
DiffArray.__radd__ = _rev(add)
DiffArray.__sub__ = sub
DiffArray.__rsub__ = _rev(sub)
DiffArray.__mul__ = mul
DiffArray.__rmul__ = _rev(mul)
DiffArray.__truediv__ = div
DiffArray.__rtruediv__ = _rev(div)
DiffArray.__neg__ = neg
DiffArray.__matmul__ = matmul
DiffArray.__getitem__ = getitem
