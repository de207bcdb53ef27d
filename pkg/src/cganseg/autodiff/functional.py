"""Differentiable primitives.

Each function computes its forward result with numpy and attaches a closure
returning one gradient per input (``None`` where an input is constant).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, _op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- arithmetic -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), back, "mul")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    def back(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(x.data.sum()), (x,), back, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def back(g):
        return (np.full(x.shape, g.item() / n),)

    return _make(np.asarray(x.data.mean()), (x,), back, "mean")


def mean_axes(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    """Mean over ``axes`` (dropped from the result)."""
    n = int(np.prod([x.shape[a] for a in axes]))

    def back(g):
        g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape) / n,)

    return _make(x.data.mean(axis=axes), (x,), back, "mean_axes")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def back(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), back, "reshape")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), back, "matmul")


def abs(x: Tensor) -> Tensor:  # noqa: A001
    def back(g):
        return (g * np.sign(x.data),)

    return _make(np.abs(x.data), (x,), back, "abs")


def log(x: Tensor, eps: float = 0.0) -> Tensor:
    """Natural log of ``max(x, eps)``; gradient is zero where the clamp is active."""
    if eps > 0:
        clamped = np.maximum(x.data, eps)
        active = x.data >= eps
    else:
        clamped = x.data
        active = None
    if np.any(clamped <= 0):
        raise ValueError("log: non-positive argument")

    def back(g):
        out = g / clamped
        if active is not None:
            out = np.where(active, out, 0.0)
        return (out,)

    return _make(np.log(clamped), (x,), back, "log")


# -- activations ------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    pos = x.data > 0

    def back(g):
        return (g * pos,)

    return _make(np.where(pos, x.data, 0.0), (x,), back, "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope)

    def back(g):
        return (g * scale,)

    return _make(x.data * scale, (x,), back, "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def back(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), back, "tanh")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)

    def back(g):
        return (g * out * (1.0 - out),)

    return _make(out, (x,), back, "sigmoid")


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log-softmax of a 2-D tensor."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def back(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return _make(out, (x,), back, "log_softmax")


def softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _make(out, (x,), back, "softmax")


# -- structural ---------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ValueError("concat: empty input")
    ndim = tensors[0].ndim
    if not -ndim <= axis < ndim:
        raise ValueError(f"concat: axis {axis} out of range for {ndim}-d tensors")
    axis %= ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise ValueError(
                f"concat: incompatible shapes {tensors[0].shape} and {t.shape} along axis {axis}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias to an ``[N, C, ...]`` tensor."""
    if bias.ndim != 1 or bias.shape[0] != x.shape[1]:
        raise ValueError(f"bias_add: bias shape {bias.shape} does not match channels of {x.shape}")
    view = (1, -1) + (1,) * (x.ndim - 2)
    red = (0,) + tuple(range(2, x.ndim))

    def back(g):
        return g, g.sum(axis=red)

    return _make(x.data + bias.data.reshape(view), (x, bias), back, "bias_add")


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: zero each element with probability ``p``, rescale survivors."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def back(g):
        return (g * keep,)

    return _make(x.data * keep, (x,), back, "dropout")


# -- convolution ----------------------------------------------------------------

def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Receptive fields ``[N, C, ho, wo, kh, kw]`` of an already padded input (a view)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _scatter(cols: np.ndarray, out_shape: tuple[int, int, int, int], stride: int) -> np.ndarray:
    """Adjoint of ``_windows``: sum ``cols[N, ho, wo, C, kh, kw]`` into a padded canvas."""
    n, ho, wo, c, kh, kw = cols.shape
    canvas = np.zeros(out_shape)
    for i in range(kh):
        for j in range(kw):
            canvas[:, :, i : i + stride * (ho - 1) + 1 : stride,
                   j : j + stride * (wo - 1) + 1 : stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return canvas


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _crop(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return x[:, :, p:-p, p:-p]


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x[N,C,H,W]`` with ``kernel[F,C,kH,kW]``."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects 4-d input and kernel")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"conv2d: kernel has {kc} input channels, input has {c}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise ValueError("conv2d: kernel larger than padded input")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    xp = _pad(x.data, padding)
    win = _windows(xp, kh, kw, stride, ho, wo)
    out = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def back(g):
        gx = gk = None
        if x.requires_grad:
            cols = np.tensordot(g, kernel.data, axes=([1], [0]))  # [N, ho, wo, C, kh, kw]
            gx = _crop(_scatter(cols, xp.shape, stride), padding)
        if kernel.requires_grad:
            gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        return gx, gk

    return _make(np.ascontiguousarray(out), (x, kernel), back, "conv2d")


def conv2d_transpose(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution; ``kernel[Cin, Cout, kH, kW]``.

    Equals the input-gradient of :func:`conv2d` with the same kernel, so
    ``<conv2d(a, k), b> == <a, conv2d_transpose(b, k)>`` whenever the shapes line up.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d_transpose expects 4-d input and kernel")
    n, c, h, w = x.shape
    kc, f, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"conv2d_transpose: kernel has {kc} input channels, input has {c}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d_transpose: stride must be >= 1 and padding >= 0")
    full_h = (h - 1) * stride + kh
    full_w = (w - 1) * stride + kw
    if full_h - 2 * padding <= 0 or full_w - 2 * padding <= 0:
        raise ValueError("conv2d_transpose: non-positive output extent")
    cols = np.tensordot(x.data, kernel.data, axes=([1], [0]))  # [N, H, W, Cout, kh, kw]
    out = _crop(_scatter(cols, (n, f, full_h, full_w), stride), padding)

    def back(g):
        gx = gk = None
        win = _windows(_pad(g, padding), kh, kw, stride, h, w)  # [N, Cout, H, W, kh, kw]
        if x.requires_grad:
            gx = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if kernel.requires_grad:
            gk = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        return gx, gk

    return _make(np.ascontiguousarray(out), (x, kernel), back, "conv2d_transpose")
