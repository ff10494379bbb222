"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray plus an optional gradient and a backward closure.
Graphs are built eagerly by the op functions below and walked once by
``Tensor.backward`` in reverse topological order. Everything runs on CPU in
float64 by default (float32 available for training throughput); there is no
graph compilation and no fusion.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import NumericsError, ShapeError

NEG_INF = -1e30  # additive mask value; exp(NEG_INF - max) underflows to exactly 0


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Backpropagate from a scalar output, accumulating into .grad."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
                node.grad = None  # intermediates freed; leaves keep grads

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor._node(out_data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor._node(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._node(out_data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor._node(out_data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return Tensor._node(-a.data, (a,), backward)


def square(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g * 2.0 * a.data)

    return Tensor._node(a.data * a.data, (a,), backward)


def texp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # inf propagates to the finite-check error surface
        out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return Tensor._node(out_data, (a,), backward)


def tlog(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return Tensor._node(out_data, (a,), backward)


def tsqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out_data)

    return Tensor._node(out_data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out_data * out_data))

    return Tensor._node(out_data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._node(out_data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        a._accumulate(g * (a.data > 0))

    return Tensor._node(out_data, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    out_data = np.where(a.data > 0, a.data, slope * a.data)

    def backward(g):
        a._accumulate(g * np.where(a.data > 0, 1.0, slope))

    return Tensor._node(out_data, (a,), backward)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient passes only where a > floor."""
    out_data = np.maximum(a.data, floor)

    def backward(g):
        a._accumulate(g * (a.data > floor))

    return Tensor._node(out_data, (a,), backward)


# -- shape manipulation ----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return Tensor._node(out_data, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = np.transpose(a.data, axes)

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    return Tensor._node(out_data, (a,), backward)


def _idx_may_repeat(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (np.ndarray, list)) for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    out_data = a.data[idx]
    if not isinstance(out_data, np.ndarray):
        out_data = np.asarray(out_data, dtype=a.data.dtype)

    def backward(g):
        ga = np.zeros_like(a.data)
        if _idx_may_repeat(idx):
            np.add.at(ga, idx, g)
        else:
            ga[idx] += g
        a._accumulate(ga)

    return Tensor._node(out_data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, stop)
                t._accumulate(g[tuple(sl)])

    return Tensor._node(out_data, tuple(tensors), backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            ga = np.broadcast_to(g, a.data.shape)
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                g = np.expand_dims(g, axes)
            ga = np.broadcast_to(g, a.data.shape)
        a._accumulate(ga.astype(a.data.dtype, copy=False))

    return Tensor._node(np.asarray(out_data), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


# -- linear algebra ----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.ndim} and {b.ndim}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return Tensor._node(out_data, (a, b), backward)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ids (…,) int array -> (…, E)."""
    ids = np.asarray(ids)
    out_data = weight.data[ids]

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.data.shape[1]))
        weight._accumulate(gw)

    return Tensor._node(out_data, (weight,), backward)


# -- reductions with stabilized exponentials -----------------------------------------


def softmax(a: Tensor, axis: int) -> Tensor:
    """Stable softmax along one axis; raises on non-finite input."""
    x = a.data
    if not np.isfinite(x).all():
        raise NumericsError("softmax: non-finite input")
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - dot))

    return Tensor._node(out_data, (a,), backward)


def logsumexp(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = m + np.log(s)
    soft = e / s
    if not keepdims:
        out_data = out_data.squeeze(axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(soft * g)

    return Tensor._node(out_data, (a,), backward)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits, computed in stable form."""
    z = logits.data
    t = np.asarray(targets, dtype=z.dtype)
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out_data = np.asarray(loss.mean())
    sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def backward(g):
        logits._accumulate(g * (sig - t) / z.size)

    return Tensor._node(out_data, (logits,), backward)


def dropout(a: Tensor, p: float, rng, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p <= 0.0:
        return a
    keep = (rng.uniform(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)

    def backward(g):
        a._accumulate(g * keep)

    return Tensor._node(a.data * keep, (a,), backward)


# -- spatial ops -------------------------------------------------------------------


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor], stride: int = 1, pad: int = 0) -> Tensor:
    """Direct 2-D cross-correlation with explicit stride and zero padding.

    x: (B, C, H, W), w: (F, C, kh, kw), b: (F,) or None -> (B, F, Ho, Wo).
    Lowered to one im2col matrix per call, shared by forward and backward.
    """
    B, C, H, W = x.data.shape
    F, Cw, kh, kw = w.data.shape
    if C != Cw:
        raise ShapeError(f"conv2d channel mismatch: input {C}, kernel {Cw}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if Hp < kh or Wp < kw:
        raise ShapeError("conv2d: kernel larger than padded input")
    win = _windows(xp, kh, kw, stride)  # (B, C, Ho, Wo, kh, kw) strided view
    Ho, Wo = win.shape[2], win.shape[3]
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wm = w.data.reshape(F, C * kh * kw)
    out_data = (col @ wm.T).reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)
    if b is not None:
        out_data = out_data + b.data[None, :, None, None]

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        if w.requires_grad:
            w._accumulate((gm.T @ col).reshape(F, C, kh, kw))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcol = (gm @ wm).reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
            for u in range(kh):
                for v in range(kw):
                    gxp[:, :, u : u + stride * Ho : stride, v : v + stride * Wo : stride] += dcol[..., u, v]
            gx = gxp[:, :, pad : pad + H, pad : pad + W] if pad else gxp
            x._accumulate(gx)

    return Tensor._node(out_data, parents, backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    out_data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        B, C, H2, W2 = g.shape
        x._accumulate(g.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5)))

    return Tensor._node(out_data, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C)."""
    B, C, H, W = x.data.shape
    out_data = x.data.mean(axis=(2, 3))

    def backward(g):
        x._accumulate(np.broadcast_to(g[:, :, None, None], x.data.shape) / (H * W))

    return Tensor._node(out_data, (x,), backward)


def global_max_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C); gradient routes to the argmax cell."""
    B, C, H, W = x.data.shape
    flat = x.data.reshape(B, C, H * W)
    arg = flat.argmax(axis=2)
    out_data = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        gx = np.zeros((B, C, H * W), dtype=g.dtype)
        np.put_along_axis(gx, arg[:, :, None], g[:, :, None], axis=2)
        x._accumulate(gx.reshape(B, C, H, W))

    return Tensor._node(out_data, (x,), backward)


# -- composites used across models ----------------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x (…, I) @ w (I, O) + b (O,)."""
    return matmul(x, w) + b.reshape((1,) * (x.ndim - 1) + (b.data.shape[0],))


def masked_fill_add(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Add NEG_INF where mask is False; mask broadcasts against scores."""
    keep = np.asarray(mask, dtype=scores.data.dtype)
    return scores + Tensor((1.0 - keep) * NEG_INF)


def cosine_similarity(a: Tensor, b: Tensor, axis: int, floor: float = 1e-30) -> Tensor:
    """Cosine along one axis with a zero-norm floor; caller validates norms."""
    num = tsum(mul(a, b), axis=axis)
    na = tsqrt(clamp_min(tsum(square(a), axis=axis), floor))
    nb = tsqrt(clamp_min(tsum(square(b), axis=axis), floor))
    return div(num, mul(na, nb))


def check_finite(name: str, *tensors: Tensor) -> None:
    """Raise NumericsError naming the operation if any value is NaN/Inf."""
    for t in tensors:
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        if not np.isfinite(arr).all():
            raise NumericsError(f"{name}: non-finite values")
