"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations the 1D ResNet needs are provided.  Each op returns a
``Tensor`` whose ``_backward`` closure pushes the upstream gradient into its
parents; ``Tensor.backward`` replays closures in reverse topological order.
Graph recording is skipped inside ``no_grad()`` or when no parent requires
a gradient.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import StructuralError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name!r})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise StructuralError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)


def _result(data, parents, backward) -> Tensor:
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise StructuralError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _result(a.data + b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return _result(np.where(mask, x.data, 0).astype(x.data.dtype, copy=False), (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: kept activations are scaled by 1/(1-p)."""
    if p <= 0.0 or rng is None:
        return x
    keep = rng.random(x.shape, dtype=np.float64) >= p
    scale = np.where(keep, 1.0 / (1.0 - p), 0.0).astype(x.data.dtype)

    def backward(g):
        x._accumulate(g * scale)

    return _result(x.data * scale, (x,), backward)


def permute(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def backward(g):
        x._accumulate(np.transpose(g, inverse))

    return _result(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), backward)


def mean_over_time(x: Tensor) -> Tensor:
    """Global average pooling over the last axis: (B, C, T) -> (B, C)."""
    T = x.shape[-1]

    def backward(g):
        x._accumulate(np.broadcast_to(g[..., None] / T, x.shape))

    return _result(x.data.mean(axis=-1), (x,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """(B, F) @ (F, O) + (O,)."""
    if x.shape[-1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise StructuralError(f"linear: incompatible shapes {x.shape}, {w.shape}, {b.shape}")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _result(x.data @ w.data + b.data, (x, w, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)

    def backward(g):
        x._accumulate(g * out * (1.0 - out))

    return _result(out, (x,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.shape:
        raise StructuralError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target
    count = diff.size

    def backward(g):
        pred._accumulate(g * 2.0 * diff / count)

    return _result(np.asarray(np.mean(diff * diff), dtype=pred.data.dtype), (pred,), backward)


# ---------------------------------------------------------------- convolution

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    B, C, T = x.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    cols = sliding_window_view(xp, k, axis=2)  # (B, C, T, k)
    return np.ascontiguousarray(cols.transpose(0, 2, 1, 3)).reshape(B * T, C * k)


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Stride-1, same-padded cross-correlation.

    x: (B, C_in, T), w: (C_out, C_in, k), b: (C_out,) -> (B, C_out, T).
    Returns the output and the column matrix needed by ``conv1d_backward``.
    """
    if x.ndim != 3 or w.ndim != 3 or b.ndim != 1:
        raise StructuralError("conv1d expects x (B,C,T), w (O,C,k), b (O,)")
    B, C, T = x.shape
    O, C_w, k = w.shape
    if C_w != C or b.shape[0] != O:
        raise StructuralError(f"conv1d: x has {C} channels, w is {w.shape}, b is {b.shape}")
    if k % 2 == 0:
        raise StructuralError("conv1d needs an odd kernel size for same padding")
    cols = _im2col(x, k)
    out = (cols @ w.reshape(O, C * k).T).reshape(B, T, O).transpose(0, 2, 1) + b[:, None]
    return np.ascontiguousarray(out), cols


def conv1d_backward(g: np.ndarray, x_shape: tuple, w: np.ndarray, cols: np.ndarray):
    """Gradients (dx, dw, db) of ``conv1d_forward`` given upstream ``g`` (B, C_out, T)."""
    B, C, T = x_shape
    O, _, k = w.shape
    pad = (k - 1) // 2
    g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * T, O)
    dw = (g2.T @ cols).reshape(O, C, k)
    db = g.sum(axis=(0, 2))
    dcols = (g2 @ w.reshape(O, C * k)).reshape(B, T, C, k)
    dxp = np.zeros((B, C, T + 2 * pad), dtype=g.dtype)
    for j in range(k):
        dxp[:, :, j:j + T] += dcols[:, :, :, j].transpose(0, 2, 1)
    return dxp[:, :, pad:pad + T], dw, db


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    out, cols = conv1d_forward(x.data, w.data, b.data)

    def backward(g):
        dx, dw, db = conv1d_backward(g, x.shape, w.data, cols)
        if x.requires_grad:
            x._accumulate(dx)
        if w.requires_grad:
            w._accumulate(dw)
        if b.requires_grad:
            b._accumulate(db)

    return _result(out, (x, w, b), backward)
