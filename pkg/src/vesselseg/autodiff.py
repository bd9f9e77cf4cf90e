"""Dense 5-axis tensors with a recorded computation graph and reverse-mode
differentiation.

The operator set is closed: exactly the primitives the UNet and its losses
need, with same-shape or tensor-scalar arithmetic only (no general
broadcasting).  Operations record onto the innermost active :class:`Tape`;
with no active tape they are plain numpy computations, which is how
inference runs without holding activations.

Threading: one tape is owned by one thread (the active-tape stack is
thread-local).  Primitives may parallelize internally; see _kernels.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import expit

from . import _kernels as kernels
from .errors import ShapeError

__all__ = [
    "Tensor", "Tape", "scalar", "add", "sub", "mul", "div", "add_scalar",
    "mul_scalar", "log", "clip", "relu", "leaky_relu", "sigmoid", "sum_all",
    "mean_all", "concat_channels", "maxpool3", "minpool3", "conv3d",
    "conv3d_transpose", "instance_norm",
]


class Tensor:
    """A dense (N, C, D, H, W) array, optionally tracked for gradients.

    grad is populated by Tape.backward for every leaf that requires it;
    construction with requires_grad=True pre-allocates a zero grad buffer.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        data = np.asarray(data)
        if data.ndim != 5:
            raise ShapeError(f"tensors are 5-axis (N,C,D,H,W), got {data.ndim} axes")
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(data) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def scalar(value, dtype=np.float64):
    """A (1,1,1,1,1) constant tensor."""
    return Tensor(np.full((1, 1, 1, 1, 1), value, dtype=dtype))


class _Node:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


_active = threading.local()


def _tape_stack():
    stack = getattr(_active, "stack", None)
    if stack is None:
        stack = []
        _active.stack = stack
    return stack


class Tape:
    """Ordered record of executed primitives; backward walks it in exact
    reverse execution order (a valid reverse-topological order)."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def backward(self, loss):
        """Populate .grad of every requires_grad leaf reachable from loss;
        unreachable leaves that participated on this tape get zero grads."""
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ShapeError("backward requires a scalar loss tensor")
        produced = {id(n.output) for n in self.nodes}
        grads = {id(loss): np.ones_like(loss.data)}
        owned = set()
        for node in reversed(self.nodes):
            gy = grads.pop(id(node.output), None)
            owned.discard(id(node.output))
            if gy is None:
                continue
            input_grads = node.backward(gy)
            for t, g in zip(node.inputs, input_grads):
                if g is None or not t.requires_grad:
                    continue
                tid = id(t)
                if tid in grads:
                    if tid in owned:
                        grads[tid] += g
                    else:
                        grads[tid] = grads[tid] + g
                        owned.add(tid)
                else:
                    grads[tid] = g
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and id(t) not in produced:
                    g = grads.get(id(t))
                    t.grad = g.copy() if g is not None else np.zeros_like(t.data)


def _record(inputs, out_data, backward):
    """Create the output tensor; record the op if a tape is active and any
    input is tracked."""
    stack = _tape_stack()
    if stack and any(t.requires_grad for t in inputs):
        out = Tensor(out_data)
        out.requires_grad = True
        stack[-1].nodes.append(_Node(tuple(inputs), out, backward))
        return out
    return Tensor(out_data)


def _check_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    _check_same_shape(a, b, "add")
    return _record([a, b], a.data + b.data, lambda gy: (gy, gy.copy()))


def sub(a, b):
    _check_same_shape(a, b, "sub")
    return _record([a, b], a.data - b.data, lambda gy: (gy, -gy))


def mul(a, b):
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record([a, b], ad * bd, lambda gy: (gy * bd, gy * ad))


def div(a, b):
    _check_same_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _record([a, b], out,
                   lambda gy: (gy / bd, -gy * ad / (bd * bd)))


def add_scalar(a, c):
    c = float(c)
    return _record([a], a.data + c, lambda gy: (gy,))


def mul_scalar(a, c):
    c = float(c)
    return _record([a], a.data * c, lambda gy: (gy * c,))


def log(a):
    ad = a.data
    return _record([a], np.log(ad), lambda gy: (gy / ad,))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes through inside the bounds
    (inclusive) and is zero outside."""
    ad = a.data
    mask = (ad >= lo) & (ad <= hi)
    return _record([a], np.clip(ad, lo, hi), lambda gy: (gy * mask,))


def relu(a):
    mask = a.data >= 0
    return _record([a], np.where(mask, a.data, 0), lambda gy: (gy * mask,))


def leaky_relu(a, slope=0.01):
    """y = x for x >= 0 else slope*x; x == 0 takes the positive branch."""
    mask = a.data >= 0
    out = np.where(mask, a.data, slope * a.data)
    return _record([a], out,
                   lambda gy: (gy * np.where(mask, 1.0, slope).astype(gy.dtype),))


def sigmoid(a):
    out = expit(a.data)
    return _record([a], out, lambda gy: (gy * out * (1.0 - out),))


def sum_all(a):
    out = np.full((1, 1, 1, 1, 1), a.data.sum(dtype=np.float64), dtype=a.dtype)
    shape = a.shape

    def bwd(gy):
        return (np.full(shape, gy.reshape(-1)[0], dtype=gy.dtype),)

    return _record([a], out, bwd)


def mean_all(a):
    n = a.data.size
    out = np.full((1, 1, 1, 1, 1), a.data.sum(dtype=np.float64) / n, dtype=a.dtype)
    shape = a.shape

    def bwd(gy):
        return (np.full(shape, gy.reshape(-1)[0] / n, dtype=gy.dtype),)

    return _record([a], out, bwd)


# ---------------------------------------------------------------- structural

def concat_channels(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(
            f"concat_channels: non-channel axes differ, {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def bwd(gy):
        return (gy[:, :ca].copy(), gy[:, ca:].copy())

    return _record([a, b], out, bwd)


def maxpool3(a):
    """3x3x3 max pool, stride 1, pad 1; gradient routes to the selected
    element, ties broken by lowest linear index."""
    out, code = kernels.maxpool3_fwd(a.data)
    return _record([a], out, lambda gy: (kernels.maxpool3_bwd(code, gy),))


def minpool3(a):
    """minpool3(x) == -maxpool3(-x); the selected minimum gets gradient 1."""
    neg, code = kernels.maxpool3_fwd(-a.data)
    return _record([a], -neg, lambda gy: (kernels.maxpool3_bwd(code, gy),))


# ------------------------------------------------------------- convolutional

def conv3d(x, w, b, stride=1):
    """Cross-correlation with odd kernel and 'same' padding (k-1)/2.

    x: (N,Cin,D,H,W); w: (Cout,Cin,k,k,k); b: (1,Cout,1,1,1).
    """
    cout, cin, k = w.shape[:3]
    if k % 2 != 1 or w.shape[3] != k or w.shape[4] != k:
        raise ShapeError(f"conv3d: kernel must be cubic odd, got {w.shape[2:]}")
    if x.shape[1] != cin:
        raise ShapeError(
            f"conv3d: input channel axis {x.shape[1]} != weight Cin {cin}")
    if b.shape != (1, cout, 1, 1, 1):
        raise ShapeError(f"conv3d: bias shape {b.shape} != (1,{cout},1,1,1)")
    xd, wd = x.data, w.data
    out = kernels.conv3d_fwd(xd, wd, b.data.reshape(cout), stride)

    def bwd(gy):
        gx, gw, gb = kernels.conv3d_bwd(xd, wd, gy, stride)
        return gx, gw, gb.reshape(1, cout, 1, 1, 1)

    return _record([x, w, b], out, bwd)


def conv3d_transpose(x, w, stride=2):
    """Transposed convolution with k == stride (non-overlapping blocks):
    each input voxel expands into a k^3 output block.

    x: (N,Cin,D,H,W); w: (Cin,Cout,k,k,k); output (N,Cout,D*k,H*k,W*k).
    Adjoint of conv3d with shared weights.
    """
    cin, cout, k = w.shape[:3]
    if k != stride:
        raise ShapeError(f"conv3d_transpose: kernel {k} must equal stride {stride}")
    if x.shape[1] != cin:
        raise ShapeError(
            f"conv3d_transpose: input channel axis {x.shape[1]} != weight Cin {cin}")
    xd, wd = x.data, w.data
    n, _, d, h, wdim = xd.shape
    blocks = np.tensordot(xd, wd, axes=([1], [0]))  # (N,D,H,W,Cout,k,k,k)
    out = np.ascontiguousarray(
        blocks.transpose(0, 4, 1, 5, 2, 6, 3, 7)
    ).reshape(n, cout, d * k, h * k, wdim * k)

    def bwd(gy):
        gb = gy.reshape(n, cout, d, k, h, k, wdim, k)
        gb = np.ascontiguousarray(gb.transpose(0, 2, 4, 6, 1, 3, 5, 7))
        gx = np.tensordot(gb, wd, axes=([4, 5, 6, 7], [1, 2, 3, 4]))
        gx = np.ascontiguousarray(gx.transpose(0, 4, 1, 2, 3))
        gw = np.tensordot(xd, gb, axes=([0, 2, 3, 4], [0, 1, 2, 3]))
        return gx, gw

    return _record([x, w], out, bwd)


def instance_norm(x, gamma, beta, eps=1e-5):
    """Standardize each (n, c) spatial slice to mean 0 / population variance
    1 (+eps inside the square root), then scale and shift per channel.

    gamma, beta: (1,C,1,1,1).
    """
    c = x.shape[1]
    if gamma.shape != (1, c, 1, 1, 1) or beta.shape != (1, c, 1, 1, 1):
        raise ShapeError(
            f"instance_norm: gamma/beta must be (1,{c},1,1,1), got "
            f"{gamma.shape} and {beta.shape}")
    if int(np.prod(x.shape[2:])) < 2:
        raise ShapeError("instance_norm: spatial size must be >= 2 per slice")
    xd = x.data
    axes = (2, 3, 4)
    mu = xd.mean(axis=axes, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=axes, keepdims=True)
    std = np.sqrt(var + eps)
    xhat = (xd - mu) / std
    out = gamma.data * xhat + beta.data
    gd = gamma.data

    def bwd(gy):
        dgamma = (gy * xhat).sum(axis=(0, 2, 3, 4), keepdims=True)
        dbeta = gy.sum(axis=(0, 2, 3, 4), keepdims=True)
        dxhat = gy * gd
        mean_dxhat = dxhat.mean(axis=axes, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes, keepdims=True)
        dx = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) / std
        return dx.astype(gy.dtype, copy=False), dgamma, dbeta

    return _record([x, gamma, beta], out, bwd)
