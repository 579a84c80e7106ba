"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Just enough machinery to train, perturb and double-differentiate the small
channel-structured models in this repo: numpy arrays as storage, a dynamic
tape of ``TapeNode`` records, and a fixed set of differentiable primitives
(listed in ``OPS``). float64 is the default precision so finite-difference
tolerances are meaningful; float32 can be selected with
``set_default_dtype``.

Tensors are treated as immutable once they enter a tape, except for gradient
accumulation; parameter updates mutate leaf ``.data`` buffers between tapes.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    global DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    DEFAULT_DTYPE = dt.type


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Suppress tape construction inside the block (pure evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@dataclass
class TapeNode:
    op: str
    parents: tuple
    backward: Callable[[np.ndarray], None]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        if dtype is None and isinstance(data, np.ndarray) and data.dtype in (
            np.dtype(np.float32),
            np.dtype(np.float64),
        ):
            arr = np.ascontiguousarray(data)
        else:
            arr = np.ascontiguousarray(np.asarray(data, dtype=dtype or DEFAULT_DTYPE))
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: TapeNode | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # method aliases -------------------------------------------------------
    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return absolute(self)

    def sqrt(self):
        return sqrt(self)

    def norm(self):
        return l2_norm(self)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], bw) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(op, tuple(parents), bw)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from exc

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, "mul", (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        _accumulate(a, -g)

    return _make(-a.data, "neg", (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul requires 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(data, "matmul", (a, b), bw)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose requires a 2-D operand")

    def bw(g):
        _accumulate(a, np.ascontiguousarray(g.T))

    return _make(np.ascontiguousarray(a.data.T), "transpose", (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc

    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(np.ascontiguousarray(data), "reshape", (a,), bw)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def bw(g):
        _accumulate(a, g * mask)

    return _make(np.where(mask, a.data, 0.0).astype(a.dtype), "relu", (a,), bw)


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    s = np.sign(a.data)

    def bw(g):
        _accumulate(a, g * s)

    return _make(np.abs(a.data), "abs", (a,), bw)


def sign(a) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        _accumulate(a, np.zeros_like(a.data))

    return _make(np.sign(a.data), "sign", (a,), bw)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    root = np.sqrt(a.data)

    def bw(g):
        _accumulate(a, g * (0.5 / root))

    return _make(root, "sqrt", (a,), bw)


def tsum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).astype(a.dtype))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).astype(a.dtype))

    return _make(np.asarray(data), "sum", (a,), bw)


def tmean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    data = a.data.mean(axis=axis)
    if axis is None:
        denom = a.data.size
    else:
        denom = a.shape[axis]

    def bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g / denom, a.shape).astype(a.dtype))
        else:
            _accumulate(
                a, np.broadcast_to(np.expand_dims(g / denom, axis), a.shape).astype(a.dtype)
            )

    return _make(np.asarray(data), "mean", (a,), bw)


def l2_norm(a) -> Tensor:
    """Euclidean norm of all entries, as a differentiable scalar."""
    a = _as_tensor(a)
    return sqrt(tsum(mul(a, a)))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy between row-softmax(logits) and integer labels."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError("softmax_cross_entropy expects (batch, classes) logits")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError("labels must be a 1-D batch of class indices")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    expz = np.exp(shifted)
    sumexp = expz.sum(axis=1, keepdims=True)
    logp = shifted - np.log(sumexp)
    n = z.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    softmax = expz / sumexp

    def bw(g):
        grad = softmax.copy()
        grad[np.arange(n), labels] -= 1.0
        _accumulate(logits, grad * (g / n))

    return _make(np.asarray(loss, dtype=z.dtype), "softmax_cross_entropy", (logits,), bw)


def conv2d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 2-D convolution (NCHW) with per-output-channel bias."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError("conv2d: bias must be (out_channels,)")
    oh, ow = kernels.conv2d_output_hw(
        x.shape[2], x.shape[3], w.shape[2], w.shape[3], stride, padding
    )
    if oh <= 0 or ow <= 0:
        raise ShapeError("conv2d: kernel larger than padded input")
    data = kernels.conv2d_forward(x.data, w.data, b.data, stride, padding)

    def bw(g):
        gx, gw, gb = kernels.conv2d_backward(x.data, w.data, np.ascontiguousarray(g), stride, padding)
        _accumulate(x, gx)
        _accumulate(w, gw)
        _accumulate(b, gb)

    return _make(data, "conv2d", (x, w, b), bw)


def maxpool2d(x, kernel: int = 2, stride: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("maxpool2d expects a 4-D input")
    stride = kernel if stride is None else stride
    h, w = x.shape[2], x.shape[3]
    if kernel > h or kernel > w:
        raise ShapeError("maxpool2d: window larger than input")
    data, arg = kernels.maxpool2d_forward(x.data, kernel, stride)

    def bw(g):
        _accumulate(x, kernels.maxpool2d_backward(np.ascontiguousarray(g), arg, h, w))

    return _make(data, "maxpool2d", (x,), bw)


# Registered differentiable primitives; the gradient-check suite iterates
# this table so every entry stays finite-difference verified.
OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "neg": neg,
    "matmul": matmul,
    "transpose": transpose,
    "reshape": reshape,
    "relu": relu,
    "abs": absolute,
    "sign": sign,
    "sqrt": sqrt,
    "sum": tsum,
    "mean": tmean,
    "l2_norm": l2_norm,
    "softmax_cross_entropy": softmax_cross_entropy,
    "conv2d": conv2d,
    "maxpool2d": maxpool2d,
}


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every reachable requires-grad tensor with dLoss/d(tensor)."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    for t in order:
        if t.requires_grad and t.grad is None:
            t.grad = np.zeros_like(t.data)
    loss.grad = loss.grad + np.ones_like(loss.data) if loss.grad is not None else np.ones_like(loss.data)
    for t in reversed(order):
        if t.node is not None:
            t.node.backward(t.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Hessian-vector product
# ---------------------------------------------------------------------------


def _collect_grads(loss_fn, params: Sequence[Tensor]) -> list[np.ndarray]:
    zero_grads(params)
    loss = loss_fn()
    backward(loss)
    out = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    zero_grads(params)
    return out


def hessian_vector_product(loss_fn, params: Sequence[Tensor], v: Sequence[np.ndarray]):
    """Hv for the Hessian of ``loss_fn()`` w.r.t. ``params``, for direction ``v``.

    Uses a central difference of gradients, (g(w+hv) - g(w-hv)) / 2h with
    h = 1e-3 * (1 + ||w|| / ||v||); exact on quadratics up to rounding. The
    returned metadata records the mode and step used.
    """
    if len(v) != len(params):
        raise ShapeError("direction collection must match parameter collection")
    for p, vi in zip(params, v):
        if np.shape(vi) != p.shape:
            raise ShapeError(f"direction shape {np.shape(vi)} != parameter shape {p.shape}")
    vnorm = float(np.sqrt(sum(float(np.sum(np.square(vi))) for vi in v)))
    meta = {"mode": "grad_central_difference", "h": 0.0}
    if vnorm == 0.0:
        return [np.zeros_like(p.data) for p in params], meta
    wnorm = float(np.sqrt(sum(float(np.sum(np.square(p.data))) for p in params)))
    h = 1e-3 * (1.0 + wnorm / vnorm)
    meta["h"] = h
    saved = [p.data.copy() for p in params]
    try:
        for p, s, vi in zip(params, saved, v):
            p.data[...] = s + h * np.asarray(vi, dtype=p.dtype)
        g_plus = _collect_grads(loss_fn, params)
        for p, s, vi in zip(params, saved, v):
            p.data[...] = s - h * np.asarray(vi, dtype=p.dtype)
        g_minus = _collect_grads(loss_fn, params)
    finally:
        for p, s in zip(params, saved):
            p.data[...] = s
    hv = [(gp - gm) / (2.0 * h) for gp, gm in zip(g_plus, g_minus)]
    return hv, meta
