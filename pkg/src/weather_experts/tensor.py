"""Dense float64 tensors with a reverse-mode gradient tape.

Only the closed set of operations needed by the restoration model is
provided: 1x1/3x3 convolution, instance normalisation, relu, elementwise
arithmetic between equal shapes (or against a scalar), and reductions.
"""

from __future__ import annotations

import hashlib
import math
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "add",
    "sub",
    "mul",
    "div",
    "relu",
    "absolute",
    "sqrt",
    "square",
    "tsum",
    "mean",
    "abs_sum",
    "reshape",
    "stack",
    "conv2d",
    "instance_norm",
    "Adam",
    "cosine_lr",
    "dlt_bytes",
    "from_dlt_bytes",
    "save_dlt",
    "load_dlt",
    "digest",
]


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


def _finite(arr: np.ndarray, where: str) -> np.ndarray:
    # a NaN or Inf anywhere propagates into the sum
    # (the full scan only runs when the sum is not finite, e.g. on overflow)
    if not np.isfinite(arr.sum()) and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {where}")
    return arr


class Tensor:
    """n-dimensional float64 array that can take part in the gradient tape.

    ``grad`` stays ``None`` until a backward pass reaches the tensor; it always
    has the same shape as ``data`` once populated.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        arr = np.array(data, dtype=np.float64)
        self.data = _finite(arr, op or "tensor construction")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self.op = op

    @classmethod
    def _wrap(cls, arr: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        # arr is owned by the new node, no copy
        out = cls.__new__(cls)
        out.data = _finite(np.asarray(arr, dtype=np.float64), op)
        out.grad = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def copy(self) -> "Tensor":
        return Tensor(self.data, requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- tape -------------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64).reshape(self.shape)
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate gradients from this tensor to every leaf that requires them.

        Intermediate nodes are released afterwards, so each forward pass owns
        its own tape.
        """
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        interior = {id(n) for n in order if n._backward is not None}
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            _finite(g, f"backward of {node.op or 'leaf'}")
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in interior:
                    grads[key] = grads[key] + pg if key in grads else pg
                else:
                    parent._accumulate(pg)
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def relu(self):
        return relu(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _raise_item(shape):
    raise ValueError(f"item() needs a single element, got shape {shape}")


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(float(x))
    raise TypeError(f"expected Tensor or scalar, got {type(x).__name__}")


def _check_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if t.data.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b, "add")

    def back(g):
        return ((a, _reduce_to(g, a)), (b, _reduce_to(g, b)))

    return Tensor._wrap(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b, "sub")

    def back(g):
        return ((a, _reduce_to(g, a)), (b, _reduce_to(-g, b)))

    return Tensor._wrap(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b, "mul")

    def back(g):
        return ((a, _reduce_to(g * b.data, a)), (b, _reduce_to(g * a.data, b)))

    return Tensor._wrap(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b, "div")
    out = a.data / b.data

    def back(g):
        return ((a, _reduce_to(g / b.data, a)), (b, _reduce_to(-g * out / b.data, b)))

    return Tensor._wrap(out, (a, b), back, "div")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        return ((a, g * mask),)

    return Tensor._wrap(np.where(mask, a.data, 0.0), (a,), back, "relu")


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def back(g):
        return ((a, g * sign),)

    return Tensor._wrap(np.abs(a.data), (a,), back, "abs")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def back(g):
        return ((a, g * 0.5 / out),)

    return Tensor._wrap(out, (a,), back, "sqrt")


def square(a: Tensor) -> Tensor:
    def back(g):
        return ((a, 2.0 * a.data * g),)

    return Tensor._wrap(a.data * a.data, (a,), back, "square")


# -- reductions and shape -----------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)

    def back(g):
        return ((a, np.broadcast_to(np.expand_dims(g, axes), a.shape).copy()),)

    return Tensor._wrap(a.data.sum(axis=axes), (a,), back, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, a.data.ndim)
    n = math.prod(a.shape[ax] for ax in axes)

    def back(g):
        return ((a, np.broadcast_to(np.expand_dims(g, axes) / n, a.shape).copy()),)

    return Tensor._wrap(a.data.mean(axis=axes), (a,), back, "mean")


def abs_sum(a: Tensor) -> Tensor:
    """Scalar sum of absolute values."""
    sign = np.sign(a.data)

    def back(g):
        return ((a, g * sign),)

    return Tensor._wrap(np.abs(a.data).sum(), (a,), back, "abs_sum")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def back(g):
        return ((a, g.reshape(a.shape)),)

    return Tensor._wrap(a.data.reshape(shape), (a,), back, "reshape")


def stack(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("stack of an empty sequence")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ValueError(f"stack: shape mismatch {t.shape} vs {shape}")

    def back(g):
        return tuple((t, g[i]) for i, t in enumerate(tensors))

    return Tensor._wrap(np.stack([t.data for t in tensors]), tensors, back, "stack")


# -- convolution and normalisation -------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding: str = "same") -> Tensor:
    """Stride-1 cross-correlation of an NCHW input with an OIkk kernel, k in {1, 3}."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input and OIkk kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, i, k, k2 = w.shape
    if k != k2 or k not in (1, 3):
        raise ValueError(f"conv2d supports 1x1 and 3x3 kernels, got {k}x{k2}")
    if c != i:
        raise ValueError(f"conv2d: input has {c} channels but kernel expects {i}")
    if b is not None and b.shape != (o,):
        raise ValueError(f"conv2d: bias shape {b.shape} != ({o},)")
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")
    pad = k // 2 if padding == "same" else 0
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: {h}x{wd} input too small for a valid {k}x{k} kernel")

    xd, wdat = x.data, w.data
    if k == 1:
        wm = wdat[:, :, 0, 0]
        out = np.matmul(wm, xd.reshape(n, c, h * wd)).reshape(n, o, h, wd)
    else:
        if pad:
            xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
            xp[:, :, pad:pad + h, pad:pad + wd] = xd
        else:
            xp = xd
        # im2col rows ordered (n, y, x), columns (i, p, q) to match the kernel layout
        win = np.empty((n, ho, wo, c, k, k))
        for p in range(k):
            for q in range(k):
                win[..., p, q] = xp[:, :, p:p + ho, q:q + wo].transpose(0, 2, 3, 1)
        cols = win.reshape(n * ho * wo, c * k * k)
        wm = wdat.reshape(o, c * k * k)
        out = (cols @ wm.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        grads = []
        if k == 1:
            g3 = g.reshape(n, o, h * wd)
            if w.requires_grad:
                gw = np.einsum("nop,nip->oi", g3, xd.reshape(n, c, h * wd))[:, :, None, None]
                grads.append((w, gw))
            if x.requires_grad:
                grads.append((x, np.matmul(wm.T, g3).reshape(n, c, h, wd)))
        else:
            g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
            if w.requires_grad:
                grads.append((w, (g2.T @ cols).reshape(o, c, k, k)))
            if x.requires_grad:
                gcols = (g2 @ wm).reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
                gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
                for p in range(k):
                    for q in range(k):
                        gxp[:, :, p:p + ho, q:q + wo] += gcols[:, :, p, q]
                gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
                grads.append((x, gx))
        if b is not None and b.requires_grad:
            grads.append((b, g.sum(axis=(0, 2, 3))))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._wrap(out, parents, back, "conv2d")


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each (sample, channel) plane with population statistics."""
    if x.data.ndim != 4:
        raise ValueError(f"instance_norm expects NCHW, got {x.shape}")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gxm = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return ((x, inv * (g - gm - xhat * gxm)),)

    return Tensor._wrap(xhat, (x,), back, "instance_norm")


# -- optimiser ------------------------------------------------------------------

def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine-decayed learning rate, held at zero once ``step >= total_steps``."""
    s = min(max(step, 0), total_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * s / total_steps))


class Adam:
    """Adam with a cosine learning-rate schedule over ``total_steps``."""

    def __init__(self, params: Iterable[Tensor], lr: float = 2e-4, total_steps: int = 1000,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        if lr <= 0:
            raise ValueError("lr must be positive")
        if total_steps <= 0:
            raise ValueError("total_steps must be positive")
        for p in self.params:
            if not p.requires_grad:
                raise ValueError("Adam was given a parameter that does not require grad")
        self.lr = lr
        self.total_steps = total_steps
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    @property
    def current_lr(self) -> float:
        return cosine_lr(self.lr, self.step_count, self.total_steps)

    def step(self) -> None:
        for idx, p in enumerate(self.params):
            if p.grad is None:
                raise RuntimeError(f"parameter {idx} {p.shape} has no gradient")
        lr = self.current_lr
        t = self.step_count + 1
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if lr > 0.0:
                p.data = _finite(p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps), "adam step")
        self.step_count += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -- raw tensor files -----------------------------------------------------------

_DLT_MAGIC = b"DLT1"


def dlt_bytes(arr) -> bytes:
    """Encode an array as DLT1: magic, u32 rank, u32 extents, float64 LE data."""
    if isinstance(arr, Tensor):
        arr = arr.data
    arr = np.asarray(arr, dtype=np.float64)
    head = _DLT_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f8").tobytes()


def from_dlt_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 8 or buf[:4] != _DLT_MAGIC:
        raise ValueError("not a DLT1 tensor blob")
    (rank,) = struct.unpack_from("<I", buf, 4)
    off = 8 + 4 * rank
    if len(buf) < off:
        raise ValueError("truncated DLT1 header")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    count = math.prod(shape)
    if len(buf) != off + 8 * count:
        raise ValueError(f"DLT1 payload has {len(buf) - off} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)


def save_dlt(path, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(dlt_bytes(arr))


def load_dlt(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return from_dlt_bytes(fh.read())


def digest(tensors: Iterable) -> str:
    """SHA-256 over the DLT encoding of each tensor, in order."""
    h = hashlib.sha256()
    for t in tensors:
        h.update(dlt_bytes(t))
    return h.hexdigest()
