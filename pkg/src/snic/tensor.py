"""Dense tensors with reverse-mode automatic differentiation.

Only the primitives the codec, the metrics and the substitute search need
are provided.  Every primitive records a backward closure on the output
tensor; :func:`backward` walks the recorded graph once in reverse creation
order and accumulates gradients into leaf tensors.

Layout is NCHW, row-major.  Arrays keep the dtype they were created with, so
float32 models stay float32 and gradient checks can run in float64.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from typing import Callable, Sequence

import numpy as np

_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_counter)
        self.op = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
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
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        return Tensor(np.asarray(x, dtype=np.float64))
    return Tensor(x, dtype=dtype)


def _lift(a, b) -> tuple[Tensor, Tensor]:
    # python scalars adopt the dtype of the tensor operand
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out.op = op
    return out


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


# -- graph traversal ------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node._id in seen:
            continue
        seen.add(node._id)
        nodes.append(node)
        stack.extend(p for p in node._parents if p.requires_grad)
    # ids grow monotonically with creation, so descending id is reverse execution order
    nodes.sort(key=lambda n: n._id, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for node in _topo_order(loss):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


# -- elementwise arithmetic ----------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a, b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a, b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a constant real exponent."""
    exponent = float(exponent)
    out = a.data ** exponent

    def bw(g):
        if exponent == 2.0:
            return (g * 2.0 * a.data,)
        if exponent < 1.0:
            # d/da a**p is unbounded at 0; treat it as 0 so relu'd zeros stay finite
            with np.errstate(divide="ignore", invalid="ignore"):
                d = np.where(a.data == 0, 0.0, exponent * a.data ** (exponent - 1.0))
            return (g * d.astype(a.dtype),)
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(out, (a,), bw, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def log2(a: Tensor) -> Tensor:
    return _make(np.log2(a.data), (a,), lambda g: (g / (a.data * math.log(2.0)),), "log2")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.data > 0
    factor = np.where(mask, 1.0, slope).astype(a.dtype)
    return _make(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)``; no gradient where the floor is active."""
    mask = a.data >= floor
    out = np.where(mask, a.data, np.asarray(floor, dtype=a.dtype))
    return _make(out, (a,), lambda g: (g * mask,), "maximum")


def hinge(a: Tensor, tau: float) -> Tensor:
    """``max(a, tau)`` with a zero subgradient where ``a < tau``."""
    mask = a.data > tau
    out = np.where(mask, a.data, np.asarray(tau, dtype=a.dtype))
    return _make(out, (a,), lambda g: (g * mask,), "hinge")


# -- reductions and shape ops -------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a: Tensor, index) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), bw, "getitem")


def pad_edge(a: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Replicate-pad the bottom and right edges of an NCHW tensor."""
    if pad_h == 0 and pad_w == 0:
        return a
    h, w = a.shape[2], a.shape[3]
    rows = np.minimum(np.arange(h + pad_h), h - 1)
    cols = np.minimum(np.arange(w + pad_w), w - 1)
    out = a.data[:, :, rows][:, :, :, cols]

    def bw(g):
        gr = np.zeros(g.shape[:3] + (w,), dtype=g.dtype)
        np.add.at(gr, (slice(None), slice(None), slice(None), cols), g)
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, (slice(None), slice(None), rows), gr)
        return (full,)

    return _make(out, (a,), bw, "pad_edge")


def avg_pool2(a: Tensor) -> Tensor:
    """2x2 average pooling, stride 2; odd trailing rows/columns are dropped."""
    n, c, h, w = a.shape
    h2, w2 = h // 2, w // 2
    src = a.data[:, :, : 2 * h2, : 2 * w2]
    out = src.reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))

    def bw(g):
        full = np.zeros_like(a.data)
        up = np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3)
        full[:, :, : 2 * h2, : 2 * w2] = up
        return (full,)

    return _make(out, (a,), bw, "avg_pool2")


# -- convolutions ---------------------------------------------------------

def _conv_pad(padding: str, k: int) -> int:
    if padding == "same":
        if k % 2 != 1:
            raise ValueError(f"'same' padding needs an odd kernel size, got {k}")
        return k // 2
    if padding == "valid":
        return 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, ph: int, pw: int):
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(cols: np.ndarray, shape, kh: int, kw: int, stride: int, ph: int, pw: int,
            ho: int, wo: int) -> np.ndarray:
    n, c, h, w = shape
    canvas = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    blocks = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            canvas[:, :, i:i + hs:stride, j:j + ws:stride] += blocks[:, :, i, j]
    return canvas[:, :, ph:ph + h, pw:pw + w]


def _check_conv(x_shape, k_shape, channel_axis: int, stride: int, name: str) -> None:
    if len(x_shape) != 4:
        raise ValueError(f"{name}: input must be NCHW, got shape {x_shape}")
    if len(k_shape) != 4:
        raise ValueError(f"{name}: kernel must be 4-d, got shape {k_shape}")
    if x_shape[1] != k_shape[channel_axis]:
        raise ValueError(
            f"{name}: input channel dimension is {x_shape[1]} but kernel expects "
            f"{k_shape[channel_axis]} (kernel axis {channel_axis})")
    if int(stride) != stride or stride < 1:
        raise ValueError(f"{name}: stride must be a positive integer, got {stride}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """Cross-correlation of ``x [N,C,H,W]`` with ``kernel [O,C,kh,kw]``.

    ``"same"`` pads ``k // 2`` on every side (odd kernels), giving
    ``ceil(H / stride)`` output rows; ``"valid"`` pads nothing.
    """
    _check_conv(x.shape, kernel.shape, 1, stride, "conv2d")
    o, c, kh, kw = kernel.shape
    ph, pw = _conv_pad(padding, kh), _conv_pad(padding, kw)
    n = x.shape[0]
    cols, ho, wo = _im2col(x.data, kh, kw, stride, ph, pw)
    wmat = kernel.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        if bias.shape != (o,):
            raise ValueError(f"conv2d: bias must have shape ({o},), got {bias.shape}")
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gx = _col2im(g2 @ wmat, x.shape, kh, kw, stride, ph, pw, ho, wo) if x.requires_grad else None
        gk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return _make(out, parents, bw, "conv2d")


def conv2d_transpose(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
                     padding: str = "same") -> Tensor:
    """Adjoint of :func:`conv2d` with ``kernel [C_in, C_out, kh, kw]``.

    The output extents are the ones a forward conv2d with the same stride and
    padding maps back onto ``x``: ``H * stride`` for ``"same"`` and
    ``(H - 1) * stride + kh`` for ``"valid"``.
    """
    _check_conv(x.shape, kernel.shape, 0, stride, "conv2d_transpose")
    ci, co, kh, kw = kernel.shape
    ph, pw = _conv_pad(padding, kh), _conv_pad(padding, kw)
    n, _, h, w = x.shape
    if padding == "same":
        oh, ow = h * stride, w * stride
    else:
        oh, ow = (h - 1) * stride + kh, (w - 1) * stride + kw
    wmat = kernel.data.reshape(ci, -1)
    x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, ci)
    out = _col2im(x2 @ wmat, (n, co, oh, ow), kh, kw, stride, ph, pw, h, w)
    if bias is not None:
        if bias.shape != (co,):
            raise ValueError(f"conv2d_transpose: bias must have shape ({co},), got {bias.shape}")
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        cols, _, _ = _im2col(g, kh, kw, stride, ph, pw)
        gx = (cols @ wmat.T).reshape(n, h, w, ci).transpose(0, 3, 1, 2) if x.requires_grad else None
        gk = (x2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return _make(out, parents, bw, "conv2d_transpose")


# -- generalized divisive normalization ----------------------------------

def gdn(x: Tensor, beta: Tensor, gamma: Tensor, inverse: bool = False) -> Tensor:
    """``x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)``; ``inverse`` multiplies instead."""
    if np.any(beta.data <= 0):
        raise ValueError("gdn: beta must be strictly positive")
    if np.any(gamma.data < 0):
        raise ValueError("gdn: gamma must be non-negative")
    n, c, h, w = x.shape
    if beta.shape != (c,) or gamma.shape != (c, c):
        raise ValueError(f"gdn: expected beta ({c},) and gamma ({c},{c}), "
                         f"got {beta.shape} and {gamma.shape}")
    xf = x.data.reshape(n, c, h * w)
    x2 = xf * xf
    norm = beta.data[None, :, None] + np.matmul(gamma.data, x2)
    p = 0.5 if inverse else -0.5
    scale = np.sqrt(norm) if inverse else 1.0 / np.sqrt(norm)
    out = (xf * scale).reshape(x.shape)

    def bw(g):
        gf = g.reshape(n, c, h * w)
        t = gf * xf * p * scale / norm
        gx = (gf * scale + 2.0 * xf * np.matmul(gamma.data.T, t)).reshape(x.shape)
        gbeta = t.sum(axis=(0, 2)) if beta.requires_grad else None
        ggamma = np.einsum("nip,njp->ij", t, x2) if gamma.requires_grad else None
        return gx, gbeta, ggamma

    return _make(out, (x, beta, gamma), bw, "gdn")


# -- projection -----------------------------------------------------------

def clamp01(x):
    """Project onto ``[0, 1]`` outside the graph."""
    if isinstance(x, Tensor):
        return Tensor(np.clip(x.data, 0.0, 1.0))
    return np.clip(np.asarray(x), 0.0, 1.0)
