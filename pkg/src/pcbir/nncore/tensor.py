"""Reverse-mode differentiation on top of numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to one gradient per parent. Calling
:meth:`Tensor.backward` on a scalar walks that graph in reverse
topological order and accumulates into ``.grad`` of every leaf that
requires it.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

_state = threading.local()


class GraphError(RuntimeError):
    """Raised when backward is requested without a recorded graph."""


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextmanager
def record_branches():
    """Collect the branch masks taken by non-smooth ops (relu, abs, clip, max, ...).

    Two evaluations with equal masks lie on the same smooth piece, which is
    what a finite-difference check needs to know.
    """
    prev = getattr(_state, "branches", None)
    _state.branches = []
    try:
        yield _state.branches
    finally:
        _state.branches = prev


def _branch(mask: np.ndarray) -> np.ndarray:
    log = getattr(_state, "branches", None)
    if log is not None:
        log.append(np.packbits(np.asarray(mask, dtype=bool)).tobytes())
    return mask


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An n-dimensional float array that can take part in differentiation."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._needs: tuple[bool, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data, parents: tuple[Tensor, ...], backward) -> Tensor:
        out = Tensor(data)
        needs = tuple(p.requires_grad for p in parents)
        if grad_enabled() and any(needs):
            out.requires_grad = True
            out._parents = parents
            # frozen-ness is decided at record time, not at backward time
            out._needs = needs
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __len__(self) -> int:
        return len(self.data)

    # -- backward -----------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if not self.requires_grad:
            raise GraphError("backward() called on a tensor with no recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward() needs an explicit gradient for shape {self.shape}")
            grad = np.ones_like(self.data)

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
            for p, need in zip(node._parents, node._needs):
                if need and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, need, pg in zip(node._parents, node._needs, node._backward(g)):
                if pg is None or not need:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- elementwise arithmetic -------------------------------------------------

    def __add__(self, other) -> Tensor:
        other = _wrap(other, self)
        a, b = self.shape, other.shape
        return Tensor._make(self.data + other.data, (self, other),
                            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)))

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> Tensor:
        other = _wrap(other, self)
        a, b = self.shape, other.shape
        return Tensor._make(self.data - other.data, (self, other),
                            lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)))

    def __rsub__(self, other) -> Tensor:
        return _wrap(other, self) - self

    def __mul__(self, other) -> Tensor:
        other = _wrap(other, self)
        x, y = self.data, other.data
        return Tensor._make(x * y, (self, other),
                            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        other = _wrap(other, self)
        x, y = self.data, other.data
        return Tensor._make(x / y, (self, other),
                            lambda g: (_unbroadcast(g / y, x.shape),
                                       _unbroadcast(-g * x / (y * y), y.shape)))

    def __rtruediv__(self, other) -> Tensor:
        return _wrap(other, self) / self

    def __pow__(self, exponent: float) -> Tensor:
        x = self.data
        return Tensor._make(x ** exponent, (self,),
                            lambda g: (g * exponent * x ** (exponent - 1),))

    def __matmul__(self, other) -> Tensor:
        other = _wrap(other, self)
        x, y = self.data, other.data
        return Tensor._make(x @ y, (self, other),
                            lambda g: (_unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape),
                                       _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape)))

    def __getitem__(self, index) -> Tensor:
        shape, dtype = self.shape, self.dtype

        def backward(g):
            full = np.zeros(shape, dtype=dtype)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._make(self.data[index], (self,), backward)

    # -- reductions and reshaping ----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),))

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    # -- unary functions ----------------------------------------------------------

    def exp(self) -> Tensor:
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self) -> Tensor:
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,))

    def abs(self) -> Tensor:
        x = self.data
        _branch(x > 0)
        return Tensor._make(np.abs(x), (self,), lambda g: (g * np.sign(x),))

    def relu(self) -> Tensor:
        mask = _branch(self.data > 0)
        return Tensor._make(self.data * mask, (self,), lambda g: (g * mask,))

    def leaky_relu(self, slope: float = 0.2) -> Tensor:
        x = self.data
        factor = np.where(_branch(x > 0), 1.0, slope).astype(x.dtype)
        return Tensor._make(x * factor, (self,), lambda g: (g * factor,))

    def tanh(self) -> Tensor:
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> Tensor:
        x = self.data
        # split by sign so neither branch overflows
        ex = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex)).astype(x.dtype)
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),))

    def softplus(self) -> Tensor:
        x = self.data
        out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
        ex = np.exp(-np.abs(x))
        sig = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex)).astype(x.dtype)
        return Tensor._make(out.astype(x.dtype), (self,), lambda g: (g * sig,))

    def clip(self, lo: float | None, hi: float | None) -> Tensor:
        """Clamp values; the gradient is zero where clamping was active."""
        x = self.data
        out = np.clip(x, lo, hi)
        mask = _branch(out == x)
        return Tensor._make(out, (self,), lambda g: (g * mask,))


def _wrap(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    # constants adopt the partner's dtype so float32 graphs stay float32
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(value, dtype=dtype))


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.asarray(data, dtype=DEFAULT_DTYPE), requires_grad=requires_grad)


def maximum(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    pick_a = _branch(a.data >= b.data)
    return Tensor._make(np.where(pick_a, a.data, b.data), (a, b),
                        lambda g: (_unbroadcast(g * pick_a, a.shape),
                                   _unbroadcast(g * ~pick_a, b.shape)))


def minimum(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    pick_a = _branch(a.data <= b.data)
    return Tensor._make(np.where(pick_a, a.data, b.data), (a, b),
                        lambda g: (_unbroadcast(g * pick_a, a.shape),
                                   _unbroadcast(g * ~pick_a, b.shape)))


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._make(out, tuple(tensors), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return Tensor._make(out, tuple(tensors), backward)


# -- convolutions --------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int,
                               output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x`` is (N, C, H, W); ``weight`` is (O, C, k, k)."""
    n, c, h, w = x.shape
    o, c_w, k, _ = weight.shape
    if c != c_w:
        raise ValueError(f"conv2d expects {c_w} input channels, got {c}")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be {ho}x{wo} for input {h}x{w}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    wd = weight.data
    out = np.tensordot(windows, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        g_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, wd, axes=([1], [0]))  # (N, Ho, Wo, C, k, k)
        g_xp = np.zeros_like(xp)
        span_h = stride * (ho - 1) + 1
        span_w = stride * (wo - 1) + 1
        for i in range(k):
            for j in range(k):
                g_xp[:, :, i:i + span_h:stride, j:j + span_w:stride] += cols[..., i, j].transpose(0, 3, 1, 2)
        g_x = g_xp[:, :, padding:padding + h, padding:padding + w]
        grads = [g_x, g_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution. ``weight`` is (C_in, C_out, k, k)."""
    n, c, h, w = x.shape
    c_w, o, k, _ = weight.shape
    if c != c_w:
        raise ValueError(f"conv_transpose2d expects {c_w} input channels, got {c}")
    ho = conv_transpose_output_size(h, k, stride, padding, output_padding)
    wo = conv_transpose_output_size(w, k, stride, padding, output_padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv_transpose2d output would be {ho}x{wo}")

    full_h = (h - 1) * stride + k + output_padding
    full_w = (w - 1) * stride + k + output_padding
    wd = weight.data
    cols = np.tensordot(x.data, wd, axes=([1], [0]))  # (N, H, W, O, k, k)
    full = np.zeros((n, o, full_h, full_w), dtype=np.result_type(x.data, wd))
    span_h = stride * (h - 1) + 1
    span_w = stride * (w - 1) + 1
    for i in range(k):
        for j in range(k):
            full[:, :, i:i + span_h:stride, j:j + span_w:stride] += cols[..., i, j].transpose(0, 3, 1, 2)
    out = full[:, :, padding:padding + ho, padding:padding + wo]
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        g_full = np.zeros_like(full)
        g_full[:, :, padding:padding + ho, padding:padding + wo] = g
        windows = sliding_window_view(g_full, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h, :w]
        g_x = np.tensordot(windows, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        g_w = np.tensordot(x.data, windows, axes=([0, 2, 3], [0, 2, 3]))
        grads = [g_x, g_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward)
