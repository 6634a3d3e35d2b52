"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine covers exactly the operations the decoder backbone and the policy
heads need: batched matmul, elementwise arithmetic, tanh/GELU, softmax,
layer norm (composed), embedding lookup, slicing, stacking and reductions.
No broadcasting beyond what those call sites use, no GPU, no mixed precision.

A "tape" is implicit: every non-leaf Tensor keeps references to its parents
and a closure that scatters the upstream gradient back to them. backward()
runs a topological sort from the loss and visits each node exactly once.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

_GELU_C = math.sqrt(2.0 / math.pi)

_node_counter = itertools.count()


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    """A float64 ndarray plus optional gradient bookkeeping.

    Leaves created with requires_grad=True accumulate gradients in .grad
    after backward(). Tensors that are pure values (requires_grad=False and
    no parents) are immutable as far as the engine is concerned and safe to
    share across threads.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple["Tensor", ...] = (),
                 _backward: Callable[[np.ndarray], None] | None = None):
        self.data = _as_array(data)
        if __debug__ and not np.all(np.isfinite(self.data)):
            raise ContractError("tensor contains non-finite values")
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_counter)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # -- basic protocol -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _make(self, data: np.ndarray, parents: tuple["Tensor", ...],
              backward: Callable[[np.ndarray], None]) -> "Tensor":
        return Tensor(data, _parents=parents, _backward=backward)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data + other.data

        def bw(g: np.ndarray) -> None:
            if self.requires_grad:
                _accum(self, _unbroadcast(g, self.shape))
            if other.requires_grad:
                _accum(other, _unbroadcast(g, other.shape))

        return self._make(out_data, (self, other), bw)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def bw(g: np.ndarray) -> None:
            _accum(self, -g)

        return self._make(-self.data, (self,), bw)

    def __sub__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other) -> "Tensor":
        return Tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        out_data = self.data * other.data

        def bw(g: np.ndarray) -> None:
            if self.requires_grad:
                _accum(self, _unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                _accum(other, _unbroadcast(g * self.data, other.shape))

        return self._make(out_data, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self * other ** -1.0

    def __rtruediv__(self, other) -> "Tensor":
        return Tensor(other) * self ** -1.0

    def __pow__(self, p: float) -> "Tensor":
        p = float(p)
        out_data = self.data ** p

        def bw(g: np.ndarray) -> None:
            _accum(self, g * p * self.data ** (p - 1.0))

        return self._make(out_data, (self,), bw)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        if not isinstance(other, Tensor):
            other = Tensor(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(f"matmul requires ndim >= 2, got {self.shape} @ {other.shape}")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(f"matmul inner dimensions disagree: {self.shape} @ {other.shape}")
        out_data = self.data @ other.data

        def bw(g: np.ndarray) -> None:
            if self.requires_grad:
                _accum(self, _unbroadcast(g @ other.data.swapaxes(-1, -2), self.shape))
            if other.requires_grad:
                _accum(other, _unbroadcast(self.data.swapaxes(-1, -2) @ g, other.shape))

        return self._make(out_data, (self, other), bw)

    # -- shape manipulation -------------------------------------------------

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        in_shape = self.shape

        def bw(g: np.ndarray) -> None:
            _accum(self, g.reshape(in_shape))

        return self._make(out_data, (self,), bw)

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        out_data = self.data.transpose(axes)

        def bw(g: np.ndarray) -> None:
            _accum(self, g.transpose(inv))

        return self._make(out_data, (self,), bw)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(*axes)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, idx) -> "Tensor":
        out_data = self.data[idx]
        in_shape = self.shape

        def bw(g: np.ndarray) -> None:
            full = np.zeros(in_shape, dtype=np.float64)
            full[idx] += g
            _accum(self, full)

        return self._make(out_data, (self,), bw)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        in_shape = self.shape

        def bw(g: np.ndarray) -> None:
            if axis is None:
                _accum(self, np.broadcast_to(g, in_shape).copy())
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                _accum(self, np.broadcast_to(g, in_shape).copy())

        return self._make(out_data, (self,), bw)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- nonlinearities -----------------------------------------------------

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)

        def bw(g: np.ndarray) -> None:
            _accum(self, g * (1.0 - out_data * out_data))

        return self._make(out_data, (self,), bw)

    def gelu(self) -> "Tensor":
        """GELU with the tanh approximation 0.5x(1+tanh(sqrt(2/pi)(x+0.044715x^3)))."""
        x = self.data
        u = _GELU_C * (x + 0.044715 * x ** 3)
        t = np.tanh(u)
        out_data = 0.5 * x * (1.0 + t)

        def bw(g: np.ndarray) -> None:
            du = _GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            _accum(self, g * d)

        return self._make(out_data, (self,), bw)

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def bw(g: np.ndarray) -> None:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            _accum(self, (g - dot) * out_data)

        return self._make(out_data, (self,), bw)

    # -- backward -----------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; fills .grad on requires_grad leaves.

        Leaves reachable from the loss but without gradient flow keep a zero
        gradient; each recorded node is visited exactly once.
        """
        if self.data.ndim != 0 and self.data.size != 1:
            raise ContractError(f"backward() requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor with no gradient path")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))

        for node in order:
            if node.requires_grad and node.grad is None:
                node.grad = np.zeros(node.shape, dtype=np.float64)
        self.grad = np.ones(self.shape, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def zero_grad(self) -> None:
        self.grad = None


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros(t.shape, dtype=np.float64)
    t.grad += g


# -- free functions ---------------------------------------------------------


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g: np.ndarray) -> None:
        pieces = np.moveaxis(g, axis, 0)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                _accum(t, piece)

    return Tensor(out_data, _parents=tuple(tensors), _backward=bw)


def embedding(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup table[indices]; gradient scatters with repetition-safe add."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(
            f"embedding index out of range: max {int(idx.max())} for table of {table.shape[0]} rows")
    out_data = table.data[idx]

    def bw(g: np.ndarray) -> None:
        full = np.zeros(table.shape, dtype=np.float64)
        np.add.at(full, idx, g)
        _accum(table, full)

    return Tensor(out_data, _parents=(table,), _backward=bw)


def masked_fill(x: Tensor, keep: np.ndarray, fill: float) -> Tensor:
    """Replace entries where keep is False by `fill` (constant, no gradient)."""
    keep = np.asarray(keep, dtype=bool)
    out_data = np.where(keep, x.data, fill)

    def bw(g: np.ndarray) -> None:
        _accum(x, np.where(keep, g, 0.0))

    return Tensor(out_data, _parents=(x,), _backward=bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then affine."""
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm over an empty last axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return xc * inv * gain + bias


def causal_softmax_attention(q: Tensor, k: Tensor, v: Tensor,
                             pad_mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention over [B, h, L, dk] with causal visibility.

    pad_mask is a boolean [B, L] marking padded token slots; padded keys get
    exactly zero attention weight. A query row whose visible set would be
    empty (a padded query with only padded history) attends to its own
    position, so the result is never NaN.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"q/k/v shapes disagree: {q.shape}, {k.shape}, {v.shape}")
    if q.ndim != 4:
        raise ShapeError(f"attention expects [B, h, L, dk], got {q.shape}")
    B, h, L, dk = q.shape

    visible = np.tril(np.ones((L, L), dtype=bool))
    visible = np.broadcast_to(visible, (B, h, L, L)).copy()
    if pad_mask is not None:
        pad_mask = np.asarray(pad_mask, dtype=bool)
        if pad_mask.shape != (B, L):
            raise ShapeError(f"pad_mask must have shape {(B, L)}, got {pad_mask.shape}")
        visible &= ~pad_mask[:, None, None, :]
        dead = ~visible.any(axis=-1)
        if dead.any():
            eye = np.eye(L, dtype=bool)
            visible |= dead[..., None] & eye

    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dk))
    scores = masked_fill(scores, visible, -1e30)
    weights = scores.softmax(axis=-1)
    return weights @ v


def mse(pred: Tensor, target: Tensor) -> Tensor:
    diff = pred - target
    return (diff * diff).mean()


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                           step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function; the gradient oracle."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g
