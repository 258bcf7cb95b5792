"""Minimal dense tensor with tape-based reverse-mode autodiff.

Values are 64-bit floats in row-major (C-order) numpy arrays. Every
differentiable op records its parents and a local gradient rule on the
result; ``backward`` replays the implied tape in reverse topological
order exactly once per node. No views, no strides, no GPU: desk-scale
sizes make copies cheap and gradient checks need float64 headroom.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ComputationTape",
    "ShapeError",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "narrow",
    "tile_rows",
    "mean_over_axis",
    "tensor_sum",
    "gelu",
    "softmax",
    "log_softmax",
    "layer_norm",
    "embedding",
    "l2_normalize",
    "softmax_cross_entropy",
    "select_positions",
    "backward",
    "trace",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class Tensor:
    """A dense float64 array plus optional gradient buffer.

    ``data`` is immutable by convention once the tensor participates in a
    graph; only ``grad`` is mutated (accumulated) by ``backward``. Ops
    attach ``_parents`` and a ``_backward`` closure that maps the
    upstream gradient to gradient contributions for each parent.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy(), requires_grad=self.requires_grad)
        return t

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def backward(self) -> None:
        backward(self)

    # operator sugar used throughout the pipeline
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"


class ComputationTape:
    """Reverse-topological record of one backward pass.

    Invariant: every node's parents appear later in ``nodes`` (we store
    the reverse order that backward visits), and each node appears once.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], bwd, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = bwd
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient ``g`` back down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    data = a.data @ b.data
    return _make(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got shape {a.shape}")
    return _make(np.ascontiguousarray(a.data.T), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)
    return _make(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(data, tensors, bwd, "concat")


def narrow(a: Tensor, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice of ``size`` entries along ``axis`` starting at ``start``."""
    if axis >= a.data.ndim:
        raise ShapeError(f"narrow axis {axis} out of range for shape {a.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + size)
    idx = tuple(idx)
    data = np.ascontiguousarray(a.data[idx])

    def bwd(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return _make(data, (a,), bwd, "narrow")


def tile_rows(a: Tensor, reps: int) -> Tensor:
    """Stack ``reps`` copies of a 2-D tensor along axis 0."""
    if a.data.ndim != 2:
        raise ShapeError(f"tile_rows expects a 2-D tensor, got shape {a.shape}")
    data = np.tile(a.data, (reps, 1))

    def bwd(g):
        return (g.reshape(reps, a.shape[0], a.shape[1]).sum(axis=0),)

    return _make(data, (a,), bwd, "tile_rows")


def mean_over_axis(a: Tensor, axis: int) -> Tensor:
    """Arithmetic mean along ``axis``; the axis is removed from the shape."""
    if axis < 0 or axis >= a.data.ndim:
        raise IndexError(f"axis {axis} out of range for tensor of rank {a.data.ndim}")
    n = a.shape[axis]
    data = a.data.mean(axis=axis)

    def bwd(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _make(data, (a,), bwd, "mean_over_axis")


def tensor_sum(a: Tensor) -> Tensor:
    data = np.asarray(a.data.sum())
    return _make(data, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x) with the Gaussian CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    data = x * cdf

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _make(data, (a,), bwd, "gelu")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (a,), bwd, "softmax")


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse
    sm = np.exp(data)

    def bwd(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return _make(data, (a,), bwd, "log_softmax")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    data = xhat * gain.data + bias.data
    n = x.shape[-1]

    def bwd(g):
        dgain = _unbroadcast(g * xhat, gain.shape)
        dbias = _unbroadcast(g, bias.shape)
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return (dx, dgain, dbias)

    return _make(data, (a, gain, bias), bwd, "layer_norm")


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup into a [V, D] table; gradient scatters back to rows."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("embedding lookup requires at least one index")
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise IndexError(f"token index out of range [0, {table.shape[0]})")
    data = table.data[ids]

    def bwd(g):
        dt = np.zeros(table.shape)
        np.add.at(dt, ids, g)
        return (dt,)

    return _make(data, (table,), bwd, "embedding")


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-wise L2 normalization over the last axis."""
    x = a.data
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True) + eps)
    y = x / norm

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - y * dot) / norm,)

    return _make(y, (a,), bwd, "l2_normalize")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean over positions of -log softmax(logits)[target].

    ``logits`` is [L, V]; ``targets`` holds L token indices, each < V.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got shape {logits.shape}")
    tgt = np.asarray(targets, dtype=np.int64)
    L, V = logits.shape
    if tgt.shape != (L,):
        raise ShapeError(f"expected {L} targets, got {tgt.shape}")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= V):
        raise IndexError(f"target index out of range [0, {V})")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    data = np.asarray(-logp[np.arange(L), tgt].mean())
    sm = np.exp(logp)

    def bwd(g):
        d = sm.copy()
        d[np.arange(L), tgt] -= 1.0
        return (g * d / L,)

    return _make(data, (logits,), bwd, "softmax_cross_entropy")


def select_positions(a: Tensor, rows: Sequence[int], cols: Sequence[int]) -> Tensor:
    """Gather a[rows[i], cols[i]] into a vector; gradient scatters back."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    data = a.data[rows, cols]

    def bwd(g):
        da = np.zeros(a.shape)
        np.add.at(da, (rows, cols), g)
        return (da,)

    return _make(data, (a,), bwd, "select")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def trace(loss: Tensor) -> ComputationTape:
    """Topologically order the graph below ``loss`` (reverse visit order)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
    order.reverse()
    return ComputationTape(order)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    No-op when nothing in the graph requires grad. Raises on non-scalar
    losses: reverse mode needs a scalar root.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = trace(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in tape.nodes:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
        node.grad += g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
