"""A small dense-tensor engine with define-by-run reverse-mode autodiff.

Only the operators the transformer needs are provided. Every tensor holds a
float32 numpy array (float64 inside :func:`precision`, used by gradient
checks); graph nodes remember their parents and a closure that maps
the upstream gradient to one gradient per parent.

Masking uses the most negative finite float32 instead of a true -inf so that
``max``-subtraction inside softmax never produces ``-inf - -inf``. Masked
probabilities still underflow to exactly 0.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractViolation, ShapeError

DTYPE = np.float32
NEG_INF = np.finfo(np.float32).min

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Compute new tensors in ``dtype`` (process-wide, not thread-local)."""
    global DTYPE
    prev = DTYPE
    DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        DTYPE = prev


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: BackwardFn | None = None, op: str = "") -> None:
        self.data = np.asarray(data, dtype=DTYPE, order="C")  # keeps 0-d scalars 0-d
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        # leaves own a persistent accumulator; interior nodes never store grads
        self.grad = np.zeros_like(self.data) if (requires_grad and _backward is None) else None

    @classmethod
    def param(cls, data) -> "Tensor":
        return cls(data, requires_grad=True)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op or 'leaf'!r})"

    def __add__(self, other) -> "Tensor":
        return add(self, _lift(other))

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, _lift(other))

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every tracked leaf's ``grad``."""
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be a scalar, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    track = grad_enabled() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None
    sa, sb = a.shape, b.shape
    return _node(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None
    ad, bd = a.data, b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c32 = DTYPE(c)
    return _node(a.data * c32, (a,), lambda g: (g * c32,), "scale")


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return _node(a.data * keep, (a,), lambda g: (g * keep,), "relu")


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``p == 0`` or ``rng`` is None."""
    if p <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= p).astype(DTYPE) * DTYPE(1.0 / (1.0 - p))
    return _node(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def masked_add(a: Tensor, mask: np.ndarray) -> Tensor:
    """Add a {0, -inf} mask; masked entries become the float32 floor."""
    mask = np.asarray(mask)
    try:
        masked = np.broadcast_to(mask != 0, a.shape)
    except ValueError:
        raise ShapeError(f"masked_add: mask {mask.shape} does not broadcast to {a.shape}") from None
    out = np.where(masked, NEG_INF, a.data).astype(DTYPE, copy=False)
    keep = ~masked
    return _node(out, (a,), lambda g: (g * keep,), "masked_add")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {shape}") from None
    return _node(out, (a,), lambda g: (g.reshape(src),), "reshape")


def permute(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inverse),), "permute")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.data.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 dims, got {a.shape}")
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    arrays = [t.data for t in tensors]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    splits = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return _node(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


def rel_shift(a: Tensor) -> Tensor:
    """Turn per-offset logits into per-position logits.

    Input ``(..., L, 2L-1)`` indexed by relative offset ``j - i + L - 1``;
    output ``(..., L, L)`` indexed by absolute key position ``j``.
    """
    *lead, length, width = a.shape
    if width != 2 * length - 1:
        raise ShapeError(f"rel_shift: expected last dim {2 * length - 1}, got shape {a.shape}")
    idx = np.arange(length)[None, :] - np.arange(length)[:, None] + (length - 1)
    idx = np.broadcast_to(idx, (*lead, length, length))
    out = np.take_along_axis(a.data, idx, axis=-1)
    src_shape = a.shape

    def backward(g: np.ndarray):
        ga = np.zeros(src_shape, dtype=DTYPE)
        # offsets are distinct within a row, so assignment is an exact scatter-add
        np.put_along_axis(ga, idx, g, axis=-1)
        return (ga,)

    return _node(out, (a,), backward, "rel_shift")


# ---------------------------------------------------------------------------
# linear algebra and lookups


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch dims {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def backward(g: np.ndarray):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward, "matmul")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]`` producing ``ids.shape + (dim,)``."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ShapeError(f"embedding: id out of range [0, {vocab}) "
                         f"(min {ids.min()}, max {ids.max()})")
    out = table.data[ids]
    shape = table.shape

    def backward(g: np.ndarray):
        gt = np.zeros(shape, dtype=DTYPE)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (gt,)

    return _node(out, (table,), backward, "embedding")


# ---------------------------------------------------------------------------
# normalisation and reductions


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis. A row with every entry masked is an error."""
    x = a.data
    row_max = x.max(axis=-1, keepdims=True)
    if np.any(row_max <= NEG_INF):
        raise ContractViolation("softmax: a row is masked at every position")
    e = np.exp(x - row_max)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (a,), backward, "softmax")


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + DTYPE(eps))
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data
    gd = gamma.data

    def backward(g: np.ndarray):
        dxhat = g * gd
        dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(out, (a, gamma, beta), backward, "layer_norm")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _node(np.asarray(a.data.sum(dtype=DTYPE)), (a,),
                 lambda g: (np.broadcast_to(g, shape).astype(DTYPE),), "sum")


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int = 0) -> Tensor:
    """Mean token cross-entropy over positions whose target is not ``ignore_index``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    valid = targets != ignore_index
    count = int(valid.sum())
    if count == 0:
        raise ContractViolation("cross_entropy: no supervised positions (all targets ignored)")
    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_p = shifted - log_z
    safe_t = np.where(valid, targets, 0)
    picked = np.take_along_axis(log_p, safe_t[..., None], axis=-1)[..., 0]
    loss = -(picked * valid).sum(dtype=np.float64) / count

    def backward(g: np.ndarray):
        p = np.exp(log_p)
        np.put_along_axis(p, safe_t[..., None], np.take_along_axis(p, safe_t[..., None], -1) - 1.0, -1)
        return (p * (valid[..., None] * (g / DTYPE(count))),)

    return _node(np.asarray(loss, dtype=DTYPE), (logits,), backward, "cross_entropy")
