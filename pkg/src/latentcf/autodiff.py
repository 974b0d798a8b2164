"""Small define-by-run reverse-mode autodiff over float64 numpy arrays.

Every forward operation returns a new :class:`Tensor` that remembers its
parents and a closure computing the vector-Jacobian product.  ``backward``
walks the graph in reverse topological order and then marks it consumed;
calling it a second time on the same graph raises.

Broadcasting rule for binary elementwise ops: the lower-rank operand must
either be a scalar (size 1) or have a shape equal to the trailing dimensions
of the other operand.  Everything else is rejected.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "_parents", "_vjp", "_consumed", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _raise_item(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(values, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


def _node(values: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._parents = parents if out.requires_grad else ()
    out._vjp = vjp if out.requires_grad else None
    out._consumed = False
    out.name = None
    return out


# ---------------------------------------------------------------------------
# broadcasting

def _check_broadcast(a: np.ndarray, b: np.ndarray) -> tuple[int, ...]:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if a.size == 1 and a.ndim <= len(sb):
        return sb
    if b.size == 1 and b.ndim <= len(sa):
        return sa
    if len(sa) > len(sb) and sa[len(sa) - len(sb):] == sb:
        return sa
    if len(sb) > len(sa) and sb[len(sb) - len(sa):] == sa:
        return sb
    raise ShapeError(f"cannot broadcast shapes {sa} and {sb} (only scalar or trailing-dimension alignment)")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if int(np.prod(shape)) == 1:
        return np.full(shape, grad.sum())
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead)))


# ---------------------------------------------------------------------------
# binary elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.values, b.values)
    sa, sb = a.shape, b.shape
    return _node(a.values + b.values, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.values, b.values)
    sa, sb = a.shape, b.shape
    return _node(a.values - b.values, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.values, b.values)
    av, bv = a.values, b.values
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.values, (a,), lambda g: (-g,))


# ---------------------------------------------------------------------------
# unary elementwise

def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _stable_sigmoid(a.values)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed stably."""
    a = as_tensor(a)
    v = a.values
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    s = _stable_sigmoid(v)
    return _node(out, (a,), lambda g: (g * s,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.values)
    return _node(e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values <= 0):
        raise ValueError("log of non-positive value")
    v = a.values
    return _node(np.log(v), (a,), lambda g: (g / v,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0
    return _node(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def max_with_const(a, c: float) -> Tensor:
    """max(a, c) elementwise; the gradient goes to ``a`` only where a > c."""
    a = as_tensor(a)
    mask = a.values > c
    return _node(np.where(mask, a.values, c), (a,), lambda g: (g * mask,))


def abs_(a) -> Tensor:
    """|a| with subgradient 0 at 0."""
    a = as_tensor(a)
    sgn = np.sign(a.values)
    return _node(np.abs(a.values), (a,), lambda g: (g * sgn,))


def square(a) -> Tensor:
    a = as_tensor(a)
    v = a.values
    return _node(v * v, (a,), lambda g: (2.0 * g * v,))


def softmax_lastdim(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (a,), vjp)


def log_softmax_lastdim(a) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)
    return _node(out, (a,), lambda g: (g - s * g.sum(axis=-1, keepdims=True),))


def layer_norm_lastdim(a, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance (no affine)."""
    a = as_tensor(a)
    x = a.values
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _node(xhat, (a,), vjp) if n > 0 else a


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "softmax_lastdim": softmax_lastdim,
    "relu": relu,
    "max_with_const": max_with_const,
}


def elementwise(op: str, *inputs, **kwargs) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# linear algebra and reductions

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry leading batch axes; ``b`` is either 2-D (shared across the
    batch) or has exactly the same leading axes as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {av.shape} @ {bv.shape}")
    if bv.ndim > 2 and av.shape[:-2] != bv.shape[:-2]:
        raise ShapeError(f"matmul batch mismatch: {av.shape} @ {bv.shape}")
    # einsum rather than BLAS so every output row depends only on its own
    # input row (BLAS kernels may round differently for different batch sizes)
    out = np.einsum("...ij,...jk->...ik", av, bv)

    def vjp(g):
        ga = np.einsum("...ik,...jk->...ij", g, bv)
        if bv.ndim == 2:
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(av, -1, -2) @ g
        return ga, gb

    return _node(out, (a, b), vjp)


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return _node(np.array(a.values.sum()).reshape(1), (a,),
                     lambda g: (np.broadcast_to(g.reshape(()), shape).copy(),))
    out = a.values.sum(axis=axis)

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(out, (a,), vjp)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.values.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def l2_norm(a, axis=-1) -> Tensor:
    """Euclidean norm over ``axis``; gradient taken as 0 where the norm is 0."""
    a = as_tensor(a)
    v = a.values
    nrm = np.sqrt((v * v).sum(axis=axis))

    def vjp(g):
        safe = np.where(nrm > 0, nrm, 1.0)
        scale = np.where(nrm > 0, g / safe, 0.0)
        return (v * np.expand_dims(scale, axis),)

    return _node(nrm, (a,), vjp)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _node(np.swapaxes(a.values, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def take(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _node(np.array(a.values[index]), (a,), vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.values for t in ts], axis=axis), ts, vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _node(np.stack([t.values for t in ts], axis=axis), ts, vjp)


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value ``hard``; backward passes the incoming gradient to ``soft``."""
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ShapeError(f"straight_through shapes differ: {hard.shape} vs {soft.shape}")
    return _node(hard.copy(), (soft,), lambda g: (g,))


# ---------------------------------------------------------------------------
# backward and optimisation

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``.

    Leaf gradients accumulate across calls on separate graphs; the graph that
    produced ``loss`` is released afterwards and cannot be traversed again.
    """
    if loss.values.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward called twice on the same graph; rebuild it with a new forward pass")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._vjp is None:
            if node.requires_grad and g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if node._vjp is not None:
            node._consumed = True
            node._vjp = None
            node._parents = ()


def sgd_step(params: Iterable[Tensor], learning_rate: float, clip_norm: float | None = None) -> float:
    """In-place ``p -= lr * grad`` followed by clearing the gradients.

    Returns the global gradient norm before clipping.
    """
    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    params = list(params)
    for p in params:
        if p.grad is None:
            raise GraphError(f"parameter {p.name or p.shape} has no gradient")
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    scale = 1.0
    if clip_norm is not None and total > clip_norm:
        scale = clip_norm / total
    for p in params:
        p.values -= learning_rate * scale * p.grad
        p.grad = None
    return total
