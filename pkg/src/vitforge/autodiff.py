"""Reverse-mode automatic differentiation over the numpy kernels.

A ``Var`` wraps an array and records, per operation, the parent nodes plus a
pullback closure that maps the output gradient to each parent's gradient
contribution. The recorded graph hanging off a loss value IS the gradient
tape; ``gradients`` replays it in reverse topological order.

Every op here accepts plain arrays as well as Vars. With no Var argument an
op reduces to the raw kernel, so the inference path taxes nothing; with Var
arguments it records exactly the nodes that can reach a trainable leaf
(constant subtrees are folded away immediately).
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from vitforge import ops
from vitforge.ops import ShapeError


class UsageError(RuntimeError):
    """Raised when backward is requested without a recorded forward."""


class Var:
    """A node in the gradient tape: an array value plus how to back through it."""

    __slots__ = ("value", "grad", "name", "requires_grad", "_parents", "_pullbacks")

    def __init__(self, value, *, name=None, requires_grad=False, parents=(), pullbacks=()):
        self.value = np.asarray(value)
        self.grad = None
        self.name = name
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._pullbacks = pullbacks

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Var(shape={self.value.shape}{tag})"

    # Operator sugar used by the model code; scalars and arrays are lifted.
    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __sub__(self, other):
        return sub(self, other)


def param(name: str, value: np.ndarray) -> Var:
    """Wrap a trainable parameter as a named gradient-tape leaf."""
    return Var(value, name=name, requires_grad=True)


def value_of(x):
    """The plain array behind either a Var or an array."""
    return x.value if isinstance(x, Var) else np.asarray(x)


def _is_var(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


def _node(out_value, inputs, pullbacks):
    """Build a graph node keeping only the differentiable parents."""
    parents = []
    pulls = []
    for x, pull in zip(inputs, pullbacks):
        if isinstance(x, Var) and x.requires_grad:
            parents.append(x)
            pulls.append(pull)
    if not parents:
        return Var(out_value)
    return Var(out_value, requires_grad=True, parents=tuple(parents), pullbacks=tuple(pulls))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape of a broadcast operand."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Differentiable operations
# ---------------------------------------------------------------------------

def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    out = ops.matmul(av, bv)
    if not _is_var(a, b):
        return out
    return _node(
        out,
        (a, b),
        (lambda g: g @ bv.T, lambda g: av.T @ g),
    )


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    if not _is_var(a, b):
        return out
    return _node(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g, av.shape),
            lambda g: _unbroadcast(g, bv.shape),
        ),
    )


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    if not _is_var(a, b):
        return out
    return _node(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g, av.shape),
            lambda g: _unbroadcast(-g, bv.shape),
        ),
    )


def mul(a, b):
    """Elementwise (broadcasting) product; either side may be a scalar."""
    av, bv = value_of(a), value_of(b)
    out = av * bv
    if not _is_var(a, b):
        return out
    return _node(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g * bv, av.shape),
            lambda g: _unbroadcast(g * av, bv.shape),
        ),
    )


def scale(a, s: float):
    """Product with a non-differentiated scalar constant."""
    av = value_of(a)
    out = av * s
    if not _is_var(a):
        return out
    return _node(out, (a,), (lambda g: g * s,))


def transpose(a):
    av = value_of(a)
    out = av.T
    if not _is_var(a):
        return out
    return _node(out, (a,), (lambda g: g.T,))


def reshape(a, shape):
    av = value_of(a)
    out = av.reshape(shape)
    if not _is_var(a):
        return out
    return _node(out, (a,), (lambda g: g.reshape(av.shape),))


def narrow(a, axis: int, start: int, stop: int):
    """Contiguous slice along one axis (gradient scatters back into zeros)."""
    av = value_of(a)
    index = tuple(
        slice(start, stop) if ax == axis else slice(None) for ax in range(av.ndim)
    )
    out = av[index]

    if not _is_var(a):
        return out

    def pull(g):
        full = np.zeros_like(av)
        full[index] = g
        return full

    return _node(out, (a,), (pull,))


def concat(parts, axis: int = 0):
    values = [value_of(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    if not _is_var(*parts):
        return out

    pullbacks = []
    offset = 0
    for v in values:
        start, stop = offset, offset + v.shape[axis]
        index = tuple(
            slice(start, stop) if ax == axis else slice(None) for ax in range(out.ndim)
        )
        pullbacks.append(lambda g, index=index: g[index])
        offset = stop
    return _node(out, tuple(parts), tuple(pullbacks))


def sum_all(a):
    av = value_of(a)
    out = np.asarray(av.sum())
    if not _is_var(a):
        return out
    return _node(out, (a,), (lambda g: np.broadcast_to(g, av.shape).astype(av.dtype),))


def attention_context(a, v):
    """Token-order-canonical product of attention weights and values."""
    av, vv = value_of(a), value_of(v)
    out = ops.attention_context(av, vv)
    if not _is_var(a, v):
        return out
    return _node(
        out,
        (a, v),
        (lambda g: g @ vv.T, lambda g: av.T @ g),
    )


def gelu(a):
    av = value_of(a)
    out = ops.gelu(av)
    if not _is_var(a):
        return out
    return _node(out, (a,), (lambda g: g * ops.gelu_grad(av),))


def softmax_rows(a):
    av = value_of(a)
    out = ops.softmax_rows(av)
    if not _is_var(a):
        return out

    def pull(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return out * (g - inner)

    return _node(out, (a,), (pull,))


def layer_norm(x, gamma, beta, eps: float = 1e-6):
    xv, gv, bv = value_of(x), value_of(gamma), value_of(beta)
    out = ops.layer_norm(xv, gv, bv, eps=eps)
    if not _is_var(x, gamma, beta):
        return out

    d = xv.shape[-1]
    mean = xv.mean(axis=-1, keepdims=True)
    var = np.square(xv - mean).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mean) * inv

    def pull_x(g):
        gx = g * gv
        term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(
            axis=-1, keepdims=True
        )
        return term * inv

    def pull_gamma(g):
        return (g * xhat).reshape(-1, d).sum(axis=0)

    def pull_beta(g):
        return g.reshape(-1, d).sum(axis=0)

    return _node(out, (x, gamma, beta), (pull_x, pull_gamma, pull_beta))


def cross_entropy_loss(logits, labels):
    """Mean softmax cross entropy over a batch, in log-sum-exp form.

    ``logits`` is B x K (Var or array); ``labels`` is a length-B sequence of
    class indices in [0, K).
    """
    lv = value_of(logits)
    if lv.ndim != 2:
        raise ShapeError(f"cross_entropy_loss expects B x K logits, got {lv.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != lv.shape[0]:
        raise ValueError(
            f"labels length {labels.shape} does not match batch {lv.shape[0]}"
        )
    k = lv.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")

    b = lv.shape[0]
    m = lv.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(lv - m).sum(axis=1))
    picked = lv[np.arange(b), labels]
    out = np.asarray((lse - picked).mean())

    if not _is_var(logits):
        return out

    def pull(g):
        soft = ops.softmax_rows(lv)
        soft[np.arange(b), labels] -= 1.0
        return (g * soft / b).astype(lv.dtype)

    return _node(out, (logits,), (pull,))


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def _topological_order(root: Var):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def gradients(loss, params: Mapping[str, Var] | None = None) -> dict:
    """Accumulate d(loss)/d(parameter) for every named leaf the loss touches.

    Returns gradients keyed by parameter name. When ``params`` is given, each
    of its entries is guaranteed a gradient entry — exact zeros for leaves the
    loss never touched — and only those entries are returned.
    """
    if not isinstance(loss, Var):
        raise UsageError("backward requested without a recorded forward pass")
    if loss.value.ndim != 0:
        raise UsageError(f"loss must be a scalar, got shape {loss.value.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any trainable parameter")

    order = _topological_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones((), dtype=loss.value.dtype)

    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, pull in zip(node._parents, node._pullbacks):
            contribution = pull(node.grad)
            if parent.grad is None:
                parent.grad = contribution.copy()
            else:
                parent.grad += contribution

    collected = {}
    for node in order:
        if node.name is not None and node.grad is not None:
            collected[node.name] = node.grad

    if params is not None:
        out = {}
        for name, leaf in params.items():
            if name in collected:
                out[name] = collected[name]
            else:
                out[name] = np.zeros_like(value_of(leaf))
        return out
    return collected
