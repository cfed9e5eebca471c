"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Graph` is an append-only list of nodes. Every op appends one node
holding its cached output and a closure that maps the output cotangent to
input cotangents. ``Graph.backward`` walks the tape once in reverse id order.

Ops are exposed as module-level functions. When any argument is a
:class:`Node` the op is recorded on that node's graph; when all arguments are
plain arrays the op is evaluated eagerly and returns an array. This lets model
code run unchanged with or without differentiation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Tensor = np.ndarray


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Non-finite input or a division that would blow up."""


class ContractError(RuntimeError):
    """API misuse, e.g. calling backward on a non-scalar node."""


def as_tensor(x) -> Tensor:
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class _Record:
    tag: str
    inputs: tuple[int, ...]
    value: Tensor
    vjp: Callable[[Tensor], tuple[Tensor, ...]] | None


class Node:
    """Handle to a value recorded on a graph."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: "Graph", id: int):
        self.graph = graph
        self.id = id

    @property
    def value(self) -> Tensor:
        return self.graph.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        tag = self.graph.nodes[self.id].tag
        return f"Node(id={self.id}, tag={tag!r}, shape={self.shape})"


class Graph:
    """Append-only tape. Single owner; build one per worker."""

    def __init__(self):
        self.nodes: list[_Record] = []
        self.params: list[int] = []

    def _push(self, tag, inputs, value, vjp) -> Node:
        self.nodes.append(_Record(tag, tuple(inputs), value, vjp))
        return Node(self, len(self.nodes) - 1)

    def param(self, value) -> Node:
        node = self._push("param", (), as_tensor(value).copy(), None)
        self.params.append(node.id)
        return node

    def const(self, value) -> Node:
        return self._push("const", (), as_tensor(value), None)

    def backward(self, loss: Node) -> dict[int, Tensor]:
        """Return d(loss)/d(param) for every parameter node, keyed by node id.

        Parameters the loss does not depend on receive zero tensors.
        """
        if loss.graph is not self:
            raise ContractError("loss node belongs to a different graph")
        if self.nodes[loss.id].value.size != 1:
            raise ContractError(
                f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, Tensor] = {loss.id: np.ones_like(loss.value)}
        for i in range(loss.id, -1, -1):
            g = grads.pop(i, None) if self.nodes[i].tag != "param" else grads.get(i)
            if g is None:
                continue
            rec = self.nodes[i]
            if rec.vjp is None:
                continue
            for j, gj in zip(rec.inputs, rec.vjp(g)):
                if gj is None:
                    continue
                if j in grads:
                    grads[j] = grads[j] + gj
                else:
                    grads[j] = gj
        return {p: grads.get(p, np.zeros_like(self.nodes[p].value))
                for p in self.params}


def _graph_of(*args) -> Graph | None:
    graph = None
    for a in args:
        if isinstance(a, Node):
            if graph is not None and a.graph is not graph:
                raise ContractError("operands recorded on different graphs")
            graph = a.graph
    return graph


def _lift(graph: Graph, x) -> Node:
    return x if isinstance(x, Node) else graph.const(x)


def _val(x) -> Tensor:
    return x.value if isinstance(x, Node) else as_tensor(x)


def _record(tag, args, value, vjp):
    graph = _graph_of(*args)
    if graph is None:
        return value
    nodes = [_lift(graph, a) for a in args]
    return graph._push(tag, [n.id for n in nodes], value, vjp)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- elementwise -------------------------------------------------------------

def add(a, b):
    av, bv = _val(a), _val(b)
    _same_shape("add", av, bv)
    return _record("add", (a, b), av + bv, lambda g: (g, g))


def sub(a, b):
    av, bv = _val(a), _val(b)
    _same_shape("sub", av, bv)
    return _record("sub", (a, b), av - bv, lambda g: (g, -g))


def mul(a, b):
    av, bv = _val(a), _val(b)
    _same_shape("mul", av, bv)
    return _record("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(a, c: float):
    c = float(c)
    return _record("scale", (a,), _val(a) * c, lambda g: (g * c,))


def exp(a):
    out = np.exp(_val(a))
    return _record("exp", (a,), out, lambda g: (g * out,))


def tanh(a):
    out = np.tanh(_val(a))
    return _record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def relu(a):
    av = _val(a)
    mask = av > 0
    return _record("relu", (a,), np.where(mask, av, 0.0), lambda g: (g * mask,))


def clamp_min(a, floor: float):
    """max(a, floor); gradient is zero where the floor is active."""
    av = _val(a)
    mask = av >= floor
    return _record("clamp_min", (a,), np.where(mask, av, floor),
                   lambda g: (g * mask,))


# -- linear algebra / structure ----------------------------------------------

def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(
            f"matmul: cannot multiply {av.shape} by {bv.shape}")
    return _record("matmul", (a, b), av @ bv,
                   lambda g: (g @ bv.T, av.T @ g))


def add_bias(x, b):
    """Row-wise bias: x[B x n] + b[n]. The only broadcast the engine allows."""
    xv, bv = _val(x), _val(b)
    if xv.ndim != 2 or bv.shape != (xv.shape[1],):
        raise DimensionError(f"add_bias: cannot add {bv.shape} to rows of {xv.shape}")
    return _record("add_bias", (x, b), xv + bv, lambda g: (g, g.sum(axis=0)))


def take(flat, start: int, shape: Sequence[int]):
    """Reshaped view of flat[start : start + prod(shape)]."""
    fv = _val(flat)
    shape = tuple(int(s) for s in shape)
    stop = start + int(np.prod(shape))
    if fv.ndim != 1 or stop > fv.size:
        raise DimensionError(
            f"take: slice [{start}:{stop}] out of range for shape {fv.shape}")
    n = fv.size

    def vjp(g):
        full = np.zeros(n)
        full[start:stop] = g.ravel()
        return (full,)

    return _record("take", (flat,), fv[start:stop].reshape(shape), vjp)


def sum_all(a):
    av = _val(a)
    return _record("sum", (a,), np.asarray(av.sum()),
                   lambda g: (np.full(av.shape, float(g)),))


def mean_all(a):
    av = _val(a)
    n = av.size
    return _record("mean", (a,), np.asarray(av.sum() / n),
                   lambda g: (np.full(av.shape, float(g) / n),))


def log_softmax(logits):
    """Row-wise log-softmax, computed as x - max - log(sum(exp(x - max)))."""
    x = _val(logits)
    if x.ndim != 2 or x.shape[1] < 2:
        raise DimensionError(f"log_softmax needs [B x K] with K >= 2, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("log_softmax: non-finite logits")
    shifted = x - x.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    p = np.exp(out)
    return _record("log_softmax", (logits,), out,
                   lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def value(x) -> Tensor:
    """Underlying array of a node or array."""
    return _val(x)
