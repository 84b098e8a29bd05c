"""Reverse-mode differentiation over a fixed primitive set.

All values are float64 numpy arrays ("grids"). A :class:`Tape` records every
node created while evaluating an expression; :func:`reverse_gradient` walks
the record backwards and accumulates exact adjoints for any recorded leaves.

The primitive set is deliberately small: the networks and energy terms in
this package only need dense affine maps, a couple of pointwise
nonlinearities, reductions, norms and dot products. Each primitive has a
hand-written forward rule and vector-Jacobian product, which keeps the whole
engine auditable and testable against finite differences.
"""
from __future__ import annotations

import numpy as np


class GridError(ValueError):
    """Raised when an array violates the grid contract (non-finite, bad shape)."""


class TapeError(ValueError):
    """Raised on misuse of the tape (non-scalar output, foreign nodes, ...)."""


def as_grid(x, name="value"):
    """Coerce to a float64 array and reject non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise GridError(f"{name} contains non-finite entries")
    return arr


def check_finite(arr, context=""):
    if not np.all(np.isfinite(arr)):
        raise GridError(f"non-finite values encountered {context}".strip())
    return arr


class Node:
    """One recorded value. Produced only through Tape methods."""

    __slots__ = ("value", "op", "parents", "aux", "index")

    def __init__(self, value, op, parents, aux, index):
        self.value = value
        self.op = op
        self.parents = parents
        self.aux = aux
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node#{self.index}({self.op}, shape={self.value.shape})"


def _expand(g, axis):
    """Re-insert a reduced axis so g broadcasts against the parent shape."""
    if axis is None:
        return g
    return np.expand_dims(g, axis)


# forward rules: op -> f(parent_values, aux) -> value
_FORWARD = {
    "leaf": lambda vals, aux: aux["value"],
    "add": lambda vals, aux: vals[0] + vals[1],
    "sub": lambda vals, aux: vals[0] - vals[1],
    "mul": lambda vals, aux: vals[0] * vals[1],
    "scale": lambda vals, aux: vals[0] * aux["c"],
    "matmul": lambda vals, aux: vals[0] @ vals[1],
    "bias": lambda vals, aux: vals[0] + vals[1],
    "tanh": lambda vals, aux: np.tanh(vals[0]),
    "exp": lambda vals, aux: np.exp(vals[0]),
    "log": lambda vals, aux: np.log(vals[0]),
    "sqrt": lambda vals, aux: np.sqrt(vals[0]),
    "square": lambda vals, aux: vals[0] * vals[0],
    "reciprocal": lambda vals, aux: 1.0 / vals[0],
    "sum": lambda vals, aux: np.sum(vals[0], axis=aux["axis"]),
    "mean": lambda vals, aux: np.mean(vals[0], axis=aux["axis"]),
    "dot": lambda vals, aux: np.sum(vals[0] * vals[1], axis=aux["axis"]),
    "l2norm": lambda vals, aux: np.sqrt(np.sum(vals[0] * vals[0], axis=aux["axis"])),
    "reshape": lambda vals, aux: vals[0].reshape(aux["shape"]),
    "concat": lambda vals, aux: np.concatenate([vals[0], vals[1]], axis=aux["axis"]),
    "log_softmax": lambda vals, aux: _log_softmax(vals[0]),
    "take_col": lambda vals, aux: vals[0][:, aux["col"]],
    "lowpass": lambda vals, aux: aux["apply"](vals[0]),
}


def _log_softmax(z):
    m = np.max(z, axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


def _vjp(node, g):
    """Adjoints of node's parents given the adjoint g of node."""
    op = node.op
    a = node.parents[0] if node.parents else None
    if op == "add":
        return (g, g)
    if op == "sub":
        return (g, -g)
    if op == "mul":
        return (g * node.parents[1].value, g * a.value)
    if op == "scale":
        return (g * node.aux["c"],)
    if op == "matmul":
        b = node.parents[1]
        return (g @ b.value.T, a.value.T @ g)
    if op == "bias":
        return (g, np.sum(g, axis=0))
    if op == "tanh":
        return (g * (1.0 - node.value * node.value),)
    if op == "exp":
        return (g * node.value,)
    if op == "log":
        return (g / a.value,)
    if op == "sqrt":
        return (g / (2.0 * node.value),)
    if op == "square":
        return (2.0 * g * a.value,)
    if op == "reciprocal":
        return (-g * node.value * node.value,)
    if op == "sum":
        return (np.broadcast_to(_expand(g, node.aux["axis"]), a.value.shape),)
    if op == "mean":
        axis = node.aux["axis"]
        n = a.value.size if axis is None else a.value.shape[axis]
        return (np.broadcast_to(_expand(g, axis) / n, a.value.shape),)
    if op == "dot":
        ge = _expand(g, node.aux["axis"])
        return (ge * node.parents[1].value, ge * a.value)
    if op == "l2norm":
        ge = _expand(g, node.aux["axis"])
        ye = _expand(node.value, node.aux["axis"])
        return (ge * a.value / ye,)
    if op == "reshape":
        return (g.reshape(a.value.shape),)
    if op == "concat":
        k = a.value.shape[node.aux["axis"]]
        sl = [slice(None)] * g.ndim
        sl[node.aux["axis"]] = slice(0, k)
        left = g[tuple(sl)]
        sl[node.aux["axis"]] = slice(k, None)
        return (left, g[tuple(sl)])
    if op == "log_softmax":
        p = np.exp(node.value)
        return (g - p * np.sum(g, axis=-1, keepdims=True),)
    if op == "take_col":
        out = np.zeros_like(a.value)
        out[:, node.aux["col"]] = g
        return (out,)
    if op == "lowpass":
        # block-average projections are symmetric, so the vjp is the filter itself
        return (node.aux["apply"](g),)
    raise TapeError(f"no backward rule for op {op!r}")


class Tape:
    """Ordered record of primitive operations over grids."""

    def __init__(self):
        self.nodes = []

    def _record(self, op, parents, aux, value):
        node = Node(value, op, parents, aux, len(self.nodes))
        self.nodes.append(node)
        return node

    def leaf(self, value, name=None):
        v = as_grid(value, name or "leaf")
        return self._record("leaf", (), {"value": v, "name": name}, v)

    def constant(self, value, name=None):
        # identical to leaf; kept separate for readability at call sites
        return self.leaf(value, name)

    def _apply(self, op, parents, aux=None):
        aux = aux or {}
        value = _FORWARD[op]([p.value for p in parents], aux)
        return self._record(op, tuple(parents), aux, value)

    def add(self, a, b):
        if a.value.shape != b.value.shape:
            raise TapeError(f"add shape mismatch {a.shape} vs {b.shape}")
        return self._apply("add", (a, b))

    def sub(self, a, b):
        if a.value.shape != b.value.shape:
            raise TapeError(f"sub shape mismatch {a.shape} vs {b.shape}")
        return self._apply("sub", (a, b))

    def mul(self, a, b):
        if a.value.shape != b.value.shape:
            raise TapeError(f"mul shape mismatch {a.shape} vs {b.shape}")
        return self._apply("mul", (a, b))

    def scale(self, a, c):
        return self._apply("scale", (a,), {"c": float(c)})

    def matmul(self, a, b):
        return self._apply("matmul", (a, b))

    def bias(self, a, b):
        # row-broadcast add: a is (n, m), b is (m,)
        if a.value.ndim != 2 or b.value.shape != (a.value.shape[1],):
            raise TapeError(f"bias expects (n,m)+(m,), got {a.shape} and {b.shape}")
        return self._apply("bias", (a, b))

    def tanh(self, a):
        return self._apply("tanh", (a,))

    def exp(self, a):
        return self._apply("exp", (a,))

    def log(self, a):
        return self._apply("log", (a,))

    def sqrt(self, a):
        return self._apply("sqrt", (a,))

    def square(self, a):
        return self._apply("square", (a,))

    def reciprocal(self, a):
        return self._apply("reciprocal", (a,))

    def sum(self, a, axis=None):
        return self._apply("sum", (a,), {"axis": axis})

    def mean(self, a, axis=None):
        return self._apply("mean", (a,), {"axis": axis})

    def dot(self, a, b, axis=None):
        if a.value.shape != b.value.shape:
            raise TapeError(f"dot shape mismatch {a.shape} vs {b.shape}")
        return self._apply("dot", (a, b), {"axis": axis})

    def l2norm(self, a, axis=None):
        return self._apply("l2norm", (a,), {"axis": axis})

    def reshape(self, a, shape):
        return self._apply("reshape", (a,), {"shape": tuple(shape)})

    def concat(self, a, b, axis=1):
        return self._apply("concat", (a, b), {"axis": axis})

    def log_softmax(self, a):
        return self._apply("log_softmax", (a,))

    def take_col(self, a, col):
        if a.value.ndim != 2 or not (0 <= col < a.value.shape[1]):
            raise TapeError(f"take_col({col}) invalid for shape {a.shape}")
        return self._apply("take_col", (a,), {"col": int(col)})

    def lowpass(self, a, apply_fn):
        # apply_fn must be a linear symmetric projection acting on rows
        return self._apply("lowpass", (a,), {"apply": apply_fn})

    def replay(self):
        """Recompute every node from its record; returns the new values.

        Forward replay is bit-deterministic: the same record yields the same
        float64 results.
        """
        values = []
        for node in self.nodes:
            vals = [values[p.index] for p in node.parents]
            values.append(_FORWARD[node.op](vals, node.aux))
        return values


def reverse_gradient(tape, output, inputs):
    """Exact gradients of a scalar output w.r.t. the given input nodes.

    Inputs that do not influence the output get a zero gradient. Raises
    TapeError when output is not scalar-shaped (size 1).
    """
    if output.value.size != 1:
        raise TapeError(f"output must be scalar, got shape {output.shape}")
    for node in (output, *inputs):
        if tape.nodes[node.index] is not node:
            raise TapeError("node does not belong to this tape")
    adjoints = {output.index: np.ones_like(output.value)}
    for node in reversed(tape.nodes[: output.index + 1]):
        g = adjoints.get(node.index)
        if g is None or not node.parents:
            continue
        for parent, pg in zip(node.parents, _vjp(node, g)):
            acc = adjoints.get(parent.index)
            adjoints[parent.index] = pg if acc is None else acc + pg
    grads = []
    for inp in inputs:
        g = adjoints.get(inp.index)
        grads.append(np.zeros_like(inp.value) if g is None else np.asarray(g))
    return grads
