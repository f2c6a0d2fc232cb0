"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Values are float64 arrays. Every operation applied to a :class:`Var` appends a
node to the owning :class:`Tape`; nodes are therefore already in topological
order and :meth:`Tape.backward` walks them once in reverse.

The primitive set is deliberately small: what a batched MLP, an L1/L2
penalty and the GENERIC operator assembly need.

>>> tape = Tape()
>>> x = tape.param([1.0, 2.0], name="x")
>>> tape.backward(squared_norm(x))[0]
array([2., 4.])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tape",
    "Var",
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "absolute",
    "total",
    "l1_norm",
    "squared_norm",
    "gather",
    "scatter_matrix",
    "bmv",
    "linear",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a tape operation."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out the axes numpy broadcasting added or stretched
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A value recorded on a tape."""

    __slots__ = ("tape", "value", "index", "parents", "grad_fn", "op")

    def __init__(self, tape, value, parents=(), grad_fn=None, op="leaf"):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.grad_fn = grad_fn
        self.op = op
        self.index = tape._append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op!r}, node={self.index}, shape={self.shape})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Single-owner record of the operations applied to its variables.

    Parameters registered with :meth:`param` receive gradients from
    :meth:`backward`; constants do not.
    """

    def __init__(self):
        self.nodes: list[Var] = []
        self.params: list[Var] = []
        self.param_names: list[str] = []

    def _append(self, node: Var) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def param(self, value, name: str | None = None) -> Var:
        var = Var(self, np.array(value, dtype=np.float64), op="param")
        self.params.append(var)
        self.param_names.append(name if name is not None else f"p{len(self.params) - 1}")
        return var

    def const(self, value) -> Var:
        return Var(self, np.asarray(value, dtype=np.float64), op="const")

    def backward(self, root: Var) -> list[np.ndarray]:
        """Gradient of a scalar ``root`` with respect to every registered parameter.

        Returns one array per parameter, in registration order, shaped like the
        parameter.
        """
        if root.tape is not self:
            raise ValueError("root was recorded on a different tape")
        if root.value.size != 1:
            raise ShapeError(
                f"backward needs a scalar root, node {root.index} ({root.op}) has shape {root.shape}"
            )
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[root.index] = np.ones_like(root.value)
        for node in reversed(self.nodes[: root.index + 1]):
            g = grads[node.index]
            if g is None or node.grad_fn is None:
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                if pg is None:
                    continue
                if grads[parent.index] is None:
                    grads[parent.index] = pg
                else:
                    grads[parent.index] = grads[parent.index] + pg
        out = []
        for p in self.params:
            g = grads[p.index]
            out.append(np.zeros_like(p.value) if g is None else np.asarray(g).reshape(p.shape))
        return out


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("operands belong to different tapes")
        return x
    return tape.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _node(tape, value, parents, grad_fn: Callable, op: str) -> Var:
    return Var(tape, value, tuple(parents), grad_fn, op)


def _check(cond: bool, tape: Tape, op: str, *shapes):
    if not cond:
        raise ShapeError(
            f"{op} at node {len(tape.nodes)}: incompatible shapes "
            + ", ".join(str(s) for s in shapes)
        )


def matmul(a, b) -> Var:
    """Matrix product for operands of rank 1 or 2 (numpy ``@`` semantics)."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    A, B = a.value, b.value
    _check(
        1 <= A.ndim <= 2 and 1 <= B.ndim <= 2 and A.shape[-1] == B.shape[0],
        tape, "matmul", A.shape, B.shape,
    )

    def grad_fn(g):
        A2 = A if A.ndim == 2 else A[None, :]
        B2 = B if B.ndim == 2 else B[:, None]
        g2 = g.reshape(A2.shape[0], B2.shape[1])
        return (g2 @ B2.T).reshape(A.shape), (A2.T @ g2).reshape(B.shape)

    return _node(tape, A @ B, (a, b), grad_fn, "matmul")


def transpose(a: Var) -> Var:
    tape = a.tape
    _check(a.value.ndim == 2, tape, "transpose", a.shape)
    return _node(tape, a.value.T, (a,), lambda g: (g.T,), "transpose")


def _binary(a, b, op, fwd, grad_a, grad_b) -> Var:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    try:
        out = fwd(a.value, b.value)
    except ValueError:
        _check(False, tape, op, a.shape, b.shape)

    def grad_fn(g):
        return (
            _unbroadcast(grad_a(g, a.value, b.value), a.shape),
            _unbroadcast(grad_b(g, a.value, b.value), b.shape),
        )

    return _node(tape, out, (a, b), grad_fn, op)


def add(a, b) -> Var:
    return _binary(a, b, "add", np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Var:
    return _binary(a, b, "sub", np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Var:
    """Elementwise product with broadcasting."""
    return _binary(
        a, b, "mul", np.multiply,
        lambda g, x, y: g * y,
        lambda g, x, y: g * x,
    )


def scale(a: Var, alpha: float) -> Var:
    alpha = float(alpha)
    return _node(a.tape, alpha * a.value, (a,), lambda g: (alpha * g,), "scale")


def relu(a: Var) -> Var:
    # subgradient at exactly 0 is 0
    mask = a.value > 0
    return _node(a.tape, np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def absolute(a: Var) -> Var:
    sign = np.sign(a.value)
    return _node(a.tape, np.abs(a.value), (a,), lambda g: (g * sign,), "abs")


def total(a: Var) -> Var:
    """Sum of all entries (scalar output)."""
    shape = a.shape
    return _node(
        a.tape, np.asarray(a.value.sum()), (a,),
        lambda g: (np.broadcast_to(g, shape).copy(),), "sum",
    )


def l1_norm(a: Var) -> Var:
    """Sum of absolute values of all entries."""
    sign = np.sign(a.value)
    return _node(
        a.tape, np.asarray(np.abs(a.value).sum()), (a,),
        lambda g: (g * sign,), "l1",
    )


def squared_norm(a: Var) -> Var:
    """Sum of squared entries."""
    x = a.value
    return _node(a.tape, np.asarray(np.sum(x * x)), (a,), lambda g: (2.0 * g * x,), "sqnorm")


def gather(a: Var, index: Sequence[int]) -> Var:
    """Select columns of the last axis: ``a[..., index]``."""
    index = np.asarray(index, dtype=np.intp)
    tape = a.tape
    _check(
        index.size == 0 or (index.min() >= -a.shape[-1] and index.max() < a.shape[-1]),
        tape, "gather", a.shape, index.shape,
    )
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.add.at(out, (Ellipsis, index), g)
        return (out,)

    return _node(tape, a.value[..., index], (a,), grad_fn, "gather")


def scatter_matrix(a: Var, rows, cols, signs, size: int) -> Var:
    """Place the columns of a ``(batch, p)`` array into ``(batch, size, size)`` matrices.

    Entry ``k`` lands at ``(rows[k], cols[k])`` multiplied by ``signs[k]``;
    duplicate positions accumulate.
    """
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    signs = np.asarray(signs, dtype=np.float64)
    tape = a.tape
    _check(
        a.value.ndim == 2 and a.shape[1] == rows.size == cols.size == signs.size,
        tape, "scatter_matrix", a.shape, rows.shape,
    )
    out = np.zeros((a.shape[0], size, size))
    np.add.at(out, (slice(None), rows, cols), a.value * signs)

    def grad_fn(g):
        return (g[:, rows, cols] * signs,)

    return _node(tape, out, (a,), grad_fn, "scatter_matrix")


def bmv(A: Var, v: Var, transpose_a: bool = False) -> Var:
    """Batched matrix-vector product ``A[b] @ v[b]`` (or ``A[b].T @ v[b]``)."""
    tape = _tape_of(A, v)
    A, v = _lift(tape, A), _lift(tape, v)
    M, x = A.value, v.value
    _check(
        M.ndim == 3 and x.ndim == 2 and M.shape[0] == x.shape[0]
        and M.shape[1] == M.shape[2] == x.shape[1],
        tape, "bmv", M.shape, x.shape,
    )
    if transpose_a:
        out = np.einsum("bji,bj->bi", M, x)

        def grad_fn(g):
            return np.einsum("bj,bi->bji", x, g), np.einsum("bji,bi->bj", M, g)
    else:
        out = np.einsum("bij,bj->bi", M, x)

        def grad_fn(g):
            return np.einsum("bi,bj->bij", g, x), np.einsum("bij,bi->bj", M, g)

    return _node(tape, out, (A, v), grad_fn, "bmv")


def linear(x, W: Var, b: Var) -> Var:
    """Affine map ``x @ W.T + b`` for a batch of row vectors."""
    return add(matmul(x, transpose(W)), b)
