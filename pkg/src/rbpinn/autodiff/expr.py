"""Expression nodes and the input-derivative graph transform.

Every node evaluates to a 2-D float64 array. The row axis is the batch of
sample points (or 1, meaning "same for every point"); the column axis holds
channels (neurons, output components). Parameters have fixed 2-D shapes.

Nodes are hash-consed: building the same operation on the same operands twice
returns the same object. This is what lets the residual expressions of a PDE
system share one forward pass and one set of derivative chains.
"""

from __future__ import annotations

import itertools
import weakref
from typing import Callable, Sequence

import numpy as np

BATCH = None  # row extent marker for batch-sized values


class AutodiffError(Exception):
    pass


class BindingError(AutodiffError):
    pass


class ShapeError(AutodiffError):
    pass


class DifferentiabilityError(AutodiffError):
    pass


# kinds that depend smoothly on their operands
SMOOTH_KINDS = frozenset(
    {"const", "input", "param", "add", "sub", "mul", "scale", "affine", "matmul",
     "tanh", "omsq", "col", "stack", "mean", "powi", "sin", "cos", "exp"}
)

_uid_counter = itertools.count()
_table: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


class Expr:
    """Immutable graph node. Build through the helper functions, not directly."""

    __slots__ = ("kind", "args", "attr", "shape", "uid", "__weakref__")

    def __init__(self, kind: str, args: tuple, attr, shape: tuple):
        self.kind = kind
        self.args = args
        self.attr = attr
        self.shape = shape
        self.uid = next(_uid_counter)

    def __repr__(self) -> str:
        if self.kind in ("input", "param"):
            return f"{self.kind}({self.attr[0]!r})"
        if self.kind == "const":
            return f"const{self.attr.shape}"
        return f"{self.kind}#{self.uid}"

    # operator sugar, mostly for tests and small hand-built expressions
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, n: int):
        return powi(self, n)

    def __getitem__(self, j: int):
        return col(self, j)


def _intern(kind: str, args: tuple, attr, shape: tuple, attr_key=None) -> Expr:
    key = (kind, tuple(a.uid for a in args), attr if attr_key is None else attr_key)
    node = _table.get(key)
    if node is None:
        node = Expr(kind, args, attr, shape)
        _table[key] = node
    return node


def _wrap(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return const(x)


def _bcast(sa: tuple, sb: tuple, what: str) -> tuple:
    ra, ca = sa
    rb, cb = sb
    if ca != cb and 1 not in (ca, cb):
        raise ShapeError(f"{what}: column mismatch {sa} vs {sb}")
    rows = BATCH if BATCH in (ra, rb) else 1
    return rows, max(ca, cb)


# ---------------------------------------------------------------- leaves

def const(value) -> Expr:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError("constants must be scalars, rows or 2-D")
    arr.setflags(write=False)
    return _intern("const", (), arr, arr.shape, attr_key=(arr.shape, arr.tobytes()))


def input_var(name: str, cols: int = 1) -> Expr:
    return _intern("input", (), (name, cols), (BATCH, cols))


def param(name: str, shape: Sequence[int]) -> Expr:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 1:
        shape = (1, shape[0])
    if len(shape) != 2:
        raise ShapeError("parameters are 1-D or 2-D")
    return _intern("param", (), (name, shape), shape)


def source(fn: Callable[..., np.ndarray], inputs: Sequence[Expr], label: str = "") -> Expr:
    """Externally computed column ``fn(*input_values)``; carries no parameters.

    Used for analytic forcing terms. It has no derivative rule.
    """
    for e in inputs:
        if e.kind != "input":
            raise ShapeError("source operands must be input variables")
    return _intern("source", tuple(inputs), (fn, label), (BATCH, 1), attr_key=(id(fn), label))


# ---------------------------------------------------------------- arithmetic

def add(a: Expr, b: Expr) -> Expr:
    return _intern("add", (a, b), None, _bcast(a.shape, b.shape, "add"))


def sub(a: Expr, b: Expr) -> Expr:
    return _intern("sub", (a, b), None, _bcast(a.shape, b.shape, "sub"))


def mul(a: Expr, b: Expr) -> Expr:
    if a.uid > b.uid:  # commutative: canonical operand order improves sharing
        a, b = b, a
    return _intern("mul", (a, b), None, _bcast(a.shape, b.shape, "mul"))


def scale(a: Expr, c: float) -> Expr:
    c = float(c)
    if c == 1.0:
        return a
    return _intern("scale", (a,), c, a.shape)


def powi(a: Expr, n: int) -> Expr:
    n = int(n)
    if n < 0:
        raise ValueError("only non-negative integer powers")
    if n == 0:
        return const(np.ones((1, a.shape[1])))
    if n == 1:
        return a
    return _intern("powi", (a,), n, a.shape)


def affine(x: Expr, W: Expr, b: Expr) -> Expr:
    """``x @ W + b`` with ``W`` of shape (n_in, n_out) and ``b`` of shape (1, n_out)."""
    if x.shape[1] != W.shape[0]:
        raise ShapeError(f"affine: input width {x.shape[1]} vs weight rows {W.shape[0]}")
    if b.shape != (1, W.shape[1]):
        raise ShapeError(f"affine: bias shape {b.shape} vs (1, {W.shape[1]})")
    return _intern("affine", (x, W, b), None, (x.shape[0], W.shape[1]))


def matmul(x: Expr, W: Expr) -> Expr:
    if x.shape[1] != W.shape[0]:
        raise ShapeError(f"matmul: {x.shape} @ {W.shape}")
    return _intern("matmul", (x, W), None, (x.shape[0], W.shape[1]))


def tanh(a: Expr) -> Expr:
    return _intern("tanh", (a,), None, a.shape)


def sin(a: Expr) -> Expr:
    return _intern("sin", (a,), None, a.shape)


def cos(a: Expr) -> Expr:
    return _intern("cos", (a,), None, a.shape)


def exp(a: Expr) -> Expr:
    return _intern("exp", (a,), None, a.shape)


def one_minus_square(h: Expr) -> Expr:
    """``1 - h**2``; the derivative factor of tanh expressed on its output."""
    return _intern("omsq", (h,), None, h.shape)


def col(a: Expr, j: int) -> Expr:
    j = int(j)
    if not 0 <= j < a.shape[1]:
        raise ShapeError(f"column {j} out of range for {a.shape}")
    if a.shape[1] == 1:
        return a
    return _intern("col", (a,), j, (a.shape[0], 1))


def stack(cols: Sequence[Expr]) -> Expr:
    cols = tuple(cols)
    for c in cols:
        if c.shape[1] != 1:
            raise ShapeError("stack takes single-column operands")
    rows = BATCH if any(c.shape[0] is BATCH for c in cols) else 1
    return _intern("stack", cols, None, (rows, len(cols)))


def mean(a: Expr) -> Expr:
    """Mean over every entry (batch rows and columns) -> (1, 1)."""
    return _intern("mean", (a,), None, (1, 1))


def absolute(a: Expr) -> Expr:
    return _intern("abs", (a,), None, a.shape)


def deadzone(a: Expr, tau: float) -> Expr:
    """``max(0, |a| - tau)``."""
    return _intern("deadzone", (a,), float(tau), a.shape)


def square(a: Expr) -> Expr:
    return mul(a, a)


def zeros_like_shape(shape: tuple) -> Expr:
    return const(np.zeros((1, shape[1])))


# ---------------------------------------------------------------- traversal

def topological(outputs: Sequence[Expr]) -> list[Expr]:
    """Operands-before-users order over everything reachable from ``outputs``."""
    order: list[Expr] = []
    seen: set[int] = set()
    for root in outputs:
        if root.uid in seen:
            continue
        stack_: list[tuple[Expr, int]] = [(root, 0)]
        while stack_:
            node, i = stack_.pop()
            if i < len(node.args):
                stack_.append((node, i + 1))
                child = node.args[i]
                if child.uid not in seen:
                    stack_.append((child, 0))
            elif node.uid not in seen:
                seen.add(node.uid)
                order.append(node)
    return order


def free_inputs(expr: Expr) -> list[str]:
    return sorted({n.attr[0] for n in topological([expr]) if n.kind == "input"})


def free_params(expr: Expr) -> list[str]:
    return sorted({n.attr[0] for n in topological([expr]) if n.kind == "param"})


# ---------------------------------------------------------------- d/d input

def _add0(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return add(a, b)


def _sub0(a, b):
    if b is None:
        return a
    if a is None:
        return scale(b, -1.0)
    return sub(a, b)


def _tangent(node: Expr, t: list, var: str):
    """Pushforward rule. ``t`` holds the tangents of ``node.args`` (None = 0)."""
    k = node.kind
    if k in ("const", "param"):
        return None
    if k == "input":
        name, cols = node.attr
        if name != var:
            return None
        if cols != 1:
            raise ShapeError(f"cannot differentiate with respect to multi-column input {name!r}")
        return const(1.0)
    if k == "add":
        return _add0(t[0], t[1])
    if k == "sub":
        return _sub0(t[0], t[1])
    if k == "mul":
        a, b = node.args
        left = None if t[0] is None else mul(t[0], b)
        right = None if t[1] is None else mul(a, t[1])
        return _add0(left, right)
    if k == "scale":
        return None if t[0] is None else scale(t[0], node.attr)
    if k in ("affine", "matmul"):
        if t[0] is None:
            return None
        return matmul(t[0], node.args[1])
    if k == "tanh":
        if t[0] is None:
            return None
        return mul(one_minus_square(node), t[0])
    if k == "omsq":
        if t[0] is None:
            return None
        h = node.args[0]
        return scale(mul(h, t[0]), -2.0)
    if k == "sin":
        return None if t[0] is None else mul(cos(node.args[0]), t[0])
    if k == "cos":
        return None if t[0] is None else scale(mul(sin(node.args[0]), t[0]), -1.0)
    if k == "exp":
        return None if t[0] is None else mul(node, t[0])
    if k == "col":
        if t[0] is None:
            return None
        # a single-column tangent is broadcast over the primal's columns
        return t[0] if t[0].shape[1] == 1 else col(t[0], node.attr)
    if k == "stack":
        if all(x is None for x in t):
            return None
        return stack([const(0.0) if x is None else x for x in t])
    if k == "mean":
        # a (1, c) tangent broadcast over the batch averages to its own mean
        return None if t[0] is None else mean(t[0])
    if k == "powi":
        if t[0] is None:
            return None
        n = node.attr
        return scale(mul(powi(node.args[0], n - 1), t[0]), float(n))
    raise DifferentiabilityError(f"node kind {k!r} has no input-derivative rule")


def d_input(expr: Expr, var, order: int = 1) -> Expr:
    """Expression for the ``order``-th derivative of ``expr`` with respect to an input.

    ``var`` is an input name or an input node. The result is an ordinary graph
    that still references the parameters, so it can be fed to reverse mode.
    """
    if isinstance(var, Expr):
        if var.kind != "input":
            raise ValueError("differentiation variable must be an input")
        var = var.attr[0]
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    out = expr
    for _ in range(order):
        out = _d_input1(out, var)
    return out


def _d_input1(expr: Expr, var: str) -> Expr:
    tangents: dict[int, Expr | None] = {}
    for node in topological([expr]):
        if node.kind not in SMOOTH_KINDS:
            # a non-smooth node only matters if it actually depends on var
            if any(tangents.get(a.uid) is not None for a in node.args) or (
                node.kind == "source" and any(a.attr[0] == var for a in node.args)
            ):
                raise DifferentiabilityError(
                    f"{node.kind!r} node is not differentiable with respect to {var!r}"
                )
            tangents[node.uid] = None
            continue
        tangents[node.uid] = _tangent(node, [tangents[a.uid] for a in node.args], var)
    result = tangents[expr.uid]
    if result is None:
        return const(np.zeros((1, expr.shape[1])))
    return result
