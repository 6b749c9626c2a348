"""Evaluation and reverse-mode differentiation of expression graphs."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .. import kernels as K
from .expr import BindingError, Expr, ShapeError, topological


@dataclass
class Bindings:
    """Values for the free variables of a graph.

    ``inputs`` maps input names to arrays of shape (N, cols) (1-D accepted for
    single-column inputs); ``params`` maps parameter names to arrays of their
    declared shape (1-D accepted for row-vector parameters).
    """

    inputs: Mapping[str, np.ndarray] = field(default_factory=dict)
    params: Mapping[str, np.ndarray] = field(default_factory=dict)


def _as_input(name: str, cols: int, value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim == 1:
        if cols != 1:
            raise ShapeError(f"input {name!r} expects {cols} columns, got a 1-D array")
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != cols:
        raise ShapeError(f"input {name!r} expects (N, {cols}), got {arr.shape}")
    return arr


def _as_param(name: str, shape: tuple, value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 1 and shape[0] == 1:
        arr = arr.reshape(1, -1)
    if arr.shape != shape:
        raise ShapeError(f"parameter {name!r} expects {shape}, got {arr.shape}")
    return arr


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


class Program:
    """A compiled, reusable evaluation order for a set of output expressions."""

    def __init__(self, outputs: Sequence[Expr]):
        self.outputs = list(outputs)
        self.order = topological(self.outputs)
        self.slot = {node.uid: i for i, node in enumerate(self.order)}
        self.arg_slots = [tuple(self.slot[a.uid] for a in node.args) for node in self.order]
        has_param = []
        for node, args in zip(self.order, self.arg_slots):
            has_param.append(node.kind == "param" or any(has_param[j] for j in args))
        self.has_param = has_param
        self.inputs = {n.attr[0]: n.attr[1] for n in self.order if n.kind == "input"}
        self.params = {n.attr[0]: n.attr[1] for n in self.order if n.kind == "param"}

    def __len__(self) -> int:
        return len(self.order)

    def count(self, kind: str) -> int:
        return sum(1 for n in self.order if n.kind == kind)

    def index(self, node: Expr) -> int:
        return self.slot[node.uid]

    # ------------------------------------------------------------ forward

    def forward(self, b: Bindings) -> list:
        vals: list = [None] * len(self.order)
        for i, (node, args) in enumerate(zip(self.order, self.arg_slots)):
            k = node.kind
            try:
                if k == "input":
                    name, cols = node.attr
                    if name not in b.inputs:
                        raise BindingError(f"unbound input {name!r}")
                    v = _as_input(name, cols, b.inputs[name])
                elif k == "param":
                    name, shape = node.attr
                    if name not in b.params:
                        raise BindingError(f"unbound parameter {name!r}")
                    v = _as_param(name, shape, b.params[name])
                elif k == "const":
                    v = node.attr
                elif k == "affine":
                    v = vals[args[0]] @ vals[args[1]]
                    v += vals[args[2]]
                elif k == "matmul":
                    v = vals[args[0]] @ vals[args[1]]
                elif k == "mul":
                    v = vals[args[0]] * vals[args[1]]
                elif k == "add":
                    v = vals[args[0]] + vals[args[1]]
                elif k == "sub":
                    v = vals[args[0]] - vals[args[1]]
                elif k == "scale":
                    v = node.attr * vals[args[0]]
                elif k == "tanh":
                    v = K.tanh_forward(vals[args[0]])
                elif k == "omsq":
                    v = K.omsq_forward(vals[args[0]])
                elif k == "col":
                    j = node.attr
                    v = vals[args[0]][:, j : j + 1]
                elif k == "stack":
                    parts = [vals[j] for j in args]
                    rows = max(p.shape[0] for p in parts)
                    v = np.concatenate([np.broadcast_to(p, (rows, 1)) for p in parts], axis=1)
                elif k == "mean":
                    v = np.array([[vals[args[0]].mean()]])
                elif k == "powi":
                    v = vals[args[0]] ** node.attr
                elif k == "sin":
                    v = np.sin(vals[args[0]])
                elif k == "cos":
                    v = np.cos(vals[args[0]])
                elif k == "exp":
                    v = np.exp(vals[args[0]])
                elif k == "source":
                    fn = node.attr[0]
                    v = np.asarray(fn(*[vals[j][:, 0] for j in args]), dtype=np.float64).reshape(-1, 1)
                elif k == "abs":
                    v = np.abs(vals[args[0]])
                elif k == "deadzone":
                    v = np.maximum(np.abs(vals[args[0]]) - node.attr, 0.0)
                else:  # pragma: no cover - guarded by construction helpers
                    raise ShapeError(f"unknown node kind {k!r}")
            except ValueError as exc:
                raise ShapeError(f"{node!r}: {exc}") from exc
            vals[i] = v
        return vals

    def evaluate(self, b: Bindings) -> list[np.ndarray]:
        vals = self.forward(b)
        return [vals[self.slot[o.uid]] for o in self.outputs]

    # ------------------------------------------------------------ reverse

    def backward(self, vals: list, root: Expr) -> dict[str, np.ndarray]:
        """Reverse sweep from the scalar ``root``; returns parameter gradients."""
        r = self.slot[root.uid]
        if vals[r].shape != (1, 1):
            raise ShapeError(f"gradient root must be scalar, got shape {vals[r].shape}")
        n = len(self.order)
        adj: list = [None] * n
        owned = [False] * n
        adj[r] = np.ones((1, 1))
        has_param = self.has_param

        def acc(j: int, g: np.ndarray) -> None:
            if not has_param[j]:
                return
            g = _unbroadcast(g, vals[j].shape)
            cur = adj[j]
            if cur is None:
                adj[j] = g
            elif owned[j]:
                cur += g
            else:
                adj[j] = cur + g
                owned[j] = True

        grads: dict[str, np.ndarray] = {}
        for i in range(r, -1, -1):
            g = adj[i]
            if g is None:
                continue
            node = self.order[i]
            k = node.kind
            args = self.arg_slots[i]
            if k == "param":
                grads[node.attr[0]] = g if owned[i] else g.copy()
            elif k in ("affine", "matmul"):
                x, W = vals[args[0]], vals[args[1]]
                if has_param[args[0]]:
                    acc(args[0], g @ W.T)
                if has_param[args[1]]:
                    gx = g if x.shape[0] == g.shape[0] else g.sum(axis=0, keepdims=True)
                    acc(args[1], x.T @ gx)
                if k == "affine" and has_param[args[2]]:
                    acc(args[2], g.sum(axis=0, keepdims=True))
            elif k == "mul":
                a, b_ = vals[args[0]], vals[args[1]]
                if a.shape == b_.shape == g.shape:
                    ga, gb = K.mul_backward(g, a, b_)
                else:
                    ga, gb = g * b_, g * a
                acc(args[0], ga)
                acc(args[1], gb)
            elif k == "add":
                acc(args[0], g)
                acc(args[1], g)
            elif k == "sub":
                acc(args[0], g)
                if has_param[args[1]]:
                    acc(args[1], -g)
            elif k == "scale":
                acc(args[0], node.attr * g)
            elif k == "tanh":
                acc(args[0], K.tanh_backward(g, vals[i]))
            elif k == "omsq":
                acc(args[0], K.omsq_backward(g, vals[args[0]]))
            elif k == "col":
                j = args[0]
                if has_param[j]:
                    shape = vals[j].shape
                    full = np.zeros((max(shape[0], g.shape[0]), shape[1]))
                    full[:, node.attr : node.attr + 1] = g
                    acc(j, full)
            elif k == "stack":
                for c, j in enumerate(args):
                    acc(j, g[:, c : c + 1])
            elif k == "mean":
                a = vals[args[0]]
                acc(args[0], np.broadcast_to(g / a.size, a.shape))
            elif k == "powi":
                p = node.attr
                a = vals[args[0]]
                acc(args[0], (p * a ** (p - 1)) * g)
            elif k == "sin":
                acc(args[0], np.cos(vals[args[0]]) * g)
            elif k == "cos":
                acc(args[0], -np.sin(vals[args[0]]) * g)
            elif k == "exp":
                acc(args[0], vals[i] * g)
            elif k == "abs":
                acc(args[0], np.sign(vals[args[0]]) * g)
            elif k == "deadzone":
                a = vals[args[0]]
                acc(args[0], np.where(np.abs(a) > node.attr, np.sign(a), 0.0) * g)
            # const / input / source carry no parameters
        for name, shape in self.params.items():
            if name not in grads:
                grads[name] = np.zeros(shape)
        return grads

    def value_and_grad(self, b: Bindings, root: Expr | None = None):
        """Forward pass plus gradients of scalar ``root`` (default: first output).

        Returns ``(vals, grads)`` where ``vals`` is the full list of node values
        (index it with :meth:`index`) and ``grads`` maps parameter names to
        arrays shaped like the bound parameters.
        """
        root = self.outputs[0] if root is None else root
        vals = self.forward(b)
        grads = self.backward(vals, root)
        for name, g in grads.items():
            bound = np.asarray(b.params[name])
            if bound.shape != g.shape:
                grads[name] = g.reshape(bound.shape)
        return vals, grads


def tree_sum(items: list):
    """Pairwise reduction in a fixed order (deterministic for a given length)."""
    items = list(items)
    if not items:
        raise ValueError("nothing to reduce")
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def chunked_value_and_grad(program: Program, chunks: Sequence[tuple[Bindings, float]],
                           root: Expr | None = None, threads: int = 1):
    """Evaluate several weighted binding chunks and combine them.

    Each chunk's root value and gradients are scaled by its weight and the
    results are combined with :func:`tree_sum`, so the outcome depends only on
    the chunk list, not on ``threads``.
    """
    def one(item):
        b, w = item
        vals, grads = program.value_and_grad(b, root)
        r = program.index(program.outputs[0] if root is None else root)
        return w * vals[r][0, 0], {k: w * v for k, v in grads.items()}

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, chunks))
    else:
        results = [one(c) for c in chunks]
    value = tree_sum([r[0] for r in results])
    names = results[0][1].keys()
    grads = {k: tree_sum([r[1][k] for r in results]) for k in names}
    return value, grads


def evaluate(expr: Expr, b: Bindings) -> np.ndarray:
    """Value of ``expr`` under ``b``."""
    return Program([expr]).evaluate(b)[0]


def grad_params(scalar: Expr, b: Bindings) -> dict[str, np.ndarray]:
    """Reverse-mode gradient of a scalar expression with respect to every parameter."""
    if scalar.shape != (1, 1):
        raise ShapeError(f"grad_params needs a scalar expression, got shape {scalar.shape}")
    prog = Program([scalar])
    _, grads = prog.value_and_grad(b)
    return grads
