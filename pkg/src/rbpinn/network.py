"""Fully connected surrogate network built as an autodiff expression."""

from __future__ import annotations

import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .binio import CorruptHeaderError, Reader, Writer

MODEL_MAGIC = b"RBPINNMD"
MODEL_VERSION = 1
NO_SEED = 2**64 - 1

ACTIVATIONS = ("tanh", "identity")

INPUT_NAMES = {2: ("x", "z", "t"), 3: ("x", "y", "z", "t")}
OUTPUT_NAMES = {2: ("vx", "vz", "p", "T", "Tbar"), 3: ("vx", "vy", "vz", "p", "T", "Tbar")}


@dataclass(frozen=True)
class Architecture:
    """Layer sizes ``(n0, n1, ..., n_l, n_u)`` and the network-wide activation."""

    sizes: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 3:
            raise ValueError("need an input layer, at least one hidden layer and an output layer")
        if min(self.sizes) < 1:
            raise ValueError(f"layer sizes must be positive: {self.sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")

    @classmethod
    def mlp(cls, n_in: int, width: int, depth: int, n_out: int, activation: str = "tanh"):
        return cls((n_in,) + (width,) * depth + (n_out,), activation)

    @property
    def hidden_layers(self) -> int:
        return len(self.sizes) - 2

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    @property
    def spatial_dim(self) -> int:
        return self.sizes[0] - 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.sizes[:-1], self.sizes[1:]))


def param_count(arch: Architecture) -> tuple[int, int]:
    """Number of weights, and of weights plus biases."""
    weights = sum(a * b for a, b in arch.layer_shapes())
    with_biases = sum((a + 1) * b for a, b in arch.layer_shapes())
    return weights, with_biases


@dataclass
class Parameters:
    """Weights ``W[l]`` of shape (n_{l-1}, n_l) and biases ``b[l]`` of shape (n_l,)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None

    def check(self, arch: Architecture) -> None:
        shapes = arch.layer_shapes()
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ad.ShapeError("parameter count does not match the architecture")
        for l, ((n_in, n_out), W, b) in enumerate(zip(shapes, self.weights, self.biases), 1):
            if W.shape != (n_in, n_out) or b.shape != (n_out,):
                raise ad.ShapeError(f"layer {l}: W {W.shape}, b {b.shape}, expected ({n_in}, {n_out})")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite entries")

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for l, (W, b) in enumerate(zip(self.weights, self.biases), 1):
            out[f"W{l}"] = W
            out[f"b{l}"] = b
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, np.ndarray], seed: int | None = None) -> "Parameters":
        n = len([k for k in d if k.startswith("W")])
        return cls([np.asarray(d[f"W{l}"]) for l in range(1, n + 1)],
                   [np.asarray(d[f"b{l}"]).reshape(-1) for l in range(1, n + 1)], seed)

    def copy(self) -> "Parameters":
        return Parameters([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.seed)

    @property
    def n_weights(self) -> int:
        return sum(W.size for W in self.weights)


def xavier_init(arch: Architecture, seed: int) -> Parameters:
    """Glorot-uniform weights on ``[-sqrt(6/(n_in+n_out)), +sqrt(6/(n_in+n_out))]``, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in arch.layer_shapes():
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return Parameters(weights, biases, seed)


def param_nodes(arch: Architecture) -> list[tuple[ad.Expr, ad.Expr]]:
    return [(ad.param(f"W{l}", (a, b)), ad.param(f"b{l}", (1, b)))
            for l, (a, b) in enumerate(arch.layer_shapes(), 1)]


def forward(arch: Architecture, inputs: Sequence[ad.Expr],
            ranges: Sequence[tuple[float, float]] | None = None) -> ad.Expr:
    """Graph of the network output (N, n_u) over the given input variables.

    ``ranges`` maps each input coordinate affinely from ``(lo, hi)`` onto
    ``[-1, 1]`` before the first layer; ``None`` feeds the raw coordinates.
    """
    inputs = list(inputs)
    if len(inputs) != arch.n_in:
        raise ad.ShapeError(f"architecture takes {arch.n_in} inputs, got {len(inputs)}")
    cols = []
    for j, x in enumerate(inputs):
        if ranges is None:
            cols.append(x)
            continue
        lo, hi = ranges[j]
        s = 2.0 / (hi - lo)
        cols.append(ad.add(ad.scale(x, s), ad.const(-1.0 - s * lo)))
    a = ad.stack(cols) if len(cols) > 1 else cols[0]
    layers = param_nodes(arch)
    for l, (W, b) in enumerate(layers):
        a = ad.affine(a, W, b)
        if l < len(layers) - 1 and arch.activation == "tanh":
            a = ad.tanh(a)
    return a


@dataclass
class Surrogate:
    """A network together with its input normalization and variable names."""

    arch: Architecture
    params: Parameters
    ranges: list[tuple[float, float]]
    input_names: tuple[str, ...] = ()
    output_names: tuple[str, ...] = ()

    def __post_init__(self):
        d = self.arch.spatial_dim
        if not self.input_names:
            self.input_names = INPUT_NAMES.get(d, tuple(f"x{i}" for i in range(self.arch.n_in)))
        if not self.output_names:
            self.output_names = OUTPUT_NAMES.get(d, tuple(f"u{i}" for i in range(self.arch.n_out)))
        if len(self.ranges) != self.arch.n_in:
            raise ValueError("one normalization range per input is required")
        for lo, hi in self.ranges:
            if not hi > lo:
                raise ValueError(f"degenerate input range ({lo}, {hi})")
        self.params.check(self.arch)

    @classmethod
    def create(cls, arch: Architecture, ranges, seed: int, **kw) -> "Surrogate":
        return cls(arch, xavier_init(arch, seed), [tuple(map(float, r)) for r in ranges], **kw)

    def inputs(self, suffix: str = "") -> list[ad.Expr]:
        return [ad.input_var(n + suffix) for n in self.input_names]

    def expr(self, inputs: Sequence[ad.Expr] | None = None) -> ad.Expr:
        return forward(self.arch, inputs if inputs is not None else self.inputs(), self.ranges)

    def fields(self, inputs: Sequence[ad.Expr] | None = None) -> dict[str, ad.Expr]:
        out = self.expr(inputs)
        return {name: ad.col(out, j) for j, name in enumerate(self.output_names)}

    def predict(self, coords: np.ndarray, batch: int = 20000, threads: int = 1) -> np.ndarray:
        """Network outputs at ``coords`` of shape (N, n_in); returns (N, n_u).

        Chunks are fixed by ``batch``, so the result does not depend on ``threads``.
        """
        coords = np.asarray(coords, dtype=np.float64)
        params = self.params.as_dict()
        out = np.empty((coords.shape[0], self.arch.n_out))
        starts = list(range(0, coords.shape[0], batch))

        def work(lo_hi):
            prog = ad.Program([self.expr()])
            for s in lo_hi:
                chunk = coords[s : s + batch]
                b = ad.Bindings({n: chunk[:, j] for j, n in enumerate(self.input_names)}, params)
                out[s : s + batch] = prog.evaluate(b)[0]

        threads = max(1, min(int(threads), len(starts)))
        if threads == 1:
            work(starts)
        else:
            with ThreadPoolExecutor(threads) as pool:
                list(pool.map(work, [starts[i::threads] for i in range(threads)]))
        return out

    # ------------------------------------------------------------ file format

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        w = Writer(buf)
        w.magic(MODEL_MAGIC, MODEL_VERSION)
        w.u32(len(self.arch.sizes))
        for s in self.arch.sizes:
            w.u32(s)
        w.text(self.arch.activation)
        w.u64(NO_SEED if self.params.seed is None else self.params.seed)
        for name, (lo, hi) in zip(self.input_names, self.ranges):
            w.text(name)
            w.f64(lo)
            w.f64(hi)
        for name in self.output_names:
            w.text(name)
        for W, b in zip(self.params.weights, self.params.biases):
            w.array(W)
            w.array(b)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, what: str = "model") -> "Surrogate":
        r = Reader(data, what)
        r.magic(MODEL_MAGIC, MODEL_VERSION)
        n = r.u32()
        if not 3 <= n <= 4096:
            raise CorruptHeaderError(f"{what}: implausible layer count {n}")
        sizes = tuple(r.u32() for _ in range(n))
        activation = r.text()
        if activation not in ACTIVATIONS:
            raise CorruptHeaderError(f"{what}: unknown activation {activation!r}")
        seed = r.u64()
        names, ranges = [], []
        for _ in range(sizes[0]):
            names.append(r.text())
            ranges.append((r.f64(), r.f64()))
        outs = tuple(r.text() for _ in range(sizes[-1]))
        arch = Architecture(sizes, activation)
        weights, biases = [], []
        for a, b in arch.layer_shapes():
            weights.append(r.array((a, b)))
            biases.append(r.array((b,)))
        r.done()
        params = Parameters(weights, biases, None if seed == NO_SEED else seed)
        return cls(arch, params, ranges, tuple(names), outs)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Surrogate":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), what=str(path))
