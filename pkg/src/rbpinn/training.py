"""Composite loss, Adam and the cyclic training loop."""

from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .binio import CorruptHeaderError, Reader, Writer
from .dataset import BatchStream, LabelSet, TrainingSet
from .errors import ConfigError, NumericAbort
from .network import Architecture, Parameters, Surrogate
from .physics import FluidParams, Forcing, build_residuals, consistency_Tbar, equation_names

MODES = ("pinn", "relaxed", "plain")
DIV_FORMS = ("weight", "deadzone")
RESIDUAL_COLUMNS = ("pde_T", "pde_Tbar", "pde_mx", "pde_my", "pde_mz", "pde_div")
HISTORY_COLUMNS = ("iteration", "epoch", "cycle", "lr", "total", "label") + RESIDUAL_COLUMNS + ("wall_ms",)

DEFAULT_EPOCHS = (50, 62, 138, 309, 309, 309, 160)
DEFAULT_LR = (1e-3, 6.683e-4, 2.992e-4, 1.337e-4, 5.98e-5, 1e-5, 1e-6)


# ---------------------------------------------------------------- configuration


@dataclass
class LossConfig:
    """Weights of the composite loss.

    ``weights`` holds per-equation residual weights keyed by equation name
    (``T``, ``Tbar``, ``mx``, ``my``, ``mz``, ``div``); missing equations get 1.
    In ``plain`` mode no residual is built and every residual weight is 0.
    ``lambda_identity`` adds the mean of ``(T + Tbar - 1)**2`` at the residual
    points; that experimental term is not part of the logged decomposition.
    """

    mode: str = "pinn"
    lambda_label: float = 1.0
    weights: dict[str, float] = field(default_factory=dict)
    div_form: str = "weight"
    tau: float = 0.0
    lambda_identity: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.div_form not in DIV_FORMS:
            raise ConfigError(f"div_form must be one of {DIV_FORMS}")
        if self.mode == "relaxed" and "div" not in self.weights:
            self.weights = {**self.weights, "div": 0.1}
        unknown = set(self.weights) - {"T", "Tbar", "mx", "my", "mz", "div"}
        if unknown:
            raise ConfigError(f"unknown equation weight(s) {sorted(unknown)}")
        vals = [self.lambda_label, self.tau, self.lambda_identity, *self.weights.values()]
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ConfigError("loss weights must be finite and non-negative")
        if self.mode == "pinn" and len(set(self.weight(e) for e in ("T", "Tbar", "mx", "my", "mz", "div"))) > 1:
            raise ConfigError("standard mode uses one weight for every residual; use mode 'relaxed' otherwise")
        if self.mode == "relaxed" and not self.weight("div") < 1.0 and self.div_form == "weight":
            raise ConfigError("relaxed mode needs a divergence weight below 1")

    @classmethod
    def standard(cls) -> "LossConfig":
        return cls("pinn")

    @classmethod
    def relaxed(cls, lambda_div: float = 0.1, div_form: str = "weight", tau: float = 0.0) -> "LossConfig":
        return cls("relaxed", weights={"div": lambda_div}, div_form=div_form, tau=tau)

    @classmethod
    def plain(cls) -> "LossConfig":
        return cls("plain")

    def weight(self, eq: str) -> float:
        if self.mode == "plain":
            return 0.0
        return float(self.weights.get(eq, 1.0))


@dataclass
class Schedule:
    """Ordered ``(epochs, learning rate)`` cycles plus Adam constants."""

    cycles: list[tuple[int, float]] = field(default_factory=lambda: list(zip(DEFAULT_EPOCHS, DEFAULT_LR)))
    MB: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8

    def __post_init__(self):
        self.cycles = [(int(e), float(lr)) for e, lr in self.cycles]
        if not self.cycles:
            raise ConfigError("a schedule needs at least one cycle")
        for e, lr in self.cycles:
            if e < 0 or not lr > 0:
                raise ConfigError(f"bad cycle ({e}, {lr})")
        lrs = [lr for _, lr in self.cycles]
        if any(b > a for a, b in zip(lrs, lrs[1:])):
            raise ConfigError("learning rates must be non-increasing across cycles")
        if self.MB < 1 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.delta > 0):
            raise ConfigError("bad minibatch size or Adam constants")

    @property
    def total_epochs(self) -> int:
        return sum(e for e, _ in self.cycles)

    def scaled(self, total_epochs: int) -> "Schedule":
        """Same learning rates with epochs rescaled to ``total_epochs`` (each cycle >= 1)."""
        tot = self.total_epochs
        epochs = [max(1, int(round(e * total_epochs / tot))) for e, _ in self.cycles]
        return Schedule([(e, lr) for e, (_, lr) in zip(epochs, self.cycles)], self.MB, self.beta1,
                        self.beta2, self.delta)


# ---------------------------------------------------------------- loss graph


@dataclass
class LossGraph:
    program: ad.Program
    total: ad.Expr
    label: ad.Expr
    pde: dict[str, ad.Expr]
    identity: ad.Expr | None
    label_inputs: list[str]
    residual_inputs: list[str]
    n_channels: int


def label_loss(pred: ad.Expr, values: ad.Expr, mask: ad.Expr) -> ad.Expr:
    """Masked MSE: batch mean of the squared errors summed over observed channels."""
    n = pred.shape[1]
    err = ad.mul(mask, ad.sub(pred, values))
    return ad.scale(ad.mean(ad.square(err)), float(n))


def pde_terms(residuals: Mapping[str, ad.Expr], cfg: LossConfig) -> dict[str, ad.Expr]:
    """Unweighted per-equation mean-square residuals (dead-zone form for ``div`` if selected)."""
    out = {}
    for eq, r in residuals.items():
        if eq == "div" and cfg.div_form == "deadzone":
            r = ad.deadzone(r, cfg.tau)
        out[eq] = ad.mean(ad.square(r))
    return out


def pde_loss(terms: Mapping[str, ad.Expr], cfg: LossConfig) -> ad.Expr | None:
    """Weighted sum of the per-equation terms."""
    total = None
    for eq, term in terms.items():
        w = cfg.weight(eq)
        if w == 0.0:
            continue
        t = ad.scale(term, w)
        total = t if total is None else ad.add(total, t)
    return total


def build_loss(model: Surrogate, fp: FluidParams, cfg: LossConfig, forcing: Forcing | None = None) -> LossGraph:
    names = model.input_names
    lab_in = [ad.input_var(n + "_L") for n in names]
    n_u = model.arch.n_out
    values = ad.input_var("label_values", n_u)
    mask = ad.input_var("label_mask", n_u)
    label = label_loss(model.expr(lab_in), values, mask)
    total = label if cfg.lambda_label == 1.0 else ad.scale(label, cfg.lambda_label)
    pde: dict[str, ad.Expr] = {}
    identity = None
    res_names: list[str] = []
    if cfg.mode != "plain":
        res_in = [ad.input_var(n + "_R") for n in names]
        res_names = [n + "_R" for n in names]
        fields = model.fields(res_in)
        rs = build_residuals(fields, dict(zip(names, res_in)), fp, forcing)
        pde = pde_terms(rs.residuals, cfg)
        for eq, term in pde.items():
            w = cfg.weight(eq)
            if w:
                total = ad.add(total, ad.scale(term, w))
        if cfg.lambda_identity:
            identity = ad.mean(ad.square(consistency_Tbar(fields)))
            total = ad.add(total, ad.scale(identity, cfg.lambda_identity))
    outputs = [total, label] + list(pde.values()) + ([identity] if identity is not None else [])
    return LossGraph(ad.Program(outputs), total, label, pde, identity,
                     [n + "_L" for n in names], res_names, n_u)


def batch_bindings(lg: LossGraph, params: Mapping[str, np.ndarray], labels: LabelSet,
                   residual: np.ndarray | None) -> ad.Bindings:
    inputs = {name: labels.coords[:, j] for j, name in enumerate(lg.label_inputs)}
    inputs["label_values"] = labels.values
    inputs["label_mask"] = labels.mask.astype(np.float64)
    if lg.residual_inputs:
        for j, name in enumerate(lg.residual_inputs):
            inputs[name] = residual[:, j]
    return ad.Bindings(inputs, params)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, delta: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise ad.ShapeError(f"gradient of {k!r} has shape {g.shape}, parameter {p.shape}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + delta)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


# ---------------------------------------------------------------- history


@dataclass
class LossHistory:
    rows: list[tuple] = field(default_factory=list)

    def append(self, row: tuple) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        j = HISTORY_COLUMNS.index(name)
        return np.array([r[j] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.rows:
            w.writerow([r[0], r[1], r[2]] + [repr(float(v)) for v in r[3:-1]] + [r[-1]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LossHistory":
        rd = csv.reader(io.StringIO(text))
        header = tuple(next(rd))
        if header != HISTORY_COLUMNS:
            raise CorruptHeaderError(f"unexpected history columns {header}")
        rows = []
        try:
            for rec in rd:
                rows.append((int(rec[0]), int(rec[1]), int(rec[2]), *[float(v) for v in rec[3:-1]], int(rec[-1])))
        except (ValueError, IndexError) as exc:
            raise CorruptHeaderError(f"malformed history row {len(rows) + 1}") from exc
        return cls(rows)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LossHistory":
        with open(path, encoding="utf-8") as fh:
            return cls.from_csv(fh.read())


def recompute_total(row: Sequence, cfg: LossConfig, dim: int) -> float:
    """Total loss from the logged parts (same summation order as the loss graph)."""
    d = dict(zip(HISTORY_COLUMNS, row))
    total = d["label"] if cfg.lambda_label == 1.0 else cfg.lambda_label * d["label"]
    if cfg.mode != "plain":
        for eq in equation_names(dim):
            w = cfg.weight(eq)
            if w:
                total = total + w * d["pde_" + eq]
    return total


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"RBPINNCK"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    model: Surrogate
    adam: AdamState
    history: LossHistory
    cycles_done: int
    epochs_done: int
    iteration: int
    meta: dict

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        w = Writer(buf)
        w.magic(CKPT_MAGIC, CKPT_VERSION)
        w.text(json.dumps(self.meta, sort_keys=True))
        w.u32(self.cycles_done)
        w.u64(self.epochs_done)
        w.u64(self.iteration)
        w.u64(self.adam.step)
        mb = self.model.to_bytes()
        w.u64(len(mb))
        w.raw(mb)
        for k in self.model.params.as_dict():
            w.text(k)
            w.array(self.adam.m[k])
            w.array(self.adam.v[k])
        w.text(self.history.to_csv())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, what: str = "checkpoint") -> "Checkpoint":
        r = Reader(data, what)
        r.magic(CKPT_MAGIC, CKPT_VERSION)
        meta = json.loads(r.text())
        cycles_done = r.u32()
        epochs_done, iteration, step = r.u64(), r.u64(), r.u64()
        n = r.u64()
        model = Surrogate.from_bytes(r.raw(n), what)
        m, v = {}, {}
        for k, p in model.params.as_dict().items():
            name = r.text()
            if name != k:
                raise CorruptHeaderError(f"{what}: optimizer state for {name!r}, expected {k!r}")
            m[k] = r.array(p.shape)
            v[k] = r.array(p.shape)
        history = LossHistory.from_csv(r.text(limit=1 << 31))
        r.done()
        return cls(model, AdamState(m, v, step), history, cycles_done, epochs_done, iteration, meta)

    def save(self, path: str | os.PathLike) -> None:
        tmp = str(path) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), str(path))


# ---------------------------------------------------------------- training loop


@dataclass
class TrainResult:
    model: Surrogate
    history: LossHistory
    checkpoints: list[str]
    adam: AdamState


def _params_of(model: Surrogate, d: Mapping[str, np.ndarray]) -> Parameters:
    return Parameters.from_dict(d, model.params.seed)


def train(ts: TrainingSet, arch: Architecture, fp: FluidParams, cfg: LossConfig, sched: Schedule, seed: int,
          *, forcing: Forcing | None = None, checkpoint_dir: str | os.PathLike | None = None,
          resume: str | os.PathLike | Checkpoint | None = None, log_wall_time: bool = False,
          stop_after_cycles: int | None = None,
          on_cycle: Callable[[int, LossHistory], None] | None = None) -> TrainResult:
    """Run the schedule's cycles; one label batch and one residual batch per iteration.

    The network is initialized from ``seed`` and batches are drawn from a
    :class:`BatchStream` seeded with ``seed``; resuming from a checkpoint
    therefore reproduces the uninterrupted run exactly. ``stop_after_cycles``
    ends the run early (used to simulate an interruption).
    """
    if arch.n_in != ts.dim + 1:
        raise ConfigError(f"architecture takes {arch.n_in} inputs, training set is {ts.dim}-D")
    if arch.n_out != len(ts.labels.channels):
        raise ConfigError(f"architecture has {arch.n_out} outputs, labels have {len(ts.labels.channels)} channels")
    meta = {"seed": int(seed), "n_L": ts.n_L, "n_R": ts.n_R, "MB": sched.MB, "mode": cfg.mode,
            "cycles": [[e, lr] for e, lr in sched.cycles], "sizes": list(arch.sizes)}
    if resume is not None:
        ck = resume if isinstance(resume, Checkpoint) else Checkpoint.load(resume)
        if ck.meta != meta:
            raise ConfigError("checkpoint was written by a run with a different configuration")
        model, adam, history = ck.model, ck.adam, ck.history
        start_cycle, epoch, it = ck.cycles_done, ck.epochs_done, ck.iteration
    else:
        model = Surrogate.create(arch, ts.ranges(), seed)
        adam = AdamState.zeros(model.params.as_dict())
        history = LossHistory()
        start_cycle, epoch, it = 0, 0, 0
    lg = build_loss(model, fp, cfg, forcing)
    prog = lg.program
    idx_total, idx_label = prog.index(lg.total), prog.index(lg.label)
    idx_pde = {eq: prog.index(e) for eq, e in lg.pde.items()}
    pinn = cfg.mode != "plain"
    stream = BatchStream(ts.n_L, ts.n_R if pinn else max(ts.n_R, sched.MB, ts.n_L), sched.MB, seed)
    params = model.params.as_dict()
    saved: list[str] = []
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
    for ci in range(start_cycle, len(sched.cycles)):
        if stop_after_cycles is not None and ci >= stop_after_cycles:
            break
        epochs, lr = sched.cycles[ci]
        for _ in range(epochs):
            for li, ri in stream.epoch(epoch):
                t0 = time.perf_counter() if log_wall_time else 0.0
                res = ts.residual[ri] if pinn else None
                b = batch_bindings(lg, params, ts.labels.take(li), res)
                vals, grads = prog.value_and_grad(b, lg.total)
                total = float(vals[idx_total][0, 0])
                label = float(vals[idx_label][0, 0])
                parts = {eq: float(vals[j][0, 0]) for eq, j in idx_pde.items()}
                _check_finite(it, total, label, parts, grads)
                params, adam = adam_step(params, grads, adam, lr, sched.beta1, sched.beta2, sched.delta)
                wall = int(round((time.perf_counter() - t0) * 1000)) if log_wall_time else 0
                history.append((it, epoch, ci + 1, lr, total, label,
                                *[parts.get(c[4:], 0.0) for c in RESIDUAL_COLUMNS], wall))
                it += 1
            epoch += 1
        model = Surrogate(model.arch, _params_of(model, params), model.ranges, model.input_names,
                          model.output_names)
        if checkpoint_dir is not None:
            path = os.path.join(str(checkpoint_dir), f"cycle{ci + 1}.ckpt")
            Checkpoint(model, adam, history, ci + 1, epoch, it, meta).save(path)
            saved.append(path)
        if on_cycle is not None:
            on_cycle(ci + 1, history)
    model = Surrogate(model.arch, _params_of(model, params), model.ranges, model.input_names, model.output_names)
    return TrainResult(model, history, saved, adam)


def _check_finite(it: int, total: float, label: float, parts: Mapping[str, float], grads) -> None:
    terms = {"label": label, **{"pde_" + k: v for k, v in parts.items()}, "total": total}
    for name, v in terms.items():
        if not np.isfinite(v):
            raise NumericAbort(f"non-finite loss term {name} at iteration {it}", it, name)
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericAbort(f"non-finite gradient for {k} at iteration {it}", it, "grad:" + k)


def evaluate_loss(model: Surrogate, ts: TrainingSet, fp: FluidParams, cfg: LossConfig,
                  forcing: Forcing | None = None, chunk: int = 4000) -> dict[str, float]:
    """Loss terms over the complete label and residual sets (chunk-weighted means)."""
    lg = build_loss(model, fp, cfg, forcing)
    prog = lg.program
    params = model.params.as_dict()
    sums = {"label": 0.0, **{eq: 0.0 for eq in lg.pde}}
    # label and residual means are accumulated separately so their chunkings may differ
    for s in range(0, ts.n_L, chunk):
        lab = ts.labels.take(np.arange(s, min(s + chunk, ts.n_L)))
        res = ts.residual[:1] if cfg.mode != "plain" else None
        vals = prog.evaluate(batch_bindings(lg, params, lab, res))
        sums["label"] += float(vals[1][0, 0]) * len(lab)
    if cfg.mode != "plain":
        lab = ts.labels.take(np.arange(1))
        for s in range(0, ts.n_R, chunk):
            res = ts.residual[s : s + chunk]
            vals = prog.evaluate(batch_bindings(lg, params, lab, res))
            for j, eq in enumerate(lg.pde, start=2):
                sums[eq] += float(vals[j][0, 0]) * res.shape[0]
    out = {"label": sums["label"] / ts.n_L}
    for eq in lg.pde:
        out[eq] = sums[eq] / ts.n_R
    total = out["label"] if cfg.lambda_label == 1.0 else cfg.lambda_label * out["label"]
    for eq in lg.pde:
        w = cfg.weight(eq)
        if w:
            total = total + w * out[eq]
    out["total"] = total
    return out
