"""Scaled-down reproduction experiments used by the acceptance suite.

Each function runs end to end (data, training set, training, scoring) and
returns plain dictionaries so results can be logged or compared.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from .dataset import KIND_BULK, PaddingSpec, SnapshotDB, build_trainset, default_faces, make_test_split
from .network import Architecture, Surrogate
from .physics import FluidParams
from .refsolver import ManufacturedSolution, manufactured_db
from .training import LossConfig, Schedule, train

HIDDEN_PARAMS = {"A": 0.5, "P": 2.0}


def scaled_schedule(total_epochs: int, MB: int, lr_factor: float = 1.0) -> Schedule:
    base = Schedule().scaled(total_epochs)
    return Schedule([(e, lr * lr_factor) for e, lr in base.cycles], MB=MB)


def grid_scores(model: Surrogate, db: SnapshotDB, fields=("vx", "vz", "p", "T"),
                mask: np.ndarray | None = None) -> dict[str, M.FieldStats]:
    """Field statistics of ``model`` on every grid point of ``db`` (or the masked ones).

    Pressure is centred per snapshot.
    """
    idx = np.arange(db.size) if mask is None else np.flatnonzero(mask)
    pred = model.predict(db.coords(idx))
    groups = idx // db.points_per_snapshot
    out = {}
    for name in fields:
        j = model.output_names.index(name)
        kind = "pressure" if name == "p" else "scalar"
        out[name] = M.field_stats(pred[:, j], db.values(name, idx), kind, groups if kind == "pressure" else None)
    return out


def shell_mask(db: SnapshotDB, fraction: float = 0.1, temporal: bool = True) -> np.ndarray:
    """Points within ``fraction`` of the box width from any face (time ends included if ``temporal``)."""
    c = db.all_coords()
    near = np.zeros(db.size, dtype=bool)
    for a, (lo, hi) in enumerate(db.box() if temporal else db.extents):
        w = fraction * (hi - lo)
        near |= (c[:, a] <= lo + w + 1e-12) | (c[:, a] >= hi - w - 1e-12)
    return near


# ---------------------------------------------------------------- hidden state


@dataclass
class HiddenStateResult:
    r2: dict[str, float]
    pressure_rel_l2: float
    pressure_rel_l2_global: float
    runtime: float
    epochs: int
    final_total: float
    model: Surrogate = field(repr=False)


def hidden_state(epochs: int = 200, seed: int = 0, MB: int = 100, lr_factor: float = 3.0,
                 n_R: int = 6000) -> HiddenStateResult:
    """Infer velocity and pressure from bulk temperature and boundary velocity only."""
    t0 = time.perf_counter()
    ms = ManufacturedSolution(params=HIDDEN_PARAMS)
    db = manufactured_db(ms, (21, 21), np.linspace(0.0, 1.0, 11))
    ts = build_trainset(db, bulk_T_fraction=1.0, boundary_faces=("x0", "x1", "z0", "z1"), boundary_fraction=1.0,
                        ic_fraction=0.0, n_R=n_R, placement="uniform-random", seed=seed + 1)
    res = train(ts, Architecture.mlp(3, 50, 6, 5), ms.fluid, LossConfig.standard(),
                scaled_schedule(epochs, MB, lr_factor), seed, forcing=ms.forcing())
    # held out: a finer grid at times between the training snapshots
    test = manufactured_db(ms, (33, 33), np.linspace(0.05, 0.95, 7))
    st = grid_scores(res.model, test)
    pred = res.model.predict(test.all_coords())[:, 2]
    groups = np.arange(test.size) // test.points_per_snapshot
    return HiddenStateResult(
        r2={k: v.r2 for k, v in st.items()},
        pressure_rel_l2=M.relative_l2(pred, test.fields["p"].reshape(-1), True, groups),
        pressure_rel_l2_global=M.relative_l2(pred, test.fields["p"].reshape(-1), True),
        runtime=time.perf_counter() - t0,
        epochs=res.history.rows[-1][1] + 1,
        final_total=res.history.rows[-1][4],
        model=res.model,
    )


# ---------------------------------------------------------------- padding


PADDING_CASES = ("none", "spatial", "temporal", "halved")


@dataclass
class PaddingRun:
    case: str
    seed: int
    n_L: int
    n_R: int
    armse: float
    shell_armse: float


def padding_run(case: str, seed: int, epochs: int = 60, MB: int = 50, lr_factor: float = 3.0,
                width: int = 30, depth: int = 4, pad: float = 0.25, label_res: int = 11,
                label_t: tuple[float, float] = (0.3, 0.7), n_label_t: int = 5, n_pad_t: int | None = None,
                n_R: int | None = None, placement: str = "uniform-random", omega: float = 1.0,
                test_n_t: int = 11, bulk_T_fraction: float = 1.0, boundary_fraction: float = 1.0) -> PaddingRun:
    """One configuration of the padding study on a manufactured sub-box.

    Labels: bulk temperature plus boundary velocity in the box
    ``[0.3, 0.7]^2 x label_t``. Residual points are drawn either in the label
    box (``none``), in a spatially or temporally grown box at the same count,
    or in the label box at half the count (``halved``).
    """
    if case not in PADDING_CASES:
        raise ValueError(case)
    ms = ManufacturedSolution(params={**HIDDEN_PARAMS, "omega": omega})
    lo, hi = 0.3, 0.7
    box = ((lo, hi), (lo, hi))
    db = manufactured_db(ms, (label_res, label_res), np.linspace(*label_t, n_label_t), box)
    padding = PaddingSpec()
    if case == "spatial":
        d = pad * (hi - lo)
        padding = PaddingSpec("custom", ((lo - d, hi + d), (lo - d, hi + d)), (label_res, label_res))
    elif case == "temporal":
        d = pad * (label_t[1] - label_t[0])
        padding = PaddingSpec("temporal", t_range=(label_t[0] - d, label_t[1] + d), n_t=n_pad_t)
    kw = dict(bulk_T_fraction=bulk_T_fraction, boundary_faces=("x0", "x1", "z0", "z1"),
              boundary_fraction=boundary_fraction, ic_fraction=0.0, placement=placement, seed=seed, padding=padding)
    if n_R is None:
        n_R = build_trainset(db, n_R=None, **kw).n_L
    if case == "halved":
        n_R //= 2
    ts = build_trainset(db, n_R=n_R, **kw)
    res = train(ts, Architecture.mlp(3, width, depth, 5), ms.fluid, LossConfig.standard(),
                scaled_schedule(epochs, MB, lr_factor), seed, forcing=ms.forcing())
    test = manufactured_db(ms, (21, 21), np.linspace(*label_t, test_n_t), box)
    full = M.aggregate(grid_scores(res.model, test)).armse
    shell = M.aggregate(grid_scores(res.model, test, mask=shell_mask(test))).armse
    return PaddingRun(case, seed, ts.n_L, ts.n_R, full, shell)


def padding_study(seeds=(0, 1, 2, 3, 4), **kw) -> list[PaddingRun]:
    return [padding_run(case, s, **kw) for s in seeds for case in PADDING_CASES]


# ---------------------------------------------------------------- relaxation


def relaxation_study(db: SnapshotDB, fp: FluidParams, epochs: int = 20, MB: int = 200, seed: int = 0,
                     lambda_div: float = 0.1, width: int = 30, depth: int = 4, lr_factor: float = 1.0,
                     n_L_fraction: float = 1.0) -> dict[str, dict]:
    """Standard versus relaxed-divergence PINN at identical iterations on one training set."""
    ts = build_trainset(db, bulk_T_fraction=n_L_fraction, boundary_faces=default_faces(db.dim),
                        boundary_fraction=1.0, ic_fraction=0.0, n_R=None, placement="on-grid", seed=seed)
    sched = scaled_schedule(epochs, MB, lr_factor)
    out = {}
    for name, cfg in (("standard", LossConfig.standard()), ("relaxed", LossConfig.relaxed(lambda_div))):
        res = train(ts, Architecture.mlp(db.dim + 1, width, depth, db.dim + 3), fp, cfg, sched, seed)
        h = res.history
        last = h.column("cycle") == h.column("cycle").max()
        out[name] = {
            "final_total": float(h.column("total")[-1]),
            "final_cycle_total": float(np.mean(h.column("total")[last])),
            "div_variance": float(np.var(h.column("pde_div")[last])),
            # the divergence term as it enters the total loss
            "div_term_variance": float(np.var(cfg.weight("div") * h.column("pde_div")[last])),
            "history": h,
            "model": res.model,
        }
    return out


# ---------------------------------------------------------------- baselines


def baseline_ordering(db: SnapshotDB, fp: FluidParams, epochs: int = 20, MB: int = 200, seed: int = 0,
                      width: int = 30, depth: int = 4, lr_factor: float = 1.0, n_test: int | None = None,
                      bulk_T_fraction: float = 0.5, placement: str = "on-grid") -> dict:
    """Plain temperature regression vs PINN (temperature RMSE), PINN vs linear regression (velocity R^2).

    Both networks see bulk temperature labels and boundary velocity labels;
    only the PINN also sees the equations. The linear model is fitted where
    velocity is labelled. Scores are on grid points that carry no label.
    """
    ts = build_trainset(db, bulk_T_fraction=bulk_T_fraction, boundary_faces=default_faces(db.dim), boundary_fraction=1.0,
                        ic_fraction=0.0, n_R=None, placement=placement, seed=seed)
    sched = scaled_schedule(epochs, MB, lr_factor)
    arch = Architecture.mlp(db.dim + 1, width, depth, db.dim + 3)
    pinn = train(ts, arch, fp, LossConfig.standard(), sched, seed).model
    dnn = train(ts, arch, fp, LossConfig.plain(), sched, seed).model
    if n_test is None:  # every point that carries no label
        n_test = db.size - np.unique(ts.labels.source).size
    test = make_test_split(db, n_test, seed + 7, ts.labels)
    vel = [n for n in ("vx", "vy", "vz") if n in db.fields]
    pp, pd = pinn.predict(test.coords), dnn.predict(test.coords)
    jT = pinn.output_names.index("T")
    out = {
        "T_rmse_pinn": M.field_stats(pp[:, jT], test.values["T"]).rmse,
        "T_rmse_dnn": M.field_stats(pd[:, jT], test.values["T"]).rmse,
        "r2_pinn": {n: M.field_stats(pp[:, pinn.output_names.index(n)], test.values[n]).r2 for n in vel},
    }
    # the linear baseline sees the same velocity information as the networks:
    # the records that carry velocity labels, with temperature as a regressor
    src = np.unique(ts.labels.source[ts.labels.kind != KIND_BULK])
    X = np.column_stack([db.coords(src), db.values("T", src)])
    Xt = np.column_stack([test.coords, test.values["T"]])
    mor = M.mor_baseline(X, {n: db.values(n, src) for n in vel}, Xt, {n: test.values[n] for n in vel})
    out["r2_mor"] = {n: s.r2 for n, s in mor.stats.items()}
    return out
