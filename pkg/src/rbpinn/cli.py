"""``rbpinn`` command line: gen-data, make-trainset, train, evaluate, predict, report."""

from __future__ import annotations

import argparse
import configparser
import datetime as _dt
import hashlib
import io
import json
import os
import sys
from typing import Callable

import numpy as np

from . import __version__
from . import config as C
from . import metrics as M
from .binio import FormatError
from .dataset import (
    SnapshotDB,
    TrainingSet,
    build_trainset,
    load_db,
    make_test_split,
    save_db,
)
from .errors import ConfigError, DataError, NumericAbort
from .network import OUTPUT_NAMES, Surrogate
from .physics import FluidParams, equation_names
from .refsolver import ManufacturedSolution, manufactured_db
from .refsolver.solver import Diagnostics, solve_boussinesq_2d
from .training import (
    HISTORY_COLUMNS,
    Checkpoint,
    LossHistory,
    evaluate_loss,
    train,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5
THREADS_ENV = "RBPINN_THREADS"


# ---------------------------------------------------------------- run plumbing


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Output directory of one command; created lazily at the first write."""

    def __init__(self, command: str, cfg: C.Config, out: str, seed: int, threads: int):
        self.command, self.cfg, self.out = command, cfg, os.path.abspath(out)
        self.seed, self.threads = seed, threads
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")

    def path(self, name: str) -> str:
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)

    def write(self, name: str, writer: Callable[[str], None]) -> str:
        final = self.path(name)
        os.makedirs(os.path.dirname(final), exist_ok=True)
        tmp = final + ".part"
        writer(tmp)
        os.replace(tmp, final)
        self.outputs.append(name)
        return final

    def write_text(self, name: str, text: str) -> str:
        return self.write(name, lambda p: M.write_text(p, text))

    def input(self, path: str) -> str:
        self.inputs[path] = sha256_file(path)
        return path

    def finish(self) -> None:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_string(self.cfg.resolved_text())
        if not cp.has_section("run"):
            cp["run"] = {}
        cp["run"]["seed"] = str(self.seed)
        cp["manifest"] = {
            "command": self.command,
            "config_sha256": self.cfg.sha256,
            "code_version": __version__,
            "seed": str(self.seed),
            "threads": str(self.threads),
            "inputs": " ".join(f"{p}={h}" for p, h in sorted(self.inputs.items())),
            "outputs": " ".join(sorted(self.outputs)),
            "started": self.started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        }
        buf = io.StringIO()
        cp.write(buf)
        M.write_text(self.path("manifest.ini"), buf.getvalue())


def _fluid_from_manifest(m: dict, dim: int) -> FluidParams:
    try:
        return FluidParams(float(m["Ra"]), float(m["Pr"]), dim)
    except KeyError as exc:
        raise DataError(f"training-set manifest lacks {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def forcing_from_provenance(prov: str):
    """Exact forcing for manufactured-solution data; ``None`` for physical data."""
    if prov.startswith("manufactured;"):
        return ManufacturedSolution.from_provenance(prov).forcing()
    return None


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: C.Config, run: Run) -> int:
    s = cfg.section("data")
    kind = s.str("kind")
    name = s.str("output", "db.snap")
    if kind == "manufactured":
        dim = s.int("dim", 2)
        params = {k: s.float(k) for k in ("A", "omega", "C", "P", "B") if k in s}
        try:
            ms = ManufacturedSolution(Ra=s.float("Ra", 1.0e4), Pr=s.float("Pr", 1.0), dim=dim, params=params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        box = s.box("box", dim) if "box" in s else ms.box
        res = s.ints("resolution")
        if len(res) != dim:
            raise ConfigError(f"resolution needs {dim} entries")
        times = np.linspace(s.float("t0", 0.0), s.float("t1", 1.0), s.int("n_t", 11))
        db = manufactured_db(ms, res, times, box)
        run.write(name, lambda p: save_db(db, p))
    elif kind == "rb2d":
        sc = C.solver_config(s)
        sc.check_stability()
        diag = Diagnostics()
        db = solve_boussinesq_2d(sc, diag)
        run.write(name, lambda p: save_db(db, p))
        run.write_text("diagnostics.csv", M.table_csv(
            ("steps", "max_divergence", "max_cfl"), [(diag.steps, diag.max_divergence, diag.max_cfl)]))
        run.write_text("energy.csv", M.table_csv(("t", "kinetic_energy"), diag.energy))
    else:
        raise ConfigError(f"[data] kind must be 'manufactured' or 'rb2d', not {kind!r}")
    print(f"wrote {name}: {db.resolution} x {db.n_snapshots} snapshots (size {db.size})")
    return EXIT_OK


def _load_db(run: Run, path: str) -> SnapshotDB:
    return load_db(run.input(path))


def cmd_make_trainset(cfg: C.Config, run: Run) -> int:
    s = cfg.section("trainset")
    label_db = _load_db(run, s.path("label_db"))
    if "label_box" in s or "label_t_range" in s:
        box = s.box("label_box", label_db.dim) if "label_box" in s else label_db.extents
        t_range = tuple(s.floats("label_t_range")) if "label_t_range" in s else None
        label_db = label_db.subset(box, t_range)
    residual_db = None
    if "residual_db" in s:
        residual_db = _load_db(run, s.path("residual_db"))
        if "residual_box" in s or "residual_t_range" in s:
            box = s.box("residual_box", residual_db.dim) if "residual_box" in s else residual_db.extents
            t_range = tuple(s.floats("residual_t_range")) if "residual_t_range" in s else None
            residual_db = residual_db.subset(box, t_range)
    n_R = s.int("n_R") if "n_R" in s else None
    factor = s.float("n_R_factor", 1.0)
    kw = dict(bulk_T_fraction=s.float("bulk_T_fraction", 1.0), boundary_faces=C.faces(s, label_db.dim),
              boundary_fraction=s.float("boundary_fraction", 1.0), ic_fraction=s.float("ic_fraction", 0.0),
              padding=C.padding_spec(s), placement=s.str("placement", "on-grid"), seed=run.seed,
              residual_db=residual_db)
    extra = {"Ra": repr(label_db.Ra), "Pr": repr(label_db.Pr), "provenance": label_db.provenance,
             "label_extents": " ".join(repr(v) for lohi in label_db.box() for v in lohi)}
    if n_R is None and factor != 1.0:
        from .dataset import label_counts

        counts = label_counts(label_db, kw["bulk_T_fraction"], kw["boundary_faces"], kw["boundary_fraction"],
                              kw["ic_fraction"])
        n_R = max(1, int(round(factor * counts["total"])))
    ts = build_trainset(label_db, n_R=n_R, extra=extra, **kw)
    name = s.str("output", "trainset.pts")
    run.write(name, lambda p: _save_ts(ts, p))
    run.outputs.append(name + ".manifest")
    t = ts.residual[:, -1]
    print(f"wrote {name}: N_L = {ts.n_L}, N_R = {ts.n_R}, residual t in [{t.min():g}, {t.max():g}]")
    return EXIT_OK


def _save_ts(ts: TrainingSet, path: str) -> None:
    ts.save(path)
    final = path[: -len(".part")] if path.endswith(".part") else path
    os.replace(path + ".manifest", final + ".manifest")


def cmd_train(cfg: C.Config, run: Run, resume: str | None) -> int:
    s = cfg.section("train")
    ts = TrainingSet.load(run.input(s.path("trainset")))
    fp = _fluid_from_manifest(ts.manifest, ts.dim)
    forcing = forcing_from_provenance(ts.manifest.get("provenance", ""))
    arch = C.architecture(s, ts.dim, len(ts.labels.channels))
    lc = C.loss_config(s)
    sched = C.schedule(s)
    ck_dir = run.path("checkpoints") if s.bool("checkpoints", True) else None

    def on_cycle(c: int, h: LossHistory) -> None:
        rows = [r for r in h.rows if r[2] == c]
        if rows:
            last = dict(zip(HISTORY_COLUMNS, rows[-1]))
            print(f"cycle {c}: {len(rows)} iterations, lr {last['lr']:.4g}, total {last['total']:.4e}, "
                  f"label {last['label']:.4e}, div {last['pde_div']:.4e}", flush=True)

    if resume is not None:
        run.input(resume)
    result = train(ts, arch, fp, lc, sched, run.seed, forcing=forcing, checkpoint_dir=ck_dir, resume=resume,
                   log_wall_time=s.bool("log_wall_time", False), on_cycle=on_cycle)
    run.outputs.extend(os.path.join("checkpoints", os.path.basename(p)) for p in result.checkpoints)
    run.write("model.rbnn", result.model.save)
    run.write("history.csv", result.history.save)
    run.write_text("cycles.csv", _cycle_summary(result.history))
    return EXIT_OK


def _cycle_summary(h: LossHistory) -> str:
    cyc = h.column("cycle").astype(int)
    rows = []
    for c in sorted(set(cyc.tolist())):
        sel = cyc == c
        row = [c, int(sel.sum())]
        for name in ("lr", "total", "label", "pde_T", "pde_Tbar", "pde_mx", "pde_my", "pde_mz", "pde_div"):
            row.append(float(h.column(name)[sel][-1]))
        row.append(float(np.var(h.column("pde_div")[sel])))
        rows.append(row)
    header = ("cycle", "iterations", "lr", "total", "label", "pde_T", "pde_Tbar", "pde_mx", "pde_my", "pde_mz",
              "pde_div", "pde_div_variance")
    return M.table_csv(header, rows)


def cmd_evaluate(cfg: C.Config, run: Run) -> int:
    s = cfg.section("evaluate")
    model = Surrogate.load(run.input(s.path("model")))
    db = _load_db(run, s.path("db"))
    if "box" in s or "t_range" in s:
        box = s.box("box", db.dim) if "box" in s else db.extents
        db = db.subset(box, tuple(s.floats("t_range")) if "t_range" in s else None)
    if model.arch.n_in != db.dim + 1:
        raise DataError("model and database dimensions differ")
    ts = TrainingSet.load(run.input(s.path("trainset"))) if "trainset" in s else None
    exclude = None
    if ts is not None and s.bool("exclude_labels", True) and _same_grid(ts, db):
        exclude = ts.labels
    n_test = s.int("n_test", 0)
    if n_test <= 0:
        n_test = db.size - (np.unique(exclude.source).size if exclude is not None else 0)
        if n_test == 0:
            raise ConfigError("every grid point carries a training label; evaluate on another database "
                              "or set exclude_labels = false")
    test = make_test_split(db, n_test, run.seed, exclude)
    pred = model.predict(test.coords, threads=run.threads)
    names = [n for n in model.output_names if n in db.fields]
    groups = test.source // db.points_per_snapshot
    stats = {}
    rel = []
    for n in names:
        j = model.output_names.index(n)
        kind = "pressure" if n == "p" else "scalar"
        stats[n] = M.field_stats(pred[:, j], test.values[n], kind, groups if kind == "pressure" else None)
        rel.append((n, M.relative_l2(pred[:, j], test.values[n], kind == "pressure",
                                     groups if kind == "pressure" else None)))
    agg = M.aggregate(stats)
    run.write_text("stats.csv", M.stats_csv(stats, agg))
    run.write_text("relative_l2.csv", M.table_csv(("field", "relative_l2_pct"), rel))
    # per-snapshot profiles on the full grid
    full = model.predict(db.all_coords(), threads=run.threads)
    nt = db.n_snapshots
    prof_rows = []
    profiles = {}
    for n in names:
        j = model.output_names.index(n)
        profiles[n] = M.temporal_l2_profile(full[:, j].reshape(nt, -1), db.fields[n].reshape(nt, -1),
                                            pressure=n == "p")
    for k in range(nt):
        prof_rows.append([float(db.times[k])] + [float(profiles[n][k]) for n in names])
    run.write_text("profile.csv", M.table_csv(["t"] + names, prof_rows))
    if "T" in names:
        jT = model.output_names.index("T")
        bins = s.int("pdf_bins", 40)
        lo = float(min(pred[:, jT].min(), test.values["T"].min()))
        hi = float(max(pred[:, jT].max(), test.values["T"].max()))
        dp = M.pdf_estimate(pred[:, jT], bins, (lo, hi))
        dr = M.pdf_estimate(test.values["T"], bins, (lo, hi))
        run.write_text("pdf_T.csv", M.table_csv(("T", "pdf_pred", "pdf_ref"),
                                                list(zip(dp.centers, dp.density, dr.density))))
        if nt >= 4:
            probe = tuple(n // 2 for n in db.resolution)
            series_ref = db.fields["T"][(slice(None),) + probe]
            series_pred = full[:, jT].reshape((nt,) + db.resolution)[(slice(None),) + probe]
            sp = M.power_spectrum(series_pred, db.dt)
            sr = M.power_spectrum(series_ref, db.dt)
            run.write_text("spectrum_T.csv", M.table_csv(("f", "power_pred", "power_ref"),
                                                         list(zip(sr.freqs, sp.power, sr.power))))
            run.write_text("spectrum_peak.csv", M.table_csv(("series", "f_max"),
                                                            [("pred", sp.f_max), ("ref", sr.f_max)]))
    if ts is not None:
        fp = _fluid_from_manifest(ts.manifest, ts.dim)
        forcing = forcing_from_provenance(ts.manifest.get("provenance", ""))
        from .training import LossConfig

        losses = evaluate_loss(model, ts, fp, LossConfig.standard(), forcing)
        run.write_text("losses.csv", M.table_csv(("term", "value"), list(losses.items())))
    if s.bool("mor", False) and "T" in db.fields:
        vel = [n for n in names if n not in ("T", "Tbar")]
        train_pool = np.setdiff1d(np.arange(db.size), test.source)
        Xte = np.column_stack([test.coords, test.values["T"]])
        if train_pool.size > db.dim + 2:
            Xtr = np.column_stack([db.coords(train_pool), db.values("T", train_pool)])
            mor = M.mor_baseline(Xtr, {n: db.values(n, train_pool) for n in vel}, Xte,
                                 {n: test.values[n] for n in vel}, groups_test=groups)
        else:  # no points outside the test split: in-sample fit
            mor = M.mor_baseline(Xte, {n: test.values[n] for n in vel}, groups_test=groups)
        run.write_text("mor_stats.csv", M.stats_csv(mor.stats, M.aggregate(mor.stats)))
    print(f"evaluated {n_test} test points: aRMSE {agg.armse:.4e}, aR2 {agg.ar2}")
    return EXIT_OK


def _same_grid(ts: TrainingSet, db: SnapshotDB) -> bool:
    if "label_extents" not in ts.manifest:
        return False
    ext = [float(v) for v in ts.manifest["label_extents"].split()]
    return np.allclose(ext, [v for lohi in db.box() for v in lohi])


def cmd_predict(cfg: C.Config, run: Run) -> int:
    s = cfg.section("predict")
    model = Surrogate.load(run.input(s.path("model")))
    dim = model.arch.spatial_dim
    box = s.box("box", dim) if "box" in s else tuple(tuple(r) for r in model.ranges[:dim])
    res = s.ints("resolution")
    if len(res) != dim:
        raise ConfigError(f"resolution needs {dim} entries")
    t_lo, t_hi = model.ranges[-1]
    times = np.linspace(s.float("t0", t_lo), s.float("t1", t_hi), s.int("n_t", 2))
    geo = SnapshotDB(box, res, times)
    out = model.predict(geo.all_coords(), threads=run.threads)
    shape = (geo.n_snapshots,) + geo.resolution
    fields = {n: out[:, j].reshape(shape).copy() for j, n in enumerate(model.output_names)}
    db = SnapshotDB(box, res, times, fields, provenance="prediction")
    run.write(s.str("output", "prediction.snap"), lambda p: save_db(db, p))
    print(f"predicted {out.shape[0]} points on {tuple(res)} x {len(times)}")
    return EXIT_OK


def cmd_report(cfg: C.Config, run: Run) -> int:
    s = cfg.section("report")
    rows = []
    header = ["run", "iterations", "final_total", "final_label", "final_pde_div", "final_cycle_div_variance",
              "aRMSE", "aMAE", "aR_corr", "aR2"]
    for d in s.paths("runs"):
        hist_path = os.path.join(d, "history.csv")
        h = LossHistory.load(run.input(hist_path))
        cyc = h.column("cycle")
        last = cyc == cyc.max()
        row = [os.path.basename(os.path.normpath(d)), len(h), float(h.column("total")[-1]),
               float(h.column("label")[-1]), float(h.column("pde_div")[-1]),
               float(np.var(h.column("pde_div")[last]))]
        stats_path = os.path.join(d, "stats.csv")
        agg = [None] * 4
        if os.path.exists(stats_path):
            with open(run.input(stats_path), encoding="utf-8") as fh:
                for line in fh:
                    if line.startswith("aggregate,"):
                        vals = line.strip().split(",")[1:]
                        agg = [None if v == "n/a" else float(v) for v in (vals[0], vals[1], vals[4], vals[5])]
        rows.append(row + agg)
    run.write_text(s.str("output", "report.csv"), M.table_csv(header, rows))
    print(M.table_csv(header, rows), end="")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


COMMANDS = ("gen-data", "make-trainset", "train", "evaluate", "predict", "report")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbpinn", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI configuration file (or a run manifest)")
        sp.add_argument("--seed", type=int, default=None, help="override [run] seed")
        sp.add_argument("--out", default=None, help="output directory (default: [run] out, else ./run)")
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
        if name == "train":
            sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    return p


def run_command(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = C.Config.load(args.config)
        run_sec = cfg.section("run") if cfg.has("run") else None
        seed = args.seed if args.seed is not None else (run_sec.int("seed", 0) if run_sec else 0)
        out = args.out or (run_sec.path("out", "run") if run_sec else os.path.abspath("run"))
        threads = args.threads if args.threads is not None else int(os.environ.get(THREADS_ENV, "1") or 1)
        if threads < 1:
            raise ConfigError("--threads must be positive")
        run = Run(args.command, cfg, out, seed, threads)
        if args.command == "gen-data":
            code = cmd_gen_data(cfg, run)
        elif args.command == "make-trainset":
            code = cmd_make_trainset(cfg, run)
        elif args.command == "train":
            code = cmd_train(cfg, run, args.resume)
        elif args.command == "evaluate":
            code = cmd_evaluate(cfg, run)
        elif args.command == "predict":
            code = cmd_predict(cfg, run)
        else:
            code = cmd_report(cfg, run)
        run.finish()
        return code
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as exc:
        print(f"numeric abort: {exc} (iteration {exc.iteration}, term {exc.term})", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv: list[str] | None = None) -> None:
    sys.exit(run_command(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
