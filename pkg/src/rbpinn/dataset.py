"""Snapshot databases, label/residual point selection and minibatching."""

from __future__ import annotations

import configparser
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .binio import CorruptHeaderError, Reader, Writer
from .errors import ConfigError, DataError
from .network import INPUT_NAMES, OUTPUT_NAMES
from .physics import SPATIAL_AXES

DB_MAGIC = b"RBSNAPDB"
DB_VERSION = 1
TS_MAGIC = b"PINNTSET"
TS_VERSION = 1

KIND_BULK, KIND_BOUNDARY, KIND_IC = 0, 1, 2


def face_names(dim: int) -> tuple[str, ...]:
    return tuple(f"{a}{s}" for a in SPATIAL_AXES[dim] for s in "01")


def default_faces(dim: int) -> tuple[str, ...]:
    """All box faces except the top one."""
    top = SPATIAL_AXES[dim][-1] + "1"
    return tuple(f for f in face_names(dim) if f != top)


# ---------------------------------------------------------------- database


@dataclass
class SnapshotDB:
    """Fields on an inclusive structured grid at equally spaced times.

    ``fields[name]`` has shape ``(n_t, *resolution)`` with the spatial axes in
    ``x, [y,] z`` order. A database without fields describes geometry only.
    """

    extents: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]
    times: np.ndarray
    fields: dict[str, np.ndarray] = field(default_factory=dict)
    Ra: float = float("nan")
    Pr: float = float("nan")
    provenance: str = ""

    def __post_init__(self):
        self.extents = tuple((float(lo), float(hi)) for lo, hi in self.extents)
        self.resolution = tuple(int(n) for n in self.resolution)
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.validate()

    def validate(self) -> None:
        if self.dim not in (2, 3):
            raise DataError(f"databases are 2-D or 3-D, got {len(self.resolution)} axes")
        if len(self.extents) != len(self.resolution):
            raise DataError("one extent per resolved axis is required")
        for (lo, hi), n in zip(self.extents, self.resolution):
            if n < 1 or not hi >= lo or (n > 1 and hi == lo):
                raise DataError(f"bad axis: extent ({lo}, {hi}) with {n} points")
        if self.times.size < 1:
            raise DataError("a database needs at least one snapshot")
        if self.times.size > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0):
                raise DataError("snapshot times must be strictly increasing")
            if np.max(np.abs(steps - steps.mean())) > 1e-9 * max(1.0, abs(steps.mean())):
                raise DataError("snapshot times must be equally spaced")
        shape = (self.n_snapshots,) + self.resolution
        for name, arr in self.fields.items():
            if arr.shape != shape:
                raise DataError(f"field {name!r} has shape {arr.shape}, expected {shape}")

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def axes(self) -> tuple[str, ...]:
        return SPATIAL_AXES.get(self.dim, ())

    @property
    def n_snapshots(self) -> int:
        return int(self.times.size)

    @property
    def points_per_snapshot(self) -> int:
        return int(math.prod(self.resolution))

    @property
    def size(self) -> int:
        return self.points_per_snapshot * self.n_snapshots

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_snapshots > 1 else 0.0

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(self.fields)

    def grid_axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.extents, self.resolution)]

    def box(self) -> list[tuple[float, float]]:
        """Space-time box, spatial axes first then time."""
        return list(self.extents) + [(float(self.times[0]), float(self.times[-1]))]

    def coords(self, flat: np.ndarray) -> np.ndarray:
        """Space-time coordinates (N, dim+1) of flat indices into ``(n_t, *resolution)``."""
        idx = np.unravel_index(np.asarray(flat, dtype=np.int64), (self.n_snapshots,) + self.resolution)
        axes = self.grid_axes()
        cols = [axes[a][idx[a + 1]] for a in range(self.dim)] + [self.times[idx[0]]]
        return np.stack(cols, axis=1)

    def values(self, name: str, flat: np.ndarray) -> np.ndarray:
        return self.fields[name].reshape(-1)[np.asarray(flat, dtype=np.int64)]

    def all_coords(self) -> np.ndarray:
        return self.coords(np.arange(self.size))

    def snapshot_subset(self, index: Sequence[int]) -> "SnapshotDB":
        index = np.asarray(index, dtype=np.int64)
        return SnapshotDB(self.extents, self.resolution, self.times[index],
                          {k: v[index].copy() for k, v in self.fields.items()},
                          self.Ra, self.Pr, self.provenance)

    def subset(self, box: Sequence[tuple[float, float]], t_range: tuple[float, float] | None = None) -> "SnapshotDB":
        """Grid points (and snapshots) falling inside a closed box."""
        tol = 1e-12
        sel = []
        for ax, (lo, hi) in zip(self.grid_axes(), box):
            keep = np.nonzero((ax >= lo - tol) & (ax <= hi + tol))[0]
            if keep.size == 0:
                raise ConfigError(f"box ({lo}, {hi}) contains no grid points")
            if np.any(np.diff(keep) != 1):
                raise ConfigError("subset must be contiguous")
            sel.append(keep)
        tsel = np.arange(self.n_snapshots)
        if t_range is not None:
            tsel = np.nonzero((self.times >= t_range[0] - tol) & (self.times <= t_range[1] + tol))[0]
            if tsel.size == 0:
                raise ConfigError(f"time range {t_range} contains no snapshots")
        axes = self.grid_axes()
        extents = [(float(ax[k[0]]), float(ax[k[-1]])) for ax, k in zip(axes, sel)]
        ix = np.ix_(tsel, *sel)
        fields = {k: v[ix].copy() for k, v in self.fields.items()}
        return SnapshotDB(extents, tuple(len(k) for k in sel), self.times[tsel], fields,
                          self.Ra, self.Pr, self.provenance)


def save_db(db: SnapshotDB, path: str | os.PathLike) -> None:
    buf = io.BytesIO()
    w = Writer(buf)
    w.magic(DB_MAGIC, DB_VERSION)
    w.u32(db.dim)
    for (lo, hi), n in zip(db.extents, db.resolution):
        w.f64(lo)
        w.f64(hi)
        w.u32(n)
    w.u32(db.n_snapshots)
    w.array(db.times)
    w.u32(len(db.fields))
    for name in db.fields:
        w.text(name)
    w.f64(db.Ra)
    w.f64(db.Pr)
    w.text(db.provenance)
    for arr in db.fields.values():
        w.array(arr)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def db_from_bytes(data: bytes, what: str = "database") -> SnapshotDB:
    r = Reader(data, what)
    r.magic(DB_MAGIC, DB_VERSION)
    dim = r.u32()
    if dim not in (2, 3):
        raise CorruptHeaderError(f"{what}: spatial dimension {dim}")
    extents, res = [], []
    for _ in range(dim):
        extents.append((r.f64(), r.f64()))
        res.append(r.u32())
    nt = r.u32()
    if nt < 1 or min(res) < 1:
        raise CorruptHeaderError(f"{what}: empty grid")
    times = r.array((nt,), header=True)
    nf = r.u32()
    if nf > 64:
        raise CorruptHeaderError(f"{what}: implausible field count {nf}")
    names = [r.text(limit=256) for _ in range(nf)]
    Ra, Pr = r.f64(), r.f64()
    prov = r.text()
    shape = (nt,) + tuple(res)
    fields = {name: r.array(shape) for name in names}
    r.done()
    try:
        return SnapshotDB(tuple(extents), tuple(res), times, fields, Ra, Pr, prov)
    except DataError as exc:
        raise CorruptHeaderError(f"{what}: {exc}") from exc


def load_db(path: str | os.PathLike) -> SnapshotDB:
    with open(path, "rb") as fh:
        return db_from_bytes(fh.read(), what=str(path))


# ---------------------------------------------------------------- labels


@dataclass
class LabelSet:
    """Observed records: coordinates, values and a per-channel observation mask.

    Channels follow the network output order; ``source`` is the flat database
    index of each record and ``kind`` tells bulk / boundary / initial records apart.
    """

    coords: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    source: np.ndarray
    kind: np.ndarray
    channels: tuple[str, ...]

    def __len__(self) -> int:
        return int(self.coords.shape[0])

    def take(self, idx: np.ndarray) -> "LabelSet":
        return LabelSet(self.coords[idx], self.values[idx], self.mask[idx], self.source[idx],
                        self.kind[idx], self.channels)


def _on_faces(db: SnapshotDB, faces: Sequence[str]) -> np.ndarray:
    """Boolean mask over spatial points lying on the selected faces but on no other face."""
    valid = face_names(db.dim)
    bad = [f for f in faces if f not in valid]
    if bad:
        raise ConfigError(f"unknown face(s) {bad}; valid faces are {valid}")
    grids = np.meshgrid(*[np.arange(n) for n in db.resolution], indexing="ij")
    on_selected = np.zeros(db.resolution, dtype=bool)
    on_excluded = np.zeros(db.resolution, dtype=bool)
    for a, (axis, n) in enumerate(zip(db.axes, db.resolution)):
        for side, hit in (("0", grids[a] == 0), ("1", grids[a] == n - 1)):
            if f"{axis}{side}" in faces:
                on_selected |= hit
            else:
                on_excluded |= hit
    return on_selected & ~on_excluded


def _count(fraction: float, population: int) -> int:
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"fractions must lie in [0, 1], got {fraction}")
    return int(math.floor(fraction * population + 0.5))


def label_populations(db: SnapshotDB, boundary_faces: Sequence[str]) -> dict[str, np.ndarray]:
    """Flat database indices eligible for each record kind."""
    nt, npts = db.n_snapshots, db.points_per_snapshot
    face_pts = np.nonzero(_on_faces(db, boundary_faces).reshape(-1))[0]
    boundary = (np.arange(nt)[:, None] * npts + face_pts[None, :]).reshape(-1)
    return {"bulk": np.arange(db.size), "boundary": boundary, "ic": np.arange(npts)}


def label_counts(db: SnapshotDB, bulk_T_fraction: float, boundary_faces: Sequence[str],
                 boundary_fraction: float, ic_fraction: float) -> dict[str, int]:
    """Record counts per kind: ``round(fraction * population)``."""
    pops = label_populations(db, boundary_faces)
    out = {"bulk": _count(bulk_T_fraction, pops["bulk"].size),
           "boundary": _count(boundary_fraction, pops["boundary"].size),
           "ic": _count(ic_fraction, pops["ic"].size)}
    out["total"] = out["bulk"] + out["boundary"] + out["ic"]
    return out


def make_labels(db: SnapshotDB, bulk_T_fraction: float, boundary_faces: Sequence[str],
                boundary_fraction: float, ic_fraction: float, seed: int) -> LabelSet:
    """Bulk temperature, boundary velocity and initial-condition records.

    Each kind is sampled without replacement from its own population, so the
    same grid point may appear in records of different kinds.
    """
    counts = label_counts(db, bulk_T_fraction, boundary_faces, boundary_fraction, ic_fraction)
    if counts["total"] == 0:
        raise ConfigError("label selection is empty")
    channels = OUTPUT_NAMES[db.dim]
    vel = [f"v{a}" for a in db.axes]
    needed = set(vel + ["T"]) if counts["boundary"] or counts["ic"] else {"T"}
    missing = needed - set(db.fields)
    if missing:
        raise DataError(f"database lacks field(s) {sorted(missing)}")
    pops = label_populations(db, boundary_faces)
    observed = {"bulk": ["T", "Tbar"], "boundary": vel, "ic": vel + ["T", "Tbar"]}
    kinds = {"bulk": KIND_BULK, "boundary": KIND_BOUNDARY, "ic": KIND_IC}
    parts = []
    for gid, name in enumerate(("bulk", "boundary", "ic")):
        k = counts[name]
        if k == 0:
            continue
        rng = np.random.default_rng([seed, gid])
        flat = np.sort(rng.choice(pops[name], size=k, replace=False))
        values = np.zeros((k, len(channels)))
        mask = np.zeros((k, len(channels)), dtype=bool)
        for ch in observed[name]:
            j = channels.index(ch)
            values[:, j] = 1.0 - db.values("T", flat) if ch == "Tbar" else db.values(ch, flat)
            mask[:, j] = True
        parts.append(LabelSet(db.coords(flat), values, mask, flat, np.full(k, kinds[name], np.uint8), channels))
    return LabelSet(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                      ("coords", "values", "mask", "source", "kind")), channels)


@dataclass
class TestSet:
    coords: np.ndarray
    values: dict[str, np.ndarray]
    source: np.ndarray


def make_test_split(db: SnapshotDB, n: int, seed: int, exclude: LabelSet | None = None) -> TestSet:
    """Random grid points never used by any record of ``exclude``."""
    pool = np.arange(db.size)
    if exclude is not None and len(exclude):
        pool = np.setdiff1d(pool, exclude.source, assume_unique=False)
    if n > pool.size or n < 1:
        raise ConfigError(f"test split of {n} points requested, {pool.size} available")
    rng = np.random.default_rng([seed, 7])
    flat = np.sort(rng.choice(pool, size=n, replace=False))
    return TestSet(db.coords(flat), {k: db.values(k, flat) for k in db.fields}, flat)


# ---------------------------------------------------------------- residual points


PADDING_MODES = ("none", "temporal", "vertical", "horizontal", "custom")


@dataclass
class PaddingSpec:
    """Where residual points live relative to the label database grid.

    ``box``/``resolution`` describe the padded spatial grid (spatial modes);
    ``t_range``/``n_t`` the padded time grid (temporal mode, optional for
    ``custom``).
    """

    mode: str = "none"
    box: tuple[tuple[float, float], ...] | None = None
    resolution: tuple[int, ...] | None = None
    t_range: tuple[float, float] | None = None
    n_t: int | None = None

    def __post_init__(self):
        if self.mode not in PADDING_MODES:
            raise ConfigError(f"unknown padding mode {self.mode!r}; choose from {PADDING_MODES}")

    def grid(self, db: SnapshotDB) -> list[np.ndarray]:
        """1-D coordinate arrays (spatial axes, then time) of the residual grid."""
        tol = 1e-12
        label_box = list(db.extents)
        space = db.grid_axes()
        times = db.times
        if self.mode in ("vertical", "horizontal", "custom") and self.box is not None:
            if self.resolution is None or len(self.box) != db.dim or len(self.resolution) != db.dim:
                raise ConfigError("spatial padding needs a box and a resolution for every axis")
            grown = []
            for a, ((lo, hi), (plo, phi)) in enumerate(zip(label_box, self.box)):
                if plo > lo + tol or phi < hi - tol:
                    raise ConfigError(f"padded box {self.box} does not contain the label box {label_box}")
                grown.append(plo < lo - tol or phi > hi + tol)
            vertical = db.dim - 1
            if not any(grown):
                raise ConfigError("padded box must strictly extend the label box")
            if self.mode == "vertical" and any(g for a, g in enumerate(grown) if a != vertical):
                raise ConfigError("vertical padding may only extend the vertical axis")
            if self.mode == "horizontal" and grown[vertical]:
                raise ConfigError("horizontal padding may not extend the vertical axis")
            space = [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.box, self.resolution)]
        elif self.mode in ("vertical", "horizontal"):
            raise ConfigError(f"{self.mode} padding needs a padded box")
        if self.mode == "temporal" or (self.mode == "custom" and self.t_range is not None):
            if self.t_range is None:
                raise ConfigError("temporal padding needs a time range")
            t0, t1 = self.t_range
            if t0 > times[0] + tol or t1 < times[-1] - tol:
                raise ConfigError(f"padded time range {self.t_range} does not contain the labels' times")
            if self.mode == "temporal" and not (t0 < times[0] - tol or t1 > times[-1] + tol):
                raise ConfigError("temporal padding must strictly extend the time interval")
            n_t = self.n_t
            if n_t is None:
                if db.n_snapshots < 2:
                    raise ConfigError("n_t is required when the database has a single snapshot")
                n_t = int(round((t1 - t0) / db.dt)) + 1
            times = np.linspace(t0, t1, n_t)
        if self.mode == "custom" and self.box is None and self.t_range is None:
            raise ConfigError("custom padding needs a box and/or a time range")
        return space + [np.asarray(times, dtype=np.float64)]


PLACEMENTS = ("on-grid", "uniform-random")


def make_residual_points(db: SnapshotDB, n_R: int, padding: PaddingSpec | None = None,
                         placement: str = "on-grid", seed: int = 0) -> np.ndarray:
    """Residual coordinates (n_R, dim+1) on or inside the (padded) space-time grid.

    On-grid placement draws distinct grid nodes; with ``n_R`` equal to the grid
    size every node is used.
    """
    if n_R < 1:
        raise ConfigError("n_R must be positive")
    if placement not in PLACEMENTS:
        raise ConfigError(f"unknown placement {placement!r}; choose from {PLACEMENTS}")
    axes = (padding or PaddingSpec()).grid(db)
    rng = np.random.default_rng([seed, 11])
    if placement == "uniform-random":
        cols = [rng.uniform(ax[0], ax[-1], size=n_R) for ax in axes]
        return np.stack(cols, axis=1)
    shape = tuple(ax.size for ax in axes)
    population = math.prod(shape)
    if n_R > population:
        raise ConfigError(f"n_R = {n_R} exceeds the {population} nodes of the residual grid")
    flat = np.arange(population) if n_R == population else np.sort(rng.choice(population, n_R, replace=False))
    idx = np.unravel_index(flat, shape)
    return np.stack([ax[i] for ax, i in zip(axes, idx)], axis=1)


# ---------------------------------------------------------------- training set


@dataclass
class TrainingSet:
    labels: LabelSet
    residual: np.ndarray
    dim: int
    manifest: dict[str, str] = field(default_factory=dict)

    @property
    def n_L(self) -> int:
        return len(self.labels)

    @property
    def n_R(self) -> int:
        return int(self.residual.shape[0])

    @property
    def input_names(self) -> tuple[str, ...]:
        return INPUT_NAMES[self.dim]

    def ranges(self) -> list[tuple[float, float]]:
        """Per-input extent of labels and residual points together."""
        parts = [a for a in (self.labels.coords, self.residual) if a.size]
        allc = np.concatenate(parts, axis=0)
        out = []
        for lo, hi in zip(allc.min(axis=0), allc.max(axis=0)):
            if hi <= lo:
                hi = lo + 1.0
            out.append((float(lo), float(hi)))
        return out

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        w = Writer(buf)
        w.magic(TS_MAGIC, TS_VERSION)
        w.u32(self.dim)
        w.u32(len(self.labels.channels))
        for ch in self.labels.channels:
            w.text(ch)
        w.u64(self.n_L)
        w.u64(self.n_R)
        w.text(manifest_text(self.manifest))
        lb = self.labels
        w.array(lb.coords)
        w.array(lb.values)
        w.array(lb.mask, "u1")
        w.array(lb.source, "<i8")
        w.array(lb.kind, "u1")
        w.array(self.residual)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, what: str = "training set") -> "TrainingSet":
        r = Reader(data, what)
        r.magic(TS_MAGIC, TS_VERSION)
        dim = r.u32()
        if dim not in (2, 3):
            raise CorruptHeaderError(f"{what}: spatial dimension {dim}")
        nc = r.u32()
        if nc > 64:
            raise CorruptHeaderError(f"{what}: implausible channel count {nc}")
        channels = tuple(r.text(limit=256) for _ in range(nc))
        n_L, n_R = r.u64(), r.u64()
        manifest = parse_manifest(r.text())
        d = dim + 1
        labels = LabelSet(r.array((n_L, d)), r.array((n_L, nc)), r.array((n_L, nc), "u1").astype(bool),
                          r.array((n_L,), "<i8"), r.array((n_L,), "u1"), channels)
        residual = r.array((n_R, d))
        r.done()
        return cls(labels, residual, dim, manifest)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        with open(str(path) + ".manifest", "w", encoding="utf-8") as fh:
            fh.write(manifest_text(self.manifest))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TrainingSet":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), what=str(path))


def manifest_text(manifest: Mapping[str, str]) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["trainset"] = {k: str(v) for k, v in manifest.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_manifest(text: str) -> dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise CorruptHeaderError(f"unreadable manifest: {exc}") from exc
    return dict(cp["trainset"]) if cp.has_section("trainset") else {}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def padding_from_manifest(m: Mapping[str, str]) -> PaddingSpec:
    box = None
    if m.get("padding_box"):
        v = _floats(m["padding_box"])
        box = tuple(zip(v[0::2], v[1::2]))
    res = tuple(int(x) for x in _floats(m["padding_resolution"])) if m.get("padding_resolution") else None
    t_range = tuple(_floats(m["padding_t_range"])) if m.get("padding_t_range") else None
    n_t = int(m["padding_n_t"]) if m.get("padding_n_t") else None
    return PaddingSpec(m.get("padding", "none"), box, res, t_range, n_t)


def padding_to_manifest(p: PaddingSpec) -> dict[str, str]:
    out = {"padding": p.mode}
    if p.box is not None:
        out["padding_box"] = " ".join(repr(float(v)) for lohi in p.box for v in lohi)
    if p.resolution is not None:
        out["padding_resolution"] = " ".join(str(n) for n in p.resolution)
    if p.t_range is not None:
        out["padding_t_range"] = " ".join(repr(float(v)) for v in p.t_range)
    if p.n_t is not None:
        out["padding_n_t"] = str(p.n_t)
    return out


def build_trainset(label_db: SnapshotDB, *, bulk_T_fraction: float, boundary_faces: Sequence[str],
                   boundary_fraction: float, ic_fraction: float, n_R: int | None,
                   padding: PaddingSpec | None = None, placement: str = "on-grid", seed: int = 0,
                   residual_db: SnapshotDB | None = None, extra: Mapping[str, str] | None = None) -> TrainingSet:
    """Labels from ``label_db`` plus residual points from ``residual_db`` (default: the same grid).

    ``n_R=None`` means one residual point per label record.
    """
    padding = padding or PaddingSpec()
    labels = make_labels(label_db, bulk_T_fraction, boundary_faces, boundary_fraction, ic_fraction, seed)
    n_R = len(labels) if n_R is None else int(n_R)
    rdb = residual_db if residual_db is not None else label_db
    if residual_db is not None:
        _check_contains(rdb, label_db)
    residual = make_residual_points(rdb, n_R, padding, placement, seed)
    manifest = {
        "bulk_T_fraction": repr(float(bulk_T_fraction)),
        "boundary_faces": " ".join(boundary_faces),
        "boundary_fraction": repr(float(boundary_fraction)),
        "ic_fraction": repr(float(ic_fraction)),
        "n_L": str(len(labels)),
        "n_R": str(n_R),
        "placement": placement,
        "seed": str(seed),
    }
    manifest.update(padding_to_manifest(padding))
    manifest.update(extra or {})
    return TrainingSet(labels, residual, label_db.dim, manifest)


def rebuild_trainset(manifest: Mapping[str, str], label_db: SnapshotDB,
                     residual_db: SnapshotDB | None = None) -> TrainingSet:
    """Recreate a training set from its manifest and source database(s)."""
    m = dict(manifest)
    extra = {k: v for k, v in m.items() if k not in _MANIFEST_CORE and not k.startswith("padding")}
    return build_trainset(
        label_db,
        bulk_T_fraction=float(m["bulk_T_fraction"]),
        boundary_faces=m["boundary_faces"].split(),
        boundary_fraction=float(m["boundary_fraction"]),
        ic_fraction=float(m["ic_fraction"]),
        n_R=int(m["n_R"]),
        padding=padding_from_manifest(m),
        placement=m.get("placement", "on-grid"),
        seed=int(m["seed"]),
        residual_db=residual_db,
        extra=extra,
    )


_MANIFEST_CORE = {"bulk_T_fraction", "boundary_faces", "boundary_fraction", "ic_fraction", "n_L", "n_R",
                  "placement", "seed"}


def _check_contains(outer: SnapshotDB, inner: SnapshotDB) -> None:
    tol = 1e-12
    for (lo, hi), (ilo, ihi) in zip(outer.box(), inner.box()):
        if lo > ilo + tol or hi < ihi - tol:
            raise ConfigError(f"residual grid {outer.box()} does not cover the label box {inner.box()}")


# ---------------------------------------------------------------- minibatches


class BatchStream:
    """Deterministic, resumable minibatch schedule.

    Epoch ``e`` visits the labels in the order ``rng([seed, 0, e]).permutation``;
    residual batches are consecutive slices of an endless sequence of
    without-replacement passes (pass ``k`` permuted by ``rng([seed, 1, k])``),
    indexed by the global iteration count. Label and residual draws use
    separate generators and are therefore independent.
    """

    def __init__(self, n_L: int, n_R: int, MB: int, seed: int):
        if MB < 1 or MB > min(n_L, n_R):
            raise ConfigError(f"MB = {MB} must lie in [1, min(N_L, N_R) = {min(n_L, n_R)}]")
        self.n_L, self.n_R, self.MB, self.seed = n_L, n_R, MB, seed
        self._pass_cache: dict[int, np.ndarray] = {}

    @property
    def iterations_per_epoch(self) -> int:
        return -(-self.n_L // self.MB)

    def _pass(self, k: int) -> np.ndarray:
        if k not in self._pass_cache:
            if len(self._pass_cache) > 4:
                self._pass_cache.pop(min(self._pass_cache))
            self._pass_cache[k] = np.random.default_rng([self.seed, 1, k]).permutation(self.n_R)
        return self._pass_cache[k]

    def residual_batch(self, iteration: int) -> np.ndarray:
        start = iteration * self.MB
        out = []
        need = self.MB
        while need:
            k, off = divmod(start, self.n_R)
            take = min(need, self.n_R - off)
            out.append(self._pass(k)[off : off + take])
            start += take
            need -= take
        return np.concatenate(out) if len(out) > 1 else out[0]

    def epoch(self, e: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        perm = np.random.default_rng([self.seed, 0, e]).permutation(self.n_L)
        base = e * self.iterations_per_epoch
        for b in range(self.iterations_per_epoch):
            yield perm[b * self.MB : (b + 1) * self.MB], self.residual_batch(base + b)


def minibatch_iter(ts: TrainingSet, MB: int, epoch_seed: int, epoch: int = 0):
    """Batches of one epoch as ``(LabelSet, residual coords)`` pairs."""
    stream = BatchStream(ts.n_L, ts.n_R, MB, epoch_seed)
    for li, ri in stream.epoch(epoch):
        yield ts.labels.take(li), ts.residual[ri]


def total_iterations(n_L: int, MB: int, epochs: int) -> int:
    return -(-n_L // MB) * epochs
