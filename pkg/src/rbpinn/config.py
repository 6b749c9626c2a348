"""INI run configuration: parsing helpers and section-to-object builders."""

from __future__ import annotations

import configparser
import hashlib
import io
import os
from typing import Sequence

from .dataset import PaddingSpec, default_faces
from .errors import ConfigError
from .network import Architecture
from .refsolver.solver import SolverConfig
from .training import DEFAULT_EPOCHS, DEFAULT_LR, LossConfig, Schedule

PATH_KEYS = {"label_db", "residual_db", "trainset", "model", "db", "runs", "init"}


class Config:
    """A parsed configuration file; relative paths resolve against its directory."""

    def __init__(self, text: str, base_dir: str = "."):
        self.text = text
        self.base_dir = os.path.abspath(base_dir)
        self.cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        self.cp.optionxform = str
        try:
            self.cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable configuration: {exc}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Config":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except FileNotFoundError as exc:
            raise ConfigError(f"configuration file not found: {path}") from exc
        return cls(text, os.path.dirname(os.path.abspath(path)))

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def section(self, name: str) -> "Section":
        if not self.cp.has_section(name):
            raise ConfigError(f"configuration has no [{name}] section")
        return Section(self, name)

    def has(self, name: str) -> bool:
        return self.cp.has_section(name)

    def resolved_text(self) -> str:
        """The configuration with every path made absolute (for run manifests)."""
        out = configparser.ConfigParser(interpolation=None)
        out.optionxform = str
        for sec in self.cp.sections():
            if sec == "manifest":
                continue
            out[sec] = {}
            for k, v in self.cp[sec].items():
                if k in PATH_KEYS:
                    v = " ".join(self._abs(p) for p in v.split())
                out[sec][k] = v
        buf = io.StringIO()
        out.write(buf)
        return buf.getvalue()

    def _abs(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))


class Section:
    def __init__(self, cfg: Config, name: str):
        self.cfg = cfg
        self.name = name
        self.raw = cfg.cp[name]

    def __contains__(self, key: str) -> bool:
        return key in self.raw

    def _get(self, key: str, default=None):
        if key in self.raw:
            return self.raw[key].strip()
        if default is None:
            raise ConfigError(f"[{self.name}] is missing required key {key!r}")
        return default

    def str(self, key: str, default: str | None = None) -> str:
        return self._get(key, default)

    def float(self, key: str, default: float | None = None) -> float:
        v = self._get(key, None if default is None else repr(default))
        try:
            return float(v)
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key} = {v!r} is not a number") from exc

    def int(self, key: str, default: int | None = None) -> int:
        v = self._get(key, None if default is None else str(default))
        try:
            return int(v)
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key} = {v!r} is not an integer") from exc

    def bool(self, key: str, default: bool | None = None) -> bool:
        v = self._get(key, None if default is None else str(default)).lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{self.name}] {key} = {v!r} is not a boolean")

    def floats(self, key: str, default: Sequence[float] | None = None) -> list[float]:
        v = self._get(key, None if default is None else " ".join(repr(x) for x in default))
        try:
            return [float(x) for x in v.replace(",", " ").split()]
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key} = {v!r} is not a list of numbers") from exc

    def ints(self, key: str, default: Sequence[int] | None = None) -> list[int]:
        return [int(x) for x in self.floats(key, default)]

    def words(self, key: str, default: Sequence[str] | None = None) -> list[str]:
        return self._get(key, None if default is None else " ".join(default)).replace(",", " ").split()

    def path(self, key: str, default: str | None = None) -> str:
        return self.cfg._abs(self._get(key, default))

    def paths(self, key: str) -> list[str]:
        return [self.cfg._abs(p) for p in self._get(key).split()]

    def box(self, key: str, dim: int | None = None) -> tuple[tuple[float, float], ...]:
        v = self.floats(key)
        if len(v) % 2 or (dim is not None and len(v) != 2 * dim):
            raise ConfigError(f"[{self.name}] {key} needs lo/hi pairs")
        return tuple(zip(v[0::2], v[1::2]))


# ---------------------------------------------------------------- builders


def solver_config(s: Section) -> SolverConfig:
    d = SolverConfig()
    return SolverConfig(
        nx=s.int("nx", d.nx), nz=s.int("nz", d.nz), Lx=s.float("Lx", d.Lx), Lz=s.float("Lz", d.Lz),
        Ra=s.float("Ra", d.Ra), Pr=s.float("Pr", d.Pr), dt=s.float("dt", d.dt), bc_z=s.str("bc_z", d.bc_z),
        T_bottom=s.float("T_bottom", d.T_bottom), T_top=s.float("T_top", d.T_top),
        buoyancy=s.bool("buoyancy", d.buoyancy), initial=s.str("initial", d.initial),
        perturbation=s.float("perturbation", d.perturbation), spinup=s.float("spinup", d.spinup),
        n_snapshots=s.int("n_snapshots", d.n_snapshots), snapshot_dt=s.float("snapshot_dt", d.snapshot_dt),
        seed=s.int("seed", d.seed))


def padding_spec(s: Section) -> PaddingSpec:
    mode = s.str("padding", "none")
    box = s.box("padding_box") if "padding_box" in s else None
    res = tuple(s.ints("padding_resolution")) if "padding_resolution" in s else None
    t_range = tuple(s.floats("padding_t_range")) if "padding_t_range" in s else None
    n_t = s.int("padding_n_t") if "padding_n_t" in s else None
    return PaddingSpec(mode, box, res, t_range, n_t)


def faces(s: Section, dim: int) -> list[str]:
    return s.words("boundary_faces", list(default_faces(dim)))


def architecture(s: Section, dim: int, n_out: int) -> Architecture:
    try:
        if "sizes" in s:
            arch = Architecture(tuple(s.ints("sizes")), s.str("activation", "tanh"))
        else:
            arch = Architecture.mlp(dim + 1, s.int("width", 50), s.int("depth", 6), n_out,
                                    s.str("activation", "tanh"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if arch.n_in != dim + 1 or arch.n_out != n_out:
        raise ConfigError(f"architecture {arch.sizes} does not fit {dim}-D data with {n_out} outputs")
    return arch


def loss_config(s: Section) -> LossConfig:
    weights = {}
    for eq in ("T", "Tbar", "mx", "my", "mz", "div"):
        key = f"lambda_{eq}"
        if key in s:
            weights[eq] = s.float(key)
    return LossConfig(mode=s.str("mode", "pinn"), lambda_label=s.float("lambda_label", 1.0), weights=weights,
                      div_form=s.str("div_form", "weight"), tau=s.float("tau", 0.0),
                      lambda_identity=s.float("lambda_identity", 0.0))


def schedule(s: Section) -> Schedule:
    epochs = s.ints("epochs", DEFAULT_EPOCHS)
    lrs = s.floats("learning_rates", DEFAULT_LR)
    if len(epochs) != len(lrs):
        raise ConfigError("epochs and learning_rates must have the same number of cycles")
    sched = Schedule(list(zip(epochs, lrs)), MB=s.int("MB", 2000), beta1=s.float("beta1", 0.9),
                     beta2=s.float("beta2", 0.999), delta=s.float("delta", 1e-8))
    if "total_epochs" in s:
        sched = sched.scaled(s.int("total_epochs"))
    return sched
