"""Residuals of the non-dimensional Boussinesq system as expression graphs.

    v_t + (v.grad) v = -grad p + Pr/sqrt(Ra) lap v + Pr T e_z
    T_t + v.grad T   = 1/sqrt(Ra) lap T
    div v            = 0

The auxiliary temperature Tbar (= 1 - T for an exact solution) obeys the same
transport equation as T and gets its own residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad

SPATIAL_AXES = {2: ("x", "z"), 3: ("x", "y", "z")}
MOMENTUM = {2: ("mx", "mz"), 3: ("mx", "my", "mz")}


def equation_names(dim: int) -> tuple[str, ...]:
    """Residual names in logging order."""
    return ("T", "Tbar") + MOMENTUM[dim] + ("div",)


class ConstructionError(ValueError):
    pass


@dataclass(frozen=True)
class FluidParams:
    Ra: float
    Pr: float
    dim: int = 2
    gravity: tuple[float, ...] | None = None  # unit vector e_z; defaults to the last axis

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if not (self.Ra > 0 and self.Pr > 0):
            raise ValueError(f"Ra and Pr must be positive (Ra={self.Ra}, Pr={self.Pr})")
        g = self.gravity
        if g is None:
            g = tuple(0.0 for _ in range(self.dim - 1)) + (1.0,)
            object.__setattr__(self, "gravity", g)
        if len(g) != self.dim or abs(math.hypot(*g) - 1.0) > 1e-12:
            raise ValueError(f"gravity direction must be a unit {self.dim}-vector, got {g}")

    @property
    def viscosity(self) -> float:
        return self.Pr / math.sqrt(self.Ra)

    @property
    def diffusivity(self) -> float:
        return 1.0 / math.sqrt(self.Ra)


Forcing = Mapping[str, Callable[..., np.ndarray]]
"""Optional analytic source per equation, called with the coordinate columns
``(x, [y,] z, t)`` as 1-D arrays."""


@dataclass
class ResidualSet:
    residuals: dict[str, ad.Expr]
    dim: int
    derivatives: dict[tuple[str, str, int], ad.Expr] = field(default_factory=dict)

    def __getitem__(self, name: str) -> ad.Expr:
        return self.residuals[name]

    def names(self) -> tuple[str, ...]:
        return tuple(self.residuals)


def convective_velocity(kappa: float, H: float, Ra: float) -> float:
    """Reference velocity ``(kappa / H) * sqrt(Ra)`` of the convective time unit."""
    if kappa <= 0 or H <= 0 or Ra <= 0:
        raise ValueError(f"diffusivity, length and Ra must be positive ({kappa}, {H}, {Ra})")
    return kappa / H * math.sqrt(Ra)


def build_residuals(fields: Mapping[str, ad.Expr], coords: Mapping[str, ad.Expr],
                    fp: FluidParams, forcing: Forcing | None = None) -> ResidualSet:
    """Residual expressions (LHS - RHS - forcing) of every equation.

    ``fields`` maps output names (``vx``, [``vy``,] ``vz``, ``p``, ``T``,
    ``Tbar``) to single-column expressions; ``coords`` maps ``x``, [``y``,]
    ``z``, ``t`` to the input variables they are functions of.
    """
    axes = SPATIAL_AXES[fp.dim]
    needed = tuple(f"v{a}" for a in axes) + ("p", "T", "Tbar")
    missing = [n for n in needed if n not in fields]
    if missing:
        raise ConstructionError(f"network provides no output for {missing}")
    missing = [a for a in axes + ("t",) if a not in coords]
    if missing:
        raise ConstructionError(f"no input variable for coordinate(s) {missing}")
    forcing = dict(forcing or {})
    unknown = set(forcing) - set(equation_names(fp.dim))
    if unknown:
        raise ConstructionError(f"forcing given for unknown equation(s) {sorted(unknown)}")

    cache: dict[tuple[str, str, int], ad.Expr] = {}

    def D(name: str, axis: str, order: int = 1) -> ad.Expr:
        key = (name, axis, order)
        if key not in cache:
            cache[key] = ad.d_input(fields[name], coords[axis], order)
        return cache[key]

    def transport(name: str, diff: float) -> ad.Expr:
        adv = D(name, "t")
        for a in axes:
            adv = ad.add(adv, ad.mul(fields[f"v{a}"], D(name, a)))
        lap = D(name, axes[0], 2)
        for a in axes[1:]:
            lap = ad.add(lap, D(name, a, 2))
        return ad.sub(adv, ad.scale(lap, diff))

    src_inputs = [coords[a] for a in axes + ("t",)]

    def minus_forcing(eq: str, r: ad.Expr) -> ad.Expr:
        fn = forcing.get(eq)
        if fn is None:
            return r
        return ad.sub(r, ad.source(fn, src_inputs, label=eq))

    res: dict[str, ad.Expr] = {}
    res["T"] = minus_forcing("T", transport("T", fp.diffusivity))
    res["Tbar"] = minus_forcing("Tbar", transport("Tbar", fp.diffusivity))
    for a, eq, g in zip(axes, MOMENTUM[fp.dim], fp.gravity):
        r = ad.add(transport(f"v{a}", fp.viscosity), D("p", a))
        if g != 0.0:
            r = ad.sub(r, ad.scale(fields["T"], fp.Pr * g))
        res[eq] = minus_forcing(eq, r)
    div = D(f"v{axes[0]}", axes[0])
    for a in axes[1:]:
        div = ad.add(div, D(f"v{a}", a))
    res["div"] = minus_forcing("div", div)
    ordered = {name: res[name] for name in equation_names(fp.dim)}
    return ResidualSet(ordered, fp.dim, cache)


def consistency_Tbar(fields: Mapping[str, ad.Expr]) -> ad.Expr:
    """Diagnostic ``T + Tbar - 1`` (zero for an exact solution)."""
    if "T" not in fields or "Tbar" not in fields:
        raise ConstructionError("outputs T and Tbar are both required")
    return ad.sub(ad.add(fields["T"], fields["Tbar"]), ad.const(1.0))
