"""Analytic velocity/pressure/temperature fields with their exact forcing.

The velocity is built from a streamfunction so it is divergence-free by
construction. The forcing of each equation is obtained by symbolic
differentiation (sympy), i.e. independently of the autodiff engine that later
evaluates the network residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import sympy as sp

from .. import autodiff as ad
from ..physics import SPATIAL_AXES, FluidParams, equation_names

DEFAULTS = {
    2: {"A": 1.0, "omega": 1.0, "C": 0.3, "P": 0.5},
    3: {"A": 1.0, "omega": 1.0, "C": 0.3, "P": 0.5, "B": 0.5},
}


@dataclass
class ManufacturedSolution:
    """A closed-form solution of the forced Boussinesq system.

    Two-dimensional fields (``A``, ``omega``, ``C``, ``P`` are amplitudes/rate)::

        psi  = A sin(pi x) sin(pi z) cos(omega t)
        v    = (d psi/dz, -d psi/dx)
        T    = 1 - z + C sin(pi z) cos(pi x - omega t)
        p    = P cos(pi x) cos(pi z) (1 + sin(omega t) / 2)

    In 3-D, psi gains a ``cos(pi y / 2)`` factor and ``vy = B sin(pi x)
    sin(pi z) cos(omega t)`` (independent of y, so still divergence-free).
    ``C <= 1/pi`` keeps T within [0, 1].
    """

    Ra: float = 1.0e4
    Pr: float = 1.0
    dim: int = 2
    params: dict = field(default_factory=dict)
    box: tuple = ()
    t_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        merged = dict(DEFAULTS[self.dim])
        merged.update(self.params)
        self.params = {k: float(v) for k, v in merged.items()}
        if not self.box:
            self.box = tuple((0.0, 1.0) for _ in range(self.dim))
        self.fluid = FluidParams(self.Ra, self.Pr, self.dim)
        self._build()

    # ------------------------------------------------------------ symbolic

    def _build(self) -> None:
        axes = SPATIAL_AXES[self.dim]
        syms = sp.symbols(" ".join(axes + ("t",)), real=True)
        self.symbols = syms
        s = dict(zip(axes + ("t",), syms))
        x, z, t = s["x"], s["z"], s["t"]
        q = {k: sp.nsimplify(v) if float(v).is_integer() else sp.Float(v) for k, v in self.params.items()}
        pi = sp.pi
        fields: dict[str, sp.Expr] = {}
        if self.dim == 2:
            psi = q["A"] * sp.sin(pi * x) * sp.sin(pi * z) * sp.cos(q["omega"] * t)
            fields["vx"] = sp.diff(psi, z)
            fields["vz"] = -sp.diff(psi, x)
        else:
            y = s["y"]
            psi = q["A"] * sp.sin(pi * x) * sp.sin(pi * z) * sp.cos(pi * y / 2) * sp.cos(q["omega"] * t)
            fields["vx"] = sp.diff(psi, z)
            fields["vy"] = q["B"] * sp.sin(pi * x) * sp.sin(pi * z) * sp.cos(q["omega"] * t)
            fields["vz"] = -sp.diff(psi, x)
        fields["T"] = 1 - z + q["C"] * sp.sin(pi * z) * sp.cos(pi * x - q["omega"] * t)
        fields["p"] = q["P"] * sp.cos(pi * x) * sp.cos(pi * z) * (1 + sp.sin(q["omega"] * t) / 2)
        fields["Tbar"] = 1 - fields["T"]
        self.sym_fields = fields
        self.sym_forcing = self._forcing(fields, s, axes)
        args = list(syms)
        self._np_fields = {k: _lambdify(args, v) for k, v in fields.items()}
        self._np_forcing = {k: _lambdify(args, v) for k, v in self.sym_forcing.items()}

    def _forcing(self, f, s, axes) -> dict[str, sp.Expr]:
        nu = sp.Float(self.fluid.viscosity)
        kappa = sp.Float(self.fluid.diffusivity)
        Pr = sp.Float(self.Pr)
        t = s["t"]

        def transport(u, diff):
            adv = sp.diff(u, t) + sum(f[f"v{a}"] * sp.diff(u, s[a]) for a in axes)
            lap = sum(sp.diff(u, s[a], 2) for a in axes)
            return adv - diff * lap

        out = {"T": transport(f["T"], kappa), "Tbar": transport(f["Tbar"], kappa)}
        for a, g in zip(axes, self.fluid.gravity):
            r = transport(f[f"v{a}"], nu) + sp.diff(f["p"], s[a])
            if g:
                r = r - Pr * sp.Float(g) * f["T"]
            out[f"m{a}"] = r
        out["div"] = sum(sp.diff(f[f"v{a}"], s[a]) for a in axes)
        return {k: sp.expand(out[k]) if k == "div" else out[k] for k in equation_names(self.dim)}

    # ------------------------------------------------------------ numeric

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(f"v{a}" for a in SPATIAL_AXES[self.dim]) + ("p", "T")

    def field(self, name: str, *coords) -> np.ndarray:
        return _broadcast(self._np_fields[name](*coords), coords)

    def forcing(self) -> dict[str, callable]:
        """Numeric forcing callables keyed by equation name."""
        return {k: _Broadcasting(fn) for k, fn in self._np_forcing.items()}

    def as_exprs(self, coords: Mapping[str, ad.Expr]) -> dict[str, ad.Expr]:
        """The exact fields as autodiff graphs over the given input variables."""
        axes = SPATIAL_AXES[self.dim]
        env = {sym: coords[name] for sym, name in zip(self.symbols, axes + ("t",))}
        return {k: sympy_to_expr(v, env) for k, v in self.sym_fields.items()}

    # ------------------------------------------------------------ provenance

    def provenance(self) -> str:
        items = [f"dim={self.dim}", f"Ra={self.Ra!r}", f"Pr={self.Pr!r}"]
        items += [f"{k}={v!r}" for k, v in sorted(self.params.items())]
        return "manufactured;" + ";".join(items)

    @classmethod
    def from_provenance(cls, text: str) -> "ManufacturedSolution":
        head, _, rest = text.partition(";")
        if head != "manufactured":
            raise ValueError(f"not a manufactured-solution provenance: {text!r}")
        kv = dict(item.split("=", 1) for item in rest.split(";") if item)
        dim = int(kv.pop("dim"))
        Ra = float(kv.pop("Ra"))
        Pr = float(kv.pop("Pr"))
        return cls(Ra=Ra, Pr=Pr, dim=dim, params={k: float(v) for k, v in kv.items()})


class _Broadcasting:
    """Wraps a lambdified function so constant results still come back per-point."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, *coords):
        return _broadcast(self.fn(*coords), coords)


def _broadcast(v, coords) -> np.ndarray:
    shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
    return np.broadcast_to(np.asarray(v, dtype=np.float64), shape).copy()


def _lambdify(args, expr):
    return sp.lambdify(args, expr, modules="numpy")


def sympy_to_expr(e: sp.Expr, env: Mapping[sp.Symbol, ad.Expr]) -> ad.Expr:
    """Translate a sympy expression (sums, products, integer powers, sin/cos/exp) to a graph."""
    if e.is_Symbol:
        return env[e]
    if e.is_Number or e.is_NumberSymbol:
        return ad.const(float(e))
    if e.is_Add:
        terms = [sympy_to_expr(a, env) for a in e.args]
        out = terms[0]
        for term in terms[1:]:
            out = ad.add(out, term)
        return out
    if e.is_Mul:
        coeff, rest = e.as_coeff_Mul()
        factors = [sympy_to_expr(a, env) for a in sp.Mul.make_args(rest)]
        out = factors[0]
        for fct in factors[1:]:
            out = ad.mul(out, fct)
        return ad.scale(out, float(coeff)) if coeff != 1 else out
    if e.is_Pow:
        base, expo = e.args
        if expo.is_Integer and int(expo) >= 0:
            return ad.powi(sympy_to_expr(base, env), int(expo))
        raise ValueError(f"unsupported power {e}")
    if isinstance(e, sp.sin):
        return ad.sin(sympy_to_expr(e.args[0], env))
    if isinstance(e, sp.cos):
        return ad.cos(sympy_to_expr(e.args[0], env))
    if isinstance(e, sp.exp):
        return ad.exp(sympy_to_expr(e.args[0], env))
    raise ValueError(f"cannot translate {type(e).__name__}: {e}")
