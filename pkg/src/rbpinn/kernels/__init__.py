"""Hot numerical kernels with a compiled backend and a NumPy fallback.

Two kernel families exist: elementwise autodiff kernels (``tanh_forward``,
``omsq_forward``, ``tanh_backward``, ``omsq_backward``, ``mul_backward``) and
solver stencils (``vanleer_advect``, ``momentum_advect``, ``laplacian``).

``RBPINN_KERNELS`` selects the backend:

* ``auto`` (default): stencils from the compiled extension when it imports,
  elementwise kernels from NumPy (its vectorized ``tanh`` beats a scalar C
  loop; see ``benchmarks/bench_kernels.py``);
* ``cython``: every kernel from the extension (raises if it is missing);
* ``python``: every kernel from NumPy.
"""

import os

from . import _pykernels

ELEMENTWISE = ("tanh_forward", "omsq_forward", "tanh_backward", "omsq_backward", "mul_backward")
STENCILS = ("vanleer_advect", "momentum_advect", "laplacian")

_requested = os.environ.get("RBPINN_KERNELS", "auto").lower()
if _requested not in ("auto", "cython", "python"):
    raise ImportError(f"RBPINN_KERNELS must be auto, cython or python, not {_requested!r}")

compiled = None
if _requested != "python":
    try:
        from . import _ckernels as compiled
    except ImportError:
        if _requested == "cython":
            raise

if compiled is None:
    BACKEND = "python"
    _sources = {name: _pykernels for name in ELEMENTWISE + STENCILS}
elif _requested == "cython":
    BACKEND = "cython"
    _sources = {name: compiled for name in ELEMENTWISE + STENCILS}
else:
    BACKEND = "mixed"
    _sources = {**{n: _pykernels for n in ELEMENTWISE}, **{n: compiled for n in STENCILS}}

for _name, _mod in _sources.items():
    globals()[_name] = getattr(_mod, _name)


def source_of(name: str) -> str:
    """Which implementation backs kernel ``name`` ('cython' or 'python')."""
    return "cython" if _sources[name] is compiled else "python"


__all__ = list(ELEMENTWISE + STENCILS) + ["BACKEND", "compiled", "source_of"]
