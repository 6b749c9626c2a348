"""Sampling manufactured solutions onto snapshot databases."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..dataset import SnapshotDB
from .manufactured import ManufacturedSolution


def manufactured_db(ms: ManufacturedSolution, resolution: Sequence[int], times: Sequence[float],
                    box: Sequence[tuple[float, float]] | None = None) -> SnapshotDB:
    """Exact fields of ``ms`` on an inclusive grid over ``box`` (default: the solution's box)."""
    box = tuple(box) if box is not None else ms.box
    times = np.asarray(times, dtype=np.float64)
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(box, resolution)]
    mesh = np.meshgrid(*axes, indexing="ij")
    fields = {}
    for name in ms.field_names:
        fields[name] = np.stack([ms.field(name, *mesh, np.full(mesh[0].shape, t)) for t in times])
    return SnapshotDB(box, tuple(resolution), times, fields, ms.Ra, ms.Pr, ms.provenance())
