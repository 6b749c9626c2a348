"""Time the compiled kernels against the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N wall time of each backend and
the speed-up, then a whole-solver comparison (one Rayleigh-Benard step at
64x64) and a training-step comparison under each backend selection.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from rbpinn import kernels as K
from rbpinn.kernels import _pykernels as P


def best(fn, repeat: int, number: int) -> float:
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_table(repeat: int) -> list[tuple[str, float, float | None]]:
    rng = np.random.default_rng(0)
    z, g, a, b = (rng.normal(size=(2000, 50)) for _ in range(4))
    h = np.tanh(z)
    q, u, w = (rng.normal(size=(68, 68)) for _ in range(3))
    cases = {
        "tanh_forward": (z,),
        "omsq_forward": (h,),
        "tanh_backward": (g, h),
        "omsq_backward": (g, h),
        "mul_backward": (g, a, b),
        "laplacian": (q, 1 / 64, 1 / 64),
        "vanleer_advect": (q, u, w, 1 / 64, 1 / 64),
        "momentum_advect": (u, w, 1 / 64, 1 / 64),
    }
    rows = []
    for name, args in cases.items():
        tp = best(lambda: getattr(P, name)(*args), repeat, 20)
        tc = best(lambda: getattr(K.compiled, name)(*args), repeat, 20) if K.compiled else None
        rows.append((name, tp, tc))
    return rows


SNIPPETS = {
    "solver step 64x64": (
        "from rbpinn.refsolver import Solver, SolverConfig\n"
        "s = Solver(SolverConfig()); st = s.initial_state()\n"
        "for _ in range(3): st = s.step(st)",
        "s.step(st)", 20),
    "PINN value_and_grad (3,50x6,5), 2x512 pts": (
        "import numpy as np\n"
        "from rbpinn.refsolver import ManufacturedSolution\n"
        "from rbpinn.network import Architecture, Surrogate\n"
        "from rbpinn.dataset import LabelSet\n"
        "from rbpinn.training import LossConfig, batch_bindings, build_loss\n"
        "ms = ManufacturedSolution()\n"
        "m = Surrogate.create(Architecture.mlp(3, 50, 6, 5), [(0.0, 1.0)] * 3, 0)\n"
        "lg = build_loss(m, ms.fluid, LossConfig.standard(), ms.forcing())\n"
        "rng = np.random.default_rng(0); x = rng.uniform(size=(512, 3))\n"
        "lab = LabelSet(x, rng.normal(size=(512, 5)), np.ones((512, 5), bool), np.arange(512),"
        " np.zeros(512, np.uint8), m.output_names)\n"
        "b = batch_bindings(lg, m.params.as_dict(), lab, x)\n"
        "lg.program.value_and_grad(b, lg.total)",
        "lg.program.value_and_grad(b, lg.total)", 3),
}


def backend_time(setup: str, stmt: str, number: int, backend: str, repeat: int) -> float | None:
    code = (f"import timeit\n{setup}\n"
            f"print(min(timeit.repeat({stmt!r}, globals=globals(), repeat={repeat}, number={number})) / {number})")
    env = {**os.environ, "RBPINN_KERNELS": backend}
    r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    if r.returncode != 0:
        return None
    return float(r.stdout.strip().splitlines()[-1])


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"default backend selection: {K.BACKEND}")
    print(f"{'kernel':<18}{'numpy [us]':>12}{'cython [us]':>13}{'speed-up':>10}  default")
    for name, tp, tc in kernel_table(args.repeat):
        cs = f"{tc * 1e6:13.1f}" if tc else f"{'n/a':>13}"
        sp = f"{tp / tc:10.2f}" if tc else f"{'n/a':>10}"
        print(f"{name:<18}{tp * 1e6:12.1f}{cs}{sp}  {K.source_of(name)}")
    print()
    print(f"{'workload':<40}" + "".join(f"{b:>12}" for b in ("python", "cython", "auto")) + "   [ms]")
    for label, (setup, stmt, number) in SNIPPETS.items():
        times = [backend_time(setup, stmt, number, b, args.repeat) for b in ("python", "cython", "auto")]
        print(f"{label:<40}" + "".join(f"{t * 1e3:12.2f}" if t else f"{'n/a':>12}" for t in times))


if __name__ == "__main__":
    main()
