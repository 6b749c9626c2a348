"""Ground-truth data: manufactured solutions and a 2-D staggered-grid solver."""

from .manufactured import ManufacturedSolution, sympy_to_expr
from .solver import Diagnostics, Solver, SolverConfig, solve_boussinesq_2d, taylor_green_run
from .sampling import manufactured_db

__all__ = ["Diagnostics", "ManufacturedSolution", "Solver", "SolverConfig", "manufactured_db",
           "solve_boussinesq_2d", "sympy_to_expr", "taylor_green_run"]
