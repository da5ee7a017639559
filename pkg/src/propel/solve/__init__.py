"""LP relaxation, branch and bound, brute-force oracle and external-solver adapter."""

from ._types import INT_TOL, LpSolution, MipResult, SolveClock, SolveLimits
from .bnb import solve_mip
from .brute import brute_force, enumeration_size
from .external import external_solve, format_solution, parse_solution
from .lp import LpModel, solve_lp

__all__ = [
    "INT_TOL", "LpModel", "LpSolution", "MipResult", "SolveClock", "SolveLimits",
    "brute_force", "enumeration_size", "external_solve", "format_solution",
    "parse_solution", "solve_lp", "solve_mip",
]
