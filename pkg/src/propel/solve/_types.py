from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigError

INT_TOL = 1e-6


@dataclass(frozen=True)
class SolveLimits:
    """Termination settings for one solve.

    With ``deterministic_clock`` the time limit is counted in ticks
    (one branch-and-bound node = one tick) instead of seconds.
    """

    time_limit: float = math.inf
    rel_gap: float = 0.01
    node_limit: int | None = None
    deterministic_clock: bool = False

    def __post_init__(self):
        if not self.time_limit > 0:
            raise ConfigError(f"time_limit must be positive, got {self.time_limit}")
        if not 0 <= self.rel_gap < 1:
            raise ConfigError(f"rel_gap must lie in [0, 1), got {self.rel_gap}")
        if self.node_limit is not None and self.node_limit < 1:
            raise ConfigError("node_limit must be at least 1")


class SolveClock:
    """Wall clock, or a tick counter advanced once per LP solve."""

    def __init__(self, deterministic: bool = False):
        self.deterministic = deterministic
        self.ticks = 0
        self._t0 = time.perf_counter()

    def tick(self, n: int = 1) -> None:
        self.ticks += n

    def now(self) -> float:
        if self.deterministic:
            return float(self.ticks)
        return time.perf_counter() - self._t0


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded
    primal: np.ndarray
    objective: float
    reduced_costs: np.ndarray
    duals: np.ndarray
    col_status: tuple[str, ...] = ()  # basic | lower | upper | zero per column

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class MipResult:
    status: str  # optimal | feasible | infeasible | time_limit
    best_solution: np.ndarray | None
    best_objective: float
    bound: float
    trace: list[tuple[float, float]] = field(default_factory=list)
    node_count: int = 0
    end_time: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def has_incumbent(self) -> bool:
        return self.best_solution is not None

    @property
    def gap(self) -> float:
        """Relative gap between incumbent and bound, solver-style."""
        if not self.has_incumbent:
            return math.inf
        denom = abs(self.best_objective)
        diff = abs(self.best_objective - self.bound)
        if denom == 0:
            return 0.0 if diff == 0 else math.inf
        return diff / denom
