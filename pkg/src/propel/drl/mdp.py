"""Unfixing decision process over period segments of a fix set.

The fixed variables are split into ``m`` subsets by planning period. A state
records which subsets were released back to the solver (inserted) and which
were ruled out (excluded); the model of a state keeps every other fixed
variable at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigError, DataError
from ..learn.prop import FixSet, build_reduced_mip
from ..metrics import primal_gap
from ..mip import MipInstance
from ..scp import ScpInstance, parse_name

INSERT, EXCLUDE = "insert", "exclude"


def segment_widths(n_periods: int, m: int) -> tuple[int, ...]:
    """Equal-width period segments; leftover periods go to the earliest segments."""
    if m < 1:
        raise ConfigError("partition size m must be at least 1")
    base, extra = divmod(n_periods, m)
    return tuple(base + (1 if k < extra else 0) for k in range(m))


@dataclass(frozen=True)
class Partition:
    subsets: tuple[tuple[int, ...], ...]
    bounds: tuple[tuple[int, int], ...]  # [start, stop) periods per subset

    @property
    def m(self) -> int:
        return len(self.subsets)

    def members(self, chosen) -> tuple[int, ...]:
        out: list[int] = []
        for k in sorted(chosen):
            out.extend(self.subsets[k])
        return tuple(sorted(out))


def partition_fix_set(fix, m: int, var_periods, n_periods: int | None = None) -> Partition:
    """Split fixed columns into ``m`` contiguous period segments.

    ``var_periods`` maps a column index to its period (a mapping or a sequence
    indexed by column).
    """
    idx = fix.indices if isinstance(fix, FixSet) else tuple(fix)
    if n_periods is None:
        n_periods = 1 + max((int(var_periods[k]) for k in idx), default=0)
    widths = segment_widths(n_periods, m)
    bounds = []
    start = 0
    for w in widths:
        bounds.append((start, start + w))
        start += w
    seg_of = np.empty(n_periods, dtype=int)
    for s, (a, b) in enumerate(bounds):
        seg_of[a:b] = s
    subsets: list[list[int]] = [[] for _ in range(m)]
    for k in idx:
        t = int(var_periods[k])
        if not 0 <= t < n_periods:
            raise DataError(f"column {k} has period {t} outside the horizon")
        subsets[seg_of[t]].append(int(k))
    return Partition(tuple(tuple(sorted(s)) for s in subsets), tuple(bounds))


def mip_periods(mip: MipInstance) -> np.ndarray:
    return np.array([parse_name(v.name)[2] for v in mip.vars])


@dataclass(frozen=True)
class Action:
    kind: str
    subset: int

    def code(self, m: int) -> int:
        return self.subset if self.kind == INSERT else m + self.subset

    @classmethod
    def from_code(cls, a: int, m: int) -> "Action":
        return cls(INSERT, a) if a < m else cls(EXCLUDE, a - m)


@dataclass(frozen=True)
class RlState:
    """``<d, I, E>`` plus the cached outcome of solving the state's model."""

    instance: str
    inserted: frozenset = frozenset()
    excluded: frozenset = frozenset()
    gap: float = 1.0
    objective: float = math.inf
    solution: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.inserted & self.excluded:
            raise DataError("a subset cannot be both inserted and excluded")

    @property
    def has_incumbent(self) -> bool:
        return self.solution is not None

    def available(self, m: int) -> list[int]:
        decided = self.inserted | self.excluded
        return [k for k in range(m) if k not in decided]

    def actions(self, m: int) -> list[Action]:
        av = self.available(m)
        return [Action(INSERT, k) for k in av] + [Action(EXCLUDE, k) for k in av]


def transition(s: RlState, a: Action, m: int | None = None) -> RlState:
    """Record the decision; the solve outcome is attached by the caller."""
    if a.kind not in (INSERT, EXCLUDE):
        raise DataError(f"unknown action kind {a.kind!r}")
    if m is not None and not 0 <= a.subset < m:
        raise DataError(f"subset {a.subset} outside [0, {m})")
    if a.subset in s.inserted or a.subset in s.excluded:
        raise DataError(f"subset {a.subset} was already decided")
    if a.kind == INSERT:
        return RlState(s.instance, s.inserted | {a.subset}, s.excluded, s.gap, s.objective, s.solution)
    return RlState(s.instance, s.inserted, s.excluded | {a.subset}, s.gap, s.objective, s.solution)


def state_mip(s: RlState, fix, p: Partition, base: MipInstance) -> MipInstance:
    """``base`` with the fix set, minus the inserted subsets, held at zero."""
    idx = fix.indices if isinstance(fix, FixSet) else tuple(fix)
    released = set(p.members(s.inserted))
    return build_reduced_mip(base, [k for k in idx if k not in released])


def encode_state(s: RlState, inst: ScpInstance, p: Partition, gap: float | None = None) -> np.ndarray:
    """Membership flags, subset sizes, segment demand shares and current gap.

    Layout: I flags (m), E flags (m), subset size / fix-set size (m), share of
    total demand in each segment (m), gap (1).
    """
    m = p.m
    vec = np.zeros(4 * m + 1)
    for k in s.inserted:
        vec[k] = 1.0
    for k in s.excluded:
        vec[m + k] = 1.0
    total_fix = max(1, sum(len(v) for v in p.subsets))
    vec[2 * m:3 * m] = [len(v) / total_fix for v in p.subsets]
    D = np.asarray(inst.demand, dtype=float)
    total = D.sum()
    if total > 0:
        vec[3 * m:4 * m] = [D[:, a:b].sum() / total for a, b in p.bounds]
    vec[4 * m] = s.gap if gap is None else gap
    return vec


NO_INCUMBENT = {"objective": -2.0, "gap": -1.0}


def reward(s_next: RlState, lp_star: float, sense: str = "min", mode: str = "objective",
           normalize: bool = True) -> float:
    """Higher is better for both senses.

    ``objective`` mode: sense-signed objective of the state's model, divided by
    |LP*| when ``normalize`` and LP* is nonzero. ``gap`` mode: minus the primal
    gap. Without an incumbent the reward is -2 (objective mode, min sense and
    normalised) or -1 (gap mode).
    """
    if mode not in ("objective", "gap"):
        raise ConfigError(f"unknown reward mode {mode!r}")
    if mode == "gap":
        return -primal_gap(s_next.objective, lp_star) if s_next.has_incumbent else NO_INCUMBENT["gap"]
    if not s_next.has_incumbent:
        return NO_INCUMBENT["objective"]
    val = s_next.objective if sense == "max" else -s_next.objective
    if normalize and lp_star != 0:
        val /= abs(lp_star)
    return float(val)
