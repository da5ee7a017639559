"""Primal-side quality measures: primal gap, gap over time, primal integral.

All measures are taken against the root LP bound of the original model, shared
by every method compared on an instance.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .exceptions import DataError

RESULT_COLUMNS = ("instance", "method", "pi", "pg", "rt", "n_fixed", "n_int")


def primal_gap(obj: float, lp_star: float) -> float:
    """Gap in [0, 1] between an objective value and the LP bound."""
    if obj == 0 and lp_star == 0:
        return 0.0
    if not math.isfinite(obj):
        return 1.0
    if lp_star * obj < 0:
        return 1.0
    return abs(obj - lp_star) / max(abs(obj), abs(lp_star))


@dataclass(frozen=True)
class GapTrace:
    """Incumbent events ``(t, objective)`` of one run on ``[0, horizon]``."""

    lp_star: float
    entries: tuple[tuple[float, float], ...]
    horizon: float
    gaps: tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self):
        ent = tuple((float(t), float(o)) for t, o in self.entries)
        if self.horizon < 0:
            raise DataError("horizon must be nonnegative")
        prev = 0.0
        for t, _ in ent:
            if t < prev:
                raise DataError("trace times must be nondecreasing and start at 0 or later")
            prev = t
        object.__setattr__(self, "entries", ent)
        object.__setattr__(self, "gaps", tuple(primal_gap(o, self.lp_star) for _, o in ent))

    @classmethod
    def from_trace(cls, lp_star: float, trace: Iterable[tuple[float, float]], horizon: float,
                   offset: float = 0.0) -> "GapTrace":
        """Shift times by ``-offset`` and drop events after the horizon."""
        ent = [(t - offset, o) for t, o in trace if t - offset <= horizon]
        return cls(lp_star, tuple(ent), horizon)


def gap_at(trace: GapTrace, t: float) -> float:
    """Gap of the latest incumbent at or before ``t``; 1 before the first."""
    if not 0 <= t <= trace.horizon:
        raise DataError(f"time {t} outside [0, {trace.horizon}]")
    g = 1.0
    for (ti, _), gi in zip(trace.entries, trace.gaps):
        if ti > t:
            break
        g = gi
    return g


def primal_integral(trace: GapTrace, T: float | None = None) -> float:
    """Integral of the piecewise-constant gap function over ``[0, T]``."""
    T = trace.horizon if T is None else T
    if T > trace.horizon + 1e-12:
        raise DataError(f"T={T} exceeds the trace horizon {trace.horizon}")
    total, prev_t, p = 0.0, 0.0, 1.0
    for (ti, _), gi in zip(trace.entries, trace.gaps):
        if ti > T:
            break
        total += p * (ti - prev_t)
        prev_t, p = ti, gi
    return total + p * (T - prev_t)


def final_gap(trace: GapTrace, T: float | None = None) -> float:
    return gap_at(trace, trace.horizon if T is None else T)


def first_incumbent_time(trace: GapTrace) -> float:
    return trace.entries[0][0] if trace.entries else math.inf


# -- results CSV ------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    instance: str
    method: str
    pi: float
    pg: float
    rt: float
    n_fixed: int
    n_int: int


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def write_results(rows: Sequence[ResultRow], fh=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in RESULT_COLUMNS])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def read_results(text: str) -> list[ResultRow]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != RESULT_COLUMNS:
        raise DataError(f"results header must be {','.join(RESULT_COLUMNS)}")
    out = []
    for lineno, r in enumerate(rows[1:], 2):
        if not r:
            continue
        if len(r) != len(RESULT_COLUMNS):
            raise DataError(f"results row {lineno}: expected {len(RESULT_COLUMNS)} fields, got {len(r)}")
        try:
            out.append(ResultRow(r[0], r[1], float(r[2]), float(r[3]), float(r[4]), int(r[5]), int(r[6])))
        except ValueError as exc:
            raise DataError(f"results row {lineno}: {exc}") from None
    return out
