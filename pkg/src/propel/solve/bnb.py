"""LP-based branch and bound with incumbent traces.

Most-fractional branching. Node selection is best-bound, except that until the
first incumbent exists the search plunges depth-first (rounding direction
first) because an early incumbent dominates the primal integral.
"""

from __future__ import annotations

import heapq
import logging
import math

import numpy as np

from ..exceptions import SolverError
from ..mip import MipInstance, ensure_valid
from ._types import INT_TOL, MipResult, SolveClock, SolveLimits
from .lp import LpModel

log = logging.getLogger(__name__)


def _prune_tol(best: float) -> float:
    return 1e-9 * max(1.0, abs(best))


def solve_mip(
    mip: MipInstance,
    lim: SolveLimits | None = None,
    warm_start: np.ndarray | None = None,
    clock: SolveClock | None = None,
) -> MipResult:
    """Solve ``mip`` to within ``lim.rel_gap``.

    ``warm_start`` is a full solution vector; when feasible it becomes the
    initial incumbent (recorded in the trace at the start time). ``clock`` may
    be shared with earlier work so trace timestamps continue from it.
    """
    ensure_valid(mip)
    lim = lim or SolveLimits()
    clock = clock or SolveClock(lim.deterministic_clock)
    start = clock.now()
    sign = -1.0 if mip.sense == "max" else 1.0
    ints = mip.integer_indices
    model = LpModel(mip)
    root_lb = mip.lower[ints].copy()
    root_ub = mip.upper[ints].copy()

    best = math.inf  # minimisation form
    best_x: np.ndarray | None = None
    trace: list[tuple[float, float]] = []

    def record(x: np.ndarray, obj_min: float) -> None:
        nonlocal best, best_x
        best, best_x = obj_min, x
        trace.append((clock.now(), sign * obj_min))

    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float).copy()
        if mip.is_feasible(ws):
            ws[ints] = np.round(ws[ints])
            record(ws, sign * mip.objective_value(ws))
        else:
            log.warning("warm start rejected: infeasible for %s", mip.name)

    # node = (bound, seq, lb, ub)
    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []
    seq = 0
    dive: tuple[float, int, np.ndarray, np.ndarray] | None = (-math.inf, seq, root_lb, root_ub)
    nodes = 0
    status = None
    root_infeasible = False

    def global_bound() -> float:
        cands = [best]
        if heap:
            cands.append(heap[0][0])
        if dive is not None:
            cands.append(dive[0])
        return min(cands)

    def gap_closed() -> bool:
        if best_x is None:
            return False
        gb = global_bound()
        return best - gb <= max(lim.rel_gap * abs(best), _prune_tol(best))

    while dive is not None or heap:
        if gap_closed():
            status = "optimal"
            break
        if clock.now() - start >= lim.time_limit:
            status = "time_limit"
            break
        if lim.node_limit is not None and nodes >= lim.node_limit:
            status = "feasible" if best_x is not None else "time_limit"
            break
        if dive is not None:
            node, dive = dive, None
        else:
            node = heapq.heappop(heap)
        bound, _, lb, ub = node
        if bound >= best - _prune_tol(best):
            continue
        model.set_bounds(lb, ub, ints)
        lp = model.solve(clock, want_duals=False)
        nodes += 1
        if lp.status == "unbounded":
            raise SolverError("LP relaxation unbounded; branch and bound needs a bounded relaxation")
        if lp.status != "optimal":
            if nodes == 1:
                root_infeasible = True
            continue
        obj = sign * lp.objective
        if obj >= best - _prune_tol(best):
            continue
        xi = lp.primal[ints]
        frac = np.abs(xi - np.round(xi))
        if not np.any(frac > INT_TOL):
            x = lp.primal.copy()
            x[ints] = np.round(xi)
            record(x, obj)
            continue
        # most fractional, lowest index on ties
        dist = np.abs((xi - np.floor(xi)) - 0.5)
        dist[frac <= INT_TOL] = np.inf
        k = int(np.argmin(dist))
        v = xi[k]
        if best_x is None:
            # plunge into the nearest integer value; the two sides stay open
            r = math.floor(v) + (1 if v - math.floor(v) > 0.5 else 0)
            mid_lb, mid_ub = lb.copy(), ub.copy()
            mid_lb[k] = mid_ub[k] = r
            dive = (obj, seq + 1, mid_lb, mid_ub)
            seq += 1
            for lo_k, hi_k in ((lb[k], r - 1), (r + 1, ub[k])):
                if lo_k <= hi_k:
                    side_lb, side_ub = lb.copy(), ub.copy()
                    side_lb[k], side_ub[k] = lo_k, hi_k
                    seq += 1
                    heapq.heappush(heap, (obj, seq, side_lb, side_ub))
        else:
            down_ub = ub.copy()
            down_ub[k] = math.floor(v)
            up_lb = lb.copy()
            up_lb[k] = math.ceil(v)
            heapq.heappush(heap, (obj, seq + 1, lb, down_ub))
            heapq.heappush(heap, (obj, seq + 2, up_lb, ub))
            seq += 2

    if status is None:
        status = "optimal" if best_x is not None else "infeasible"
    bound = global_bound() if status != "infeasible" else math.inf
    if status == "infeasible" and root_infeasible:
        log.debug("%s: root relaxation infeasible", mip.name)
    if best_x is None and status == "optimal":
        status = "infeasible"
    return MipResult(
        status=status,
        best_solution=best_x,
        best_objective=sign * best,
        bound=sign * bound,
        trace=trace,
        node_count=nodes,
        end_time=clock.now(),
    )
