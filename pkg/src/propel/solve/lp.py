"""LP relaxation with reduced costs and row duals.

The simplex work is delegated to HiGHS. ``LpModel`` keeps one HiGHS model alive
so branch-and-bound can change column bounds and re-solve from the previous
basis.
"""

from __future__ import annotations

import math

import highspy
import numpy as np

from ..exceptions import SolverError
from ..mip import MipInstance, ensure_valid
from ._types import LpSolution, SolveClock

_INF = highspy.kHighsInf
_STATUS_NAME = {
    highspy.HighsBasisStatus.kBasic: "basic",
    highspy.HighsBasisStatus.kLower: "lower",
    highspy.HighsBasisStatus.kUpper: "upper",
    highspy.HighsBasisStatus.kZero: "zero",
    highspy.HighsBasisStatus.kNonbasic: "lower",
}


def _clip(a: np.ndarray) -> np.ndarray:
    return np.clip(a, -_INF, _INF)


class LpModel:
    """Persistent LP relaxation of a MIP in minimisation form."""

    def __init__(self, mip: MipInstance):
        self.mip = mip
        self.sign = -1.0 if mip.sense == "max" else 1.0
        self.n = mip.n_vars
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("threads", 1)
        h.setOptionValue("presolve", "off")
        h.setOptionValue("random_seed", 0)
        lp = highspy.HighsLp()
        lp.num_col_ = mip.n_vars
        lp.num_row_ = mip.n_cons
        lp.col_cost_ = self.sign * mip.objective
        lp.col_lower_ = _clip(mip.lower)
        lp.col_upper_ = _clip(mip.upper)
        lo, hi = mip.row_bounds
        lp.row_lower_ = _clip(lo)
        lp.row_upper_ = _clip(hi)
        csc = mip.matrix.tocsc()
        csc.sort_indices()
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = csc.indptr.astype(np.int32)
        lp.a_matrix_.index_ = csc.indices.astype(np.int32)
        lp.a_matrix_.value_ = csc.data.astype(float)
        h.passModel(lp)
        self._h = h
        self._all_cols = np.arange(self.n, dtype=np.int32)

    def set_bounds(self, lower: np.ndarray, upper: np.ndarray, cols: np.ndarray | None = None) -> None:
        idx = self._all_cols if cols is None else np.asarray(cols, dtype=np.int32)
        self._h.changeColsBounds(len(idx), idx, _clip(np.asarray(lower, float)), _clip(np.asarray(upper, float)))

    def solve(self, clock: SolveClock | None = None, want_duals: bool = True) -> LpSolution:
        if clock is not None:
            clock.tick()
        h = self._h
        h.run()
        status = h.getModelStatus()
        if status == highspy.HighsModelStatus.kUnboundedOrInfeasible:
            status = self._disambiguate()
        if status == highspy.HighsModelStatus.kInfeasible:
            return self._empty("infeasible", math.inf)
        if status == highspy.HighsModelStatus.kUnbounded:
            return self._empty("unbounded", -math.inf)
        if status == highspy.HighsModelStatus.kModelEmpty:
            x = np.clip(np.zeros(self.n), self.mip.lower, self.mip.upper)
            return LpSolution("optimal", x, self.mip.objective_value(x), self.mip.objective.copy(),
                              np.zeros(0), ("lower",) * self.n)
        if status != highspy.HighsModelStatus.kOptimal:
            raise SolverError(f"LP solve ended with HiGHS status {h.modelStatusToString(status)}")
        sol = h.getSolution()
        x = np.asarray(sol.col_value, dtype=float)
        obj = self.sign * h.getInfo().objective_function_value
        if not want_duals:
            return LpSolution("optimal", x, obj, np.zeros(0), np.zeros(0))
        rc = self.sign * np.asarray(sol.col_dual, dtype=float)
        duals = self.sign * np.asarray(sol.row_dual, dtype=float)
        basis = h.getBasis()
        col_status = tuple(_STATUS_NAME.get(s, "lower") for s in basis.col_status)
        return LpSolution("optimal", x, obj, rc, duals, col_status)

    def _disambiguate(self):
        # a zero-cost solve decides feasibility
        h = self._h
        cost = self.sign * self.mip.objective
        h.changeColsCost(self.n, self._all_cols, np.zeros(self.n))
        h.run()
        feasible = h.getModelStatus() == highspy.HighsModelStatus.kOptimal
        h.changeColsCost(self.n, self._all_cols, cost)
        h.clearSolver()
        if not feasible:
            return highspy.HighsModelStatus.kInfeasible
        return highspy.HighsModelStatus.kUnbounded

    def _empty(self, status: str, obj_min: float) -> LpSolution:
        return LpSolution(status, np.full(self.n, np.nan), self.sign * obj_min,
                          np.full(self.n, np.nan), np.full(self.mip.n_cons, np.nan))


def solve_lp(mip: MipInstance, clock: SolveClock | None = None) -> LpSolution:
    """Solve the LP relaxation (integrality dropped).

    Reduced costs and duals are reported for the instance's own sense, i.e.
    ``rc = c - A'y`` with ``y`` the row duals of the original problem.
    """
    ensure_valid(mip)
    return LpModel(mip).solve(clock)
