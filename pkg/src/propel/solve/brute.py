"""Exhaustive enumeration oracle for tiny MIPs.

Every integer assignment inside the bounds is visited in order of a valid
lower bound (integer objective part plus the best box value of the continuous
part); the continuous part is then solved as an LP. Rows touching only integer
columns are screened without an LP.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..exceptions import DataError
from ..mip import MipInstance, ensure_valid
from ._types import MipResult
from .lp import LpModel

_CHUNK = 200_000


def enumeration_size(mip: MipInstance) -> float:
    ints = mip.integer_indices
    size = 1.0
    for k in ints:
        lb, ub = mip.lower[k], mip.upper[k]
        if not (math.isfinite(lb) and math.isfinite(ub)):
            return math.inf
        size *= max(0, math.floor(ub + 1e-9) - math.ceil(lb - 1e-9) + 1)
    return size


def brute_force(mip: MipInstance, max_enum: int = 100_000) -> MipResult:
    ensure_valid(mip)
    size = enumeration_size(mip)
    if size > max_enum:
        raise DataError(f"enumeration needs {size:g} assignments, budget is {max_enum}")
    sign = -1.0 if mip.sense == "max" else 1.0
    ints = mip.integer_indices
    cont = np.setdiff1d(np.arange(mip.n_vars), ints)
    c = sign * mip.objective
    A = mip.matrix.tocsc()
    lo, hi = mip.row_bounds
    int_only = np.asarray(np.abs(A[:, cont]).sum(axis=1)).ravel() == 0 if len(cont) else np.ones(mip.n_cons, bool)
    A_int = A[:, ints].tocsr()[int_only]
    lo_i, hi_i = lo[int_only], hi[int_only]
    # best value the continuous columns could contribute on their box
    cc = c[cont]
    box = np.where(cc >= 0, cc * mip.lower[cont], cc * mip.upper[cont])
    cont_lb = float(np.nansum(box)) if len(cont) else 0.0
    if not math.isfinite(cont_lb):
        cont_lb = -math.inf

    domains = [np.arange(math.ceil(mip.lower[k] - 1e-9), math.floor(mip.upper[k] + 1e-9) + 1, dtype=float)
               for k in ints]
    cands: list[np.ndarray] = []
    keys: list[np.ndarray] = []
    it = itertools.product(*domains)
    while True:
        block = list(itertools.islice(it, _CHUNK))
        if not block:
            break
        X = np.array(block, dtype=float).reshape(len(block), len(ints))
        if A_int.shape[0]:
            act = (A_int @ X.T).T
            ok = np.all((act >= lo_i - 1e-9) & (act <= hi_i + 1e-9), axis=1)
            X = X[ok]
        cands.append(X)
        keys.append(X @ c[ints] + cont_lb)
    if not cands or sum(len(x) for x in cands) == 0:
        return MipResult("infeasible", None, sign * math.inf, sign * math.inf, [], 0)
    X = np.vstack(cands)
    key = np.concatenate(keys)
    order = np.argsort(key, kind="stable")

    model = LpModel(mip) if len(cont) else None
    best, best_x = math.inf, None
    n_lp = 0
    for idx in order:
        if key[idx] >= best - 1e-12 * max(1.0, abs(best)):
            break
        xi = X[idx]
        if model is None:
            x = np.zeros(mip.n_vars)
            x[ints] = xi
            obj = float(c @ x)
        else:
            model.set_bounds(xi, xi, ints)
            lp = model.solve(want_duals=False)
            n_lp += 1
            if lp.status != "optimal":
                continue
            x = lp.primal.copy()
            x[ints] = xi
            obj = sign * lp.objective
        if obj < best:
            best, best_x = obj, x
    if best_x is None:
        return MipResult("infeasible", None, sign * math.inf, sign * math.inf, [], n_lp)
    return MipResult("optimal", best_x, sign * best, sign * best, [(0.0, sign * best)], n_lp)
