import itertools
import math
import sys

import numpy as np
import pytest

from propel.exceptions import ConfigError, DataError, ExternalProcessError
from propel.mip import Constraint, MipInstance, Variable
from propel.scp import build_mip
from propel.solve import (
    SolveClock,
    SolveLimits,
    brute_force,
    external_solve,
    format_solution,
    parse_solution,
    solve_lp,
    solve_mip,
)

from conftest import micro_batch, random_micro


def vertex_optimum(mip: MipInstance) -> float:
    """LP optimum by enumerating every basic solution of a tiny polytope."""
    A = mip.matrix.toarray()
    n = mip.n_vars
    eq = [r for r, c in enumerate(mip.cons) if c.sense == "="]
    rows = [(A[r], mip.cons[r].rhs) for r in eq]
    optional = [(A[r], mip.cons[r].rhs) for r, c in enumerate(mip.cons) if c.sense != "="]
    for k in range(n):
        e = np.eye(n)[k]
        optional.append((e, mip.lower[k]))
        if math.isfinite(mip.upper[k]):
            optional.append((e, mip.upper[k]))
    best = math.inf
    for pick in itertools.combinations(range(len(optional)), n - len(rows)):
        M = np.array([a for a, _ in rows] + [optional[p][0] for p in pick])
        b = np.array([v for _, v in rows] + [optional[p][1] for p in pick])
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        x = np.linalg.solve(M, b)
        relaxed = MipInstance(tuple(Variable(v.name, v.lb, v.ub, False, v.obj_coeff) for v in mip.vars),
                              mip.cons, mip.sense)
        if relaxed.is_feasible(x, 1e-7):
            best = min(best, mip.objective_value(x))
    return best


def tiny_micros(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        inst = random_micro(rng)
        if inst.topology.n_periods == 1 and inst.topology.n_products == 1 and inst.topology.n_parts == 1:
            out.append(inst)
    return out


def test_lp_trivial_bounded():
    mip = MipInstance((Variable("x", 0, 10, False, 1.0),), (Constraint.build("c", [(0, 1.0)], ">=", 1),))
    lp = solve_lp(mip)
    assert lp.status == "optimal" and lp.objective == pytest.approx(1.0) and lp.primal[0] == pytest.approx(1.0)


def test_lp_empty_objective():
    mip = MipInstance((Variable("x", 0, 5), Variable("y", 0, 5)), (Constraint.build("c", [(0, 1), (1, 1)], ">=", 2),))
    lp = solve_lp(mip)
    assert lp.objective == 0.0 and mip.is_feasible(lp.primal)


def test_lp_matches_vertex_enumeration(micro):
    lp = solve_lp(build_mip(micro))
    assert lp.objective == pytest.approx(vertex_optimum(build_mip(micro)), abs=1e-7)
    assert lp.objective <= 12 + 1e-9
    for inst in tiny_micros(10, 4):
        mip = build_mip(inst)
        assert solve_lp(mip).objective == pytest.approx(vertex_optimum(mip), abs=1e-7)


def test_lp_statuses():
    infeas = MipInstance((Variable("x", 0, 1),), (Constraint.build("c", [(0, 1)], ">=", 2),))
    assert solve_lp(infeas).status == "infeasible"
    unb = MipInstance((Variable("x", 0, math.inf, False, -1.0),), (Constraint.build("c", [(0, 1)], ">=", 0),))
    assert solve_lp(unb).status == "unbounded"


def test_reduced_costs_and_complementary_slackness():
    for inst in micro_batch(15, 8):
        mip = build_mip(inst)
        lp = solve_lp(mip)
        A = mip.matrix.toarray()
        assert np.allclose(lp.reduced_costs, mip.objective - A.T @ lp.duals, atol=1e-7)
        for k, st in enumerate(lp.col_status):
            if st == "lower":
                assert lp.reduced_costs[k] >= -1e-7
                assert lp.primal[k] == pytest.approx(mip.lower[k], abs=1e-7)
            elif st == "upper":
                assert lp.reduced_costs[k] <= 1e-7
            elif st == "basic":
                assert abs(lp.reduced_costs[k]) <= 1e-7
        act = A @ lp.primal
        for r, con in enumerate(mip.cons):
            if con.sense != "=":
                assert abs(lp.duals[r] * (act[r] - con.rhs)) <= 1e-7


def test_max_sense_rc_reported_in_own_sense():
    # max 3x + 2y, x + y <= 4, x <= 3
    mip = MipInstance((Variable("x", 0, 3, False, 3.0), Variable("y", 0, 10, False, 2.0)),
                      (Constraint.build("c", [(0, 1), (1, 1)], "<=", 4),), "max")
    lp = solve_lp(mip)
    assert lp.objective == pytest.approx(11.0)
    assert lp.duals[0] == pytest.approx(2.0)
    assert lp.reduced_costs[0] == pytest.approx(1.0)


def test_mip_micro_example(micro):
    res = solve_mip(build_mip(micro), SolveLimits(rel_gap=0.0))
    assert res.status == "optimal" and res.best_objective == pytest.approx(12.0)
    assert res.trace[-1][1] == res.best_objective
    assert res.bound <= res.best_objective + 1e-9


def test_all_fixed_solved_at_root():
    mip = MipInstance((Variable("a", 2, 2, True, 1.0), Variable("b", 1, 1, True, 3.0)),
                      (Constraint.build("c", [(0, 1), (1, 1)], "<=", 5),))
    res = solve_mip(mip, SolveLimits(deterministic_clock=True))
    assert res.status == "optimal" and res.best_objective == 5.0 and len(res.trace) == 1 and res.node_count == 1


def test_time_limit_keeps_bound_contract():
    rng = np.random.default_rng(0)
    n = 50
    vars_ = tuple(Variable(f"v{k}", 0, 10, True, float(-rng.integers(1, 20))) for k in range(n))
    cons = tuple(Constraint.build(f"r{r}", [(k, float(rng.integers(1, 9))) for k in range(n)], "<=",
                                  float(rng.integers(40, 90))) for r in range(5))
    mip = MipInstance(vars_, cons, "min")
    res = solve_mip(mip, SolveLimits(time_limit=0.001, rel_gap=0.0))
    assert res.status == "time_limit"
    assert res.bound <= res.best_objective
    det = solve_mip(mip, SolveLimits(time_limit=3, rel_gap=0.0, deterministic_clock=True))
    assert det.status == "time_limit" and det.node_count == 3 and det.end_time == 3.0


def test_trace_strictly_improving_and_deterministic():
    for inst in micro_batch(10, 12):
        mip = build_mip(inst)
        lim = SolveLimits(rel_gap=0.0, deterministic_clock=True)
        a, b = solve_mip(mip, lim), solve_mip(mip, lim)
        objs = [o for _, o in a.trace]
        assert all(o2 < o1 for o1, o2 in zip(objs, objs[1:]))
        assert a.trace == b.trace and a.node_count == b.node_count
        assert np.array_equal(a.best_solution, b.best_solution)


def test_max_sense_mip_matches_brute():
    rng = np.random.default_rng(5)
    for _ in range(10):
        vars_ = tuple(Variable(f"v{k}", 0, int(rng.integers(1, 5)), True, float(rng.integers(1, 9)))
                      for k in range(4))
        cons = (Constraint.build("r", [(k, float(rng.integers(1, 6))) for k in range(4)], "<=", 11.5),)
        mip = MipInstance(vars_, cons, "max")
        res = solve_mip(mip, SolveLimits(rel_gap=0.0))
        assert res.best_objective == pytest.approx(brute_force(mip).best_objective)
        assert res.bound >= res.best_objective - 1e-9


def test_warm_start_recorded_at_start():
    mip = build_mip(micro_batch(1, 30)[0])
    x0 = brute_force(mip).best_solution
    clock = SolveClock(True)
    clock.tick(7)
    res = solve_mip(mip, SolveLimits(rel_gap=0.0, deterministic_clock=True), warm_start=x0, clock=clock)
    assert res.trace[0] == (7.0, pytest.approx(mip.objective_value(x0)))


def test_brute_force_cases():
    infeas = MipInstance((Variable("x", 0, math.inf, True),), (Constraint.build("a", [(0, 1)], ">=", 1),
                                                                 Constraint.build("b", [(0, 1)], "<=", 0)))
    infeas = infeas.with_bounds({0: (0, 3)})
    assert brute_force(infeas).status == "infeasible"
    pure_lp = MipInstance((Variable("x", 0, 4, False, 2.0), Variable("y", 0, 4, False, 1.0)),
                          (Constraint.build("c", [(0, 1), (1, 1)], ">=", 3),))
    assert brute_force(pure_lp).best_objective == pytest.approx(solve_lp(pure_lp).objective)
    big = MipInstance(tuple(Variable(f"v{k}", 0, 99, True) for k in range(4)), ())
    with pytest.raises(DataError):
        brute_force(big, max_enum=1000)


def test_mip_infeasible_detected():
    mip = MipInstance((Variable("x", 0, 1, True),), (Constraint.build("c", [(0, 2)], "=", 1),))
    assert solve_mip(mip).status == "infeasible"


def test_solution_file_round_trip():
    mip = build_mip(micro_batch(1, 40)[0])
    res = solve_mip(mip, SolveLimits(rel_gap=0.0))
    text = format_solution(mip, res)
    status, obj, x = parse_solution("  \n" + text.replace(" ", "   "), mip)
    assert obj == pytest.approx(res.best_objective) and np.allclose(x, res.best_solution)


def test_external_self_adapter(micro):
    mip = build_mip(micro)
    tmpl = f"{sys.executable} -m propel solve {{input}} --output {{output}} --time-limit {{time_limit}} --rel-gap 0"
    res = external_solve(mip, tmpl, SolveLimits(rel_gap=0.0))
    assert res.best_objective == pytest.approx(12.0)
    assert res.best_objective == pytest.approx(solve_mip(mip, SolveLimits(rel_gap=0.0)).best_objective)
    assert len(res.trace) == 1


def test_external_missing_executable(micro):
    with pytest.raises(ExternalProcessError):
        external_solve(build_mip(micro), "/nonexistent/solver {input} {output} {time_limit}")
    with pytest.raises(ConfigError):
        external_solve(build_mip(micro), "solver {input}")


def test_external_failure_exit_code(micro):
    with pytest.raises(ExternalProcessError):
        external_solve(build_mip(micro), f"{sys.executable} -c 'import sys; sys.exit(3)' {{input}} {{output}} {{time_limit}}")
