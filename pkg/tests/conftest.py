"""Shared fixtures: tiny planning instances small enough to enumerate."""

from __future__ import annotations

import numpy as np
import pytest

from propel.mip import Constraint, MipInstance, Variable
from propel.learn import PropFixer
from propel.scp import (
    NoiseParams,
    ScpInstance,
    ScpTopology,
    build_mip,
    generate_instances,
    generate_snapshots,
    random_topology,
)
from propel.solve import SolveLimits, enumeration_size

MAX_ENUM = 10_000


def micro_example() -> ScpInstance:
    """One product, one part, one period: demand 3, capacity 2, penalty 10."""
    tp = ScpTopology(1, 1, 1, ((0,),), ((0,),), (0.0,))
    return ScpInstance(tp, [[3]], [[2]], [[1.0]], [[1.0]], [[10.0]], "micro")


def two_day_example(demand=(4, 0, 5, 3)) -> MipInstance:
    """Two-day, one-part model where part 0 serves products a=0, b=1, c=2.

    Product a is due in period 0 and products b and c in period 1. The demand
    row of b pools both periods; c cannot be produced in period 0.
    ``demand`` is (D_a, unused, D_b, D_c).
    """
    Da, _, Db, Dc = demand
    names = ["z[0,0]", "z[0,1]", "x[0,0]", "x[1,0]", "x[0,1]", "x[1,1]", "x[2,1]",
             "y[0,0]", "y[0,1]", "u[0,0]", "u[1,1]", "u[2,1]"]
    k = {n: i for i, n in enumerate(names)}
    vars_ = tuple(Variable(n, 0.0, 10.0 if n[0] in "xz" else float("inf"), n[0] in "xz", 1.0) for n in names)
    cons = (
        Constraint.build("bal[0,0]", [(k["z[0,0]"], 1), (k["x[0,0]"], -1), (k["x[1,0]"], -1), (k["y[0,0]"], -1)], "=", 0),
        Constraint.build("bal[0,1]", [(k["y[0,0]"], 1), (k["z[0,1]"], 1), (k["x[0,1]"], -1), (k["x[1,1]"], -1),
                                      (k["x[2,1]"], -1), (k["y[0,1]"], -1)], "=", 0),
        Constraint.build("dem[0,0]", [(k["x[0,0]"], 1), (k["u[0,0]"], 1)], "=", Da),
        Constraint.build("dem[1,1]", [(k["x[1,0]"], 1), (k["x[1,1]"], 1), (k["u[1,1]"], 1)], "=", Db),
        Constraint.build("dem[2,1]", [(k["x[2,1]"], 1), (k["u[2,1]"], 1)], "=", Dc),
        Constraint.build("cap[0,0]", [(k["z[0,0]"], 1)], "<=", 8),
        Constraint.build("cap[0,1]", [(k["z[0,1]"], 1)], "<=", 8),
    )
    return MipInstance(vars_, cons, "min", "two-day")


# the published feature sets, with a=0, b=1, c=2 and periods t=0, t+1=1
TWO_DAY_FEATURES = {
    "z[0,0]": {(0, 0), (1, 1), (2, 1)},
    "x[0,0]": {(0, 0)},
    "z[0,1]": {(0, 1), (1, 1), (2, 1)},
    "x[1,1]": {(1, 1)},
    "x[0,1]": set(),
    "x[2,1]": {(2, 1)},
}


def random_micro(rng: np.random.Generator, max_enum: int = MAX_ENUM, name: str = "m") -> ScpInstance:
    """Random instance whose integer box has at most ``max_enum`` points."""
    while True:
        M = int(rng.integers(1, 3))
        N = int(rng.integers(1, 3))
        T = int(rng.integers(1, 3))
        supplies = [set() for _ in range(N)]
        for i in range(M):
            supplies[int(rng.integers(N))].add(i)
        for j in range(N):
            if not supplies[j]:
                supplies[j].add(int(rng.integers(M)))
        groups = ((tuple(range(N))),) if rng.random() < 0.5 else tuple((j,) for j in range(N))
        tp = ScpTopology(M, N, T, tuple(tuple(s) for s in supplies), groups,
                         tuple(float(v) for v in rng.integers(0, 2, N)))
        inst = ScpInstance(
            tp,
            rng.integers(0, 4, (M, T)),
            rng.integers(0, 4, (len(groups), T)),
            np.round(rng.uniform(0.1, 1.0, (N, T)), 2),
            np.round(rng.uniform(0.5, 3.0, (N, T)), 2),
            np.round(rng.uniform(1.0, 8.0, (M, T)), 2),
            name,
        )
        if enumeration_size(build_mip(inst)) <= max_enum:
            return inst


def micro_batch(n: int, seed: int) -> list[ScpInstance]:
    rng = np.random.default_rng(seed)
    return [random_micro(rng, name=f"m{k}") for k in range(n)]


@pytest.fixture
def micro():
    return micro_example()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_fixer():
    """A quickly trained fixer on a 4-product, 2-part, 3-period topology, with 12 instances."""
    tp = random_topology(4, 2, 3, n_groups=1, seed=1)
    snaps = generate_snapshots(tp, 3, seed=2)
    insts = generate_instances(snaps, 12, NoiseParams(seed=0), seed=3)
    fx = PropFixer(lr_grid=(0.005,), layer_grid=(3,), hidden_grid=(8, 16), epochs=20, seed=0)
    fx.fit(insts[:10], lim=SolveLimits(rel_gap=0.01))
    return fx, insts
