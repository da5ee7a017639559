"""Stylized supply-chain planning model and synthetic instance generation.

Index conventions: products ``i`` (finished goods), parts ``j``, periods ``t``,
capacity resources ``m``; all 0-based. Variable and row names encode role and
indices (``x[i,t]``, ``z[j,t]``, ``bal[j,t]``, ...) so downstream code can parse
them without side tables.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import DataError
from .mip import Constraint, MipInstance, Variable

SCP_SCHEMA_ID = "propel-scp/1"
NAME_RE = re.compile(r"^(x|z|y|u|bal|dem|cap)\[(-?\d+),(-?\d+)\]$")


def parse_name(name: str) -> tuple[str, int, int]:
    """Split ``role[a,b]`` into its role and integer indices."""
    m = NAME_RE.match(name)
    if m is None:
        raise DataError(f"{name!r} is not a supply-chain model name")
    return m.group(1), int(m.group(2)), int(m.group(3))


@dataclass(frozen=True)
class ScpTopology:
    n_products: int
    n_parts: int
    n_periods: int
    supplies: tuple[tuple[int, ...], ...]  # supplies[j]: products part j serves
    cap_groups: tuple[tuple[int, ...], ...]  # cap_groups[m]: parts using resource m
    initial_inventory: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "supplies", tuple(tuple(sorted(s)) for s in self.supplies))
        object.__setattr__(self, "cap_groups", tuple(tuple(sorted(g)) for g in self.cap_groups))
        inv = self.initial_inventory or (0.0,) * self.n_parts
        object.__setattr__(self, "initial_inventory", tuple(float(v) for v in inv))
        self.check()

    def check(self) -> None:
        M, N, T = self.n_products, self.n_parts, self.n_periods
        if min(M, N, T) < 1:
            raise DataError("topology needs at least one product, part and period")
        if len(self.supplies) != N or len(self.initial_inventory) != N:
            raise DataError("supplies and initial_inventory must have one entry per part")
        covered = set()
        for j, s in enumerate(self.supplies):
            for i in s:
                if not 0 <= i < M:
                    raise DataError(f"part {j} serves unknown product {i}")
                covered.add(i)
        if len(covered) != M:
            raise DataError(f"products {sorted(set(range(M)) - covered)} are served by no part")
        for m, g in enumerate(self.cap_groups):
            if not g:
                raise DataError(f"capacity group {m} is empty")
            if any(not 0 <= j < N for j in g):
                raise DataError(f"capacity group {m} references an unknown part")
        if any(v < 0 for v in self.initial_inventory):
            raise DataError("initial inventory must be nonnegative")

    @property
    def parts_of(self) -> tuple[tuple[int, ...], ...]:
        """parts_of[i]: parts consumed by product i."""
        out: list[list[int]] = [[] for _ in range(self.n_products)]
        for j, s in enumerate(self.supplies):
            for i in s:
                out[i].append(j)
        return tuple(tuple(p) for p in out)

    def to_dict(self) -> dict:
        return {"n_products": self.n_products, "n_parts": self.n_parts, "n_periods": self.n_periods,
                "supplies": [list(s) for s in self.supplies],
                "cap_groups": [list(g) for g in self.cap_groups],
                "initial_inventory": list(self.initial_inventory)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScpTopology":
        return cls(d["n_products"], d["n_parts"], d["n_periods"],
                   tuple(tuple(s) for s in d["supplies"]), tuple(tuple(g) for g in d["cap_groups"]),
                   tuple(d.get("initial_inventory", ())))


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScpInstance:
    topology: ScpTopology
    demand: np.ndarray  # (M, T) nonnegative integers
    capacity: np.ndarray  # (n_groups, T)
    inv_cost: np.ndarray  # (N, T)
    prod_cost: np.ndarray  # (N, T)
    unmet_penalty: np.ndarray  # (M, T)
    name: str = "scp"

    def __post_init__(self):
        for f in ("demand", "capacity", "inv_cost", "prod_cost", "unmet_penalty"):
            object.__setattr__(self, f, _frozen(getattr(self, f)))
        self.check()

    def check(self) -> None:
        tp = self.topology
        M, N, T, G = tp.n_products, tp.n_parts, tp.n_periods, len(tp.cap_groups)
        shapes = {"demand": (M, T), "capacity": (G, T), "inv_cost": (N, T),
                  "prod_cost": (N, T), "unmet_penalty": (M, T)}
        for f, shape in shapes.items():
            if getattr(self, f).shape != shape:
                raise DataError(f"{f} has shape {getattr(self, f).shape}, expected {shape}")
        d = self.demand
        if np.any(d < 0) or np.any(d != np.round(d)):
            raise DataError("demands must be nonnegative integers")
        if np.any(self.unmet_penalty <= 0):
            raise DataError("unmet-demand penalties must be strictly positive")
        if np.any(self.capacity < 0):
            raise DataError("capacities must be nonnegative")

    def replace_demand(self, demand: np.ndarray, name: str | None = None) -> "ScpInstance":
        return ScpInstance(self.topology, demand, self.capacity, self.inv_cost, self.prod_cost,
                           self.unmet_penalty, name or self.name)

    def to_dict(self) -> dict:
        return {"format": SCP_SCHEMA_ID, "name": self.name, "topology": self.topology.to_dict(),
                "demand": self.demand.tolist(), "capacity": self.capacity.tolist(),
                "inv_cost": self.inv_cost.tolist(), "prod_cost": self.prod_cost.tolist(),
                "unmet_penalty": self.unmet_penalty.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScpInstance":
        if d.get("format") != SCP_SCHEMA_ID:
            raise DataError(f"not a {SCP_SCHEMA_ID} document")
        try:
            return cls(ScpTopology.from_dict(d["topology"]), d["demand"], d["capacity"], d["inv_cost"],
                       d["prod_cost"], d["unmet_penalty"], d.get("name", "scp"))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed supply-chain instance: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ScpInstance":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataError(f"instance file is not valid JSON: {exc}") from exc

    def demand_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["product"] + [f"t{t}" for t in range(self.topology.n_periods)])
        for i, row in enumerate(self.demand):
            w.writerow([i] + [int(v) for v in row])
        return buf.getvalue()


# -- model ------------------------------------------------------------------

def demand_blocks(n_periods: int, window: int) -> list[list[int]]:
    """Consecutive period blocks of length ``window``; the last may be shorter."""
    if window < 1:
        raise DataError("demand window must be at least 1")
    return [list(range(s, min(s + window, n_periods))) for s in range(0, n_periods, window)]


def demand_rhs(inst: ScpInstance, window: int = 1) -> np.ndarray:
    """Right-hand side of the demand rows, indexed (product, due period).

    Entries at periods that are not a block end are zero.
    """
    D = inst.demand
    if window == 1:
        return np.array(D, dtype=float)
    out = np.zeros_like(D, dtype=float)
    for block in demand_blocks(D.shape[1], window):
        out[:, block[-1]] = D[:, block].sum(axis=1)
    return out


def _z_upper(inst: ScpInstance) -> np.ndarray:
    # production beyond capacity or beyond remaining downstream demand is never useful
    tp = inst.topology
    N, T = tp.n_parts, tp.n_periods
    ub = np.full((N, T), math.inf)
    for m, g in enumerate(tp.cap_groups):
        for j in g:
            ub[j] = np.minimum(ub[j], inst.capacity[m])
    cum = np.cumsum(inst.demand[:, ::-1], axis=1)[:, ::-1]  # demand from t onwards
    for j, s in enumerate(tp.supplies):
        downstream = cum[list(s)].sum(axis=0) if s else np.zeros(T)
        ub[j] = np.minimum(ub[j], downstream)
    return ub


def build_mip(inst: ScpInstance, demand_window: int = 1) -> MipInstance:
    """Assemble the cost-minimising planning MIP.

    ``demand_window=1`` writes one demand row per (product, period). Larger
    windows pool consecutive periods into one demand row at the block end;
    ``demand_window=n_periods`` gives a single row per product.
    """
    inst.check()
    tp = inst.topology
    M, N, T = tp.n_products, tp.n_parts, tp.n_periods
    D = inst.demand
    blocks = demand_blocks(T, demand_window)
    due_of = {}
    for b in blocks:
        for t in b:
            due_of[t] = b[-1]
    zub = _z_upper(inst)
    variables: list[Variable] = []
    xi = {}
    for i in range(M):
        for t in range(T):
            xi[i, t] = len(variables)
            ub = D[i, blocks[t // demand_window]].sum()
            variables.append(Variable(f"x[{i},{t}]", 0.0, float(ub), True, 0.0))
    zi = {}
    for j in range(N):
        for t in range(T):
            zi[j, t] = len(variables)
            variables.append(Variable(f"z[{j},{t}]", 0.0, float(zub[j, t]), True, float(inst.prod_cost[j, t])))
    yi = {}
    for j in range(N):
        for t in range(T):
            yi[j, t] = len(variables)
            variables.append(Variable(f"y[{j},{t}]", 0.0, math.inf, False, float(inst.inv_cost[j, t])))
    ui = {}
    for i in range(M):
        for t in range(T):
            ui[i, t] = len(variables)
            variables.append(Variable(f"u[{i},{t}]", 0.0, math.inf, False, float(inst.unmet_penalty[i, t])))

    cons: list[Constraint] = []
    for j in range(N):
        for t in range(T):
            terms = [(zi[j, t], 1.0), (yi[j, t], -1.0)]
            terms += [(xi[i, t], -1.0) for i in tp.supplies[j]]
            if t > 0:
                terms.append((yi[j, t - 1], 1.0))
                rhs = 0.0
            else:
                rhs = -tp.initial_inventory[j]
            cons.append(Constraint.build(f"bal[{j},{t}]", terms, "=", rhs))
    rhs_d = demand_rhs(inst, demand_window)
    for i in range(M):
        for b in blocks:
            due = b[-1]
            terms = [(xi[i, t], 1.0) for t in b] + [(ui[i, due], 1.0)]
            cons.append(Constraint.build(f"dem[{i},{due}]", terms, "=", float(rhs_d[i, due])))
    for m, g in enumerate(tp.cap_groups):
        for t in range(T):
            cons.append(Constraint.build(f"cap[{m},{t}]", [(zi[j, t], 1.0) for j in g], "<=",
                                         float(inst.capacity[m, t])))
    return MipInstance(tuple(variables), tuple(cons), "min", inst.name)


def zero_plan(mip: MipInstance, inst: ScpInstance, demand_window: int = 1) -> np.ndarray:
    """The no-production plan: every demand unmet, inventory carried forward."""
    tp = inst.topology
    x = np.zeros(mip.n_vars)
    for j in range(tp.n_parts):
        for t in range(tp.n_periods):
            x[mip.var_index[f"y[{j},{t}]"]] = tp.initial_inventory[j]
    rhs = demand_rhs(inst, demand_window)
    for i in range(tp.n_products):
        for b in demand_blocks(tp.n_periods, demand_window):
            x[mip.var_index[f"u[{i},{b[-1]}]"]] = rhs[i, b[-1]]
    return x


# -- generation -------------------------------------------------------------

def random_topology(n_products: int, n_parts: int, n_periods: int, n_groups: int = 3,
                    max_parts_per_product: int = 2, seed: int = 0,
                    min_parts_per_product: int = 1, groups_per_part: int = 1) -> ScpTopology:
    """Random assembly structure: each product consumes one or more parts."""
    rng = np.random.default_rng(seed)
    supplies: list[set[int]] = [set() for _ in range(n_parts)]
    for i in range(n_products):
        k = int(rng.integers(min_parts_per_product, max_parts_per_product + 1))
        for j in rng.choice(n_parts, size=min(k, n_parts), replace=False):
            supplies[int(j)].add(i)
    # every part serves something
    for j in range(n_parts):
        if not supplies[j]:
            supplies[j].add(int(rng.integers(n_products)))
    n_groups = max(1, min(n_groups, n_parts))
    perm = rng.permutation(n_parts)
    members: list[set[int]] = [set(int(j) for j in perm[g::n_groups]) for g in range(n_groups)]
    for j in range(n_parts):
        extra = int(rng.integers(0, groups_per_part))
        for g in rng.choice(n_groups, size=min(extra, n_groups), replace=False):
            members[int(g)].add(j)
    groups = [sorted(g) for g in members]
    return ScpTopology(n_products, n_parts, n_periods, tuple(tuple(sorted(s)) for s in supplies),
                       tuple(tuple(g) for g in groups), (0.0,) * n_parts)


@dataclass(frozen=True)
class SnapshotParams:
    """Shape of the synthetic base demand."""

    base_level: float = 60.0
    level_sigma: float = 0.6
    order_prob: float = 0.65
    season_period: float = 12.0
    amplitude: tuple[float, float] = (0.2, 0.6)
    trend: float = 0.2
    capacity_ratio: float = 0.75
    capacity_jitter: float = 0.0
    penalty_range: tuple[float, float] = (0.6, 3.0)
    hold_ratio: float = 0.08
    cost_swing: float = 0.5


def generate_snapshots(topology: ScpTopology, count: int, seed: int,
                       params: SnapshotParams | None = None) -> list[ScpInstance]:
    """Deterministic base scenarios sharing topology, costs and capacities.

    Demand follows a per-product seasonal sinusoid with linear trend and a
    log-normal per-product scale; snapshots differ by a seasonal phase shift
    and mild multiplicative jitter. Order patterns (which product-periods carry
    demand at all) are fixed per topology.
    """
    if count < 1:
        raise DataError("snapshot count must be at least 1")
    p = params or SnapshotParams()
    tp = topology
    M, N, T = tp.n_products, tp.n_parts, tp.n_periods
    rng = np.random.default_rng(seed)
    scale = np.exp(rng.normal(math.log(p.base_level), p.level_sigma, size=M))
    phase = rng.uniform(0, 2 * math.pi, size=M)
    amp = rng.uniform(*p.amplitude, size=M)
    trend = rng.uniform(-p.trend, p.trend, size=M)
    active = rng.random((M, T)) < p.order_prob

    beta_base = rng.uniform(1.0, 3.0, size=N)
    wiggle = rng.uniform(0, 2 * math.pi, size=N)
    tt = np.arange(T)
    prod_cost = beta_base[:, None] * (1 + p.cost_swing * np.sin(2 * math.pi * tt[None, :] / max(T, 2)
                                                               + wiggle[:, None]))
    prod_cost = np.round(prod_cost, 3)
    inv_cost = np.round(np.repeat((p.hold_ratio * beta_base)[:, None], T, axis=1), 4)
    parts_of = tp.parts_of
    unit_cost = np.array([beta_base[list(parts_of[i])].sum() for i in range(M)])
    penalty = unit_cost * rng.uniform(*p.penalty_range, size=M)
    unmet_penalty = np.round(np.repeat(penalty[:, None], T, axis=1), 3)

    snaps = []
    season = 2 * math.pi / p.season_period
    for k in range(count):
        shift = 2 * math.pi * k / count
        curve = (1 + amp[:, None] * np.sin(season * tt[None, :] + phase[:, None] + shift)) \
            * (1 + trend[:, None] * tt[None, :] / max(T - 1, 1))
        jitter = np.exp(rng.normal(0, 0.1, size=(M, T)))
        D = np.round(np.maximum(scale[:, None] * curve * jitter, 0) * active)
        snaps.append((D, f"snap{k}"))

    # capacity from the average load each resource would carry
    mean_D = np.mean([s[0] for s in snaps], axis=0)
    load = np.zeros((N, T))
    for j, s in enumerate(tp.supplies):
        load[j] = mean_D[list(s)].sum(axis=0) if s else 0
    capacity = np.zeros((len(tp.cap_groups), T))
    for m, g in enumerate(tp.cap_groups):
        avg = load[list(g)].sum(axis=0).mean()
        jit = 1 + p.capacity_jitter * rng.uniform(-1, 1, size=T)
        capacity[m] = np.round(p.capacity_ratio * avg * jit)
    return [ScpInstance(tp, D, capacity, inv_cost, prod_cost, unmet_penalty, name) for D, name in snaps]


@dataclass(frozen=True)
class NoiseParams:
    """Demand perturbation: Gaussian noise then uniform noise.

    Per-(product, period) Gaussian parameters are drawn once from
    ``param_seed`` and scaled by the base demand and the two scale factors.
    ``absolute_uniform`` adds the uniform draw directly instead of as a
    relative change.
    """

    gauss_mean_scale: float = 0.0
    gauss_sd_scale: float = 0.15
    uniform_halfwidth: float = 0.2
    seed: int = 0
    param_seed: int = 0
    absolute_uniform: bool = False

    def __post_init__(self):
        if self.uniform_halfwidth < 0:
            raise DataError("uniform_halfwidth must be nonnegative")
        if self.gauss_sd_scale < 0:
            raise DataError("gauss_sd_scale must be nonnegative")


def gaussian_params(base: ScpInstance, p: NoiseParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-(product, period) mean and standard deviation of the Gaussian noise."""
    shape = base.demand.shape
    prng = np.random.default_rng(p.param_seed)
    mu = p.gauss_mean_scale * base.demand * prng.standard_normal(shape)
    sd = p.gauss_sd_scale * base.demand * np.abs(prng.standard_normal(shape))
    return mu, sd


def perturb(base: ScpInstance, p: NoiseParams, name: str | None = None) -> ScpInstance:
    D = np.asarray(base.demand, dtype=float)
    mu, sd = gaussian_params(base, p)
    rng = np.random.default_rng(p.seed)
    eps = rng.normal(mu, sd) if np.any(sd > 0) else mu.copy()
    u = rng.uniform(-p.uniform_halfwidth, p.uniform_halfwidth, size=D.shape)
    new = D + eps + (u if p.absolute_uniform else u * D)
    new = np.maximum(0.0, np.round(new))
    return base.replace_demand(new, name)


def generate_instances(snapshots: Sequence[ScpInstance], count: int, noise: NoiseParams,
                       seed: int, prefix: str = "inst") -> list[ScpInstance]:
    """Pick a snapshot uniformly at random, then perturb it, ``count`` times."""
    rng = np.random.default_rng(seed)
    children = np.random.SeedSequence(seed).spawn(count)
    out = []
    for k in range(count):
        base = snapshots[int(rng.integers(len(snapshots)))]
        child_seed = int(children[k].generate_state(1)[0])
        p = NoiseParams(noise.gauss_mean_scale, noise.gauss_sd_scale, noise.uniform_halfwidth,
                        child_seed, noise.param_seed, noise.absolute_uniform)
        out.append(perturb(base, p, f"{prefix}{k:04d}"))
    return out


def demand_stats(instances: Sequence[ScpInstance]) -> dict[str, float]:
    """Mean-of-means and spread of per-(product, period) demand across instances."""
    stack = np.stack([np.asarray(s.demand, float) for s in instances])
    means = stack.mean(axis=0)
    sds = stack.std(axis=0)
    return {"mean_of_means": float(means.mean()), "sd_of_means": float(means.std()),
            "mean_of_sds": float(sds.mean()), "sd_of_sds": float(sds.std())}
