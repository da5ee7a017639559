"""Generic sparse MIP representation, validation and the variable/constraint graph.

Instances are immutable. Constraint rows are stored as sorted ``(index, coeff)``
pairs; the objective lives on the variables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import DataError

SENSES = ("<=", "=", ">=")
SCHEMA_ID = "propel-mip/1"


@dataclass(frozen=True)
class Variable:
    name: str
    lb: float = 0.0
    ub: float = math.inf
    is_integer: bool = False
    obj_coeff: float = 0.0


@dataclass(frozen=True)
class Constraint:
    name: str
    terms: tuple[tuple[int, float], ...]
    sense: str
    rhs: float

    @classmethod
    def build(cls, name: str, terms: Iterable[tuple[int, float]], sense: str, rhs: float) -> "Constraint":
        """Merge duplicate indices, drop zeros and sort by variable index."""
        acc: dict[int, float] = {}
        for idx, coeff in terms:
            acc[int(idx)] = acc.get(int(idx), 0.0) + float(coeff)
        merged = tuple((i, c) for i, c in sorted(acc.items()) if c != 0.0)
        return cls(name, merged, sense, float(rhs))


@dataclass(frozen=True)
class Violation:
    kind: str
    location: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    def __bool__(self) -> bool:
        # truthy when there is something to report
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class MipInstance:
    """A mixed-integer linear program ``opt c'x s.t. rows, lb <= x <= ub``."""

    vars: tuple[Variable, ...]
    cons: tuple[Constraint, ...]
    sense: str = "min"
    name: str = "mip"

    def __post_init__(self):
        object.__setattr__(self, "vars", tuple(self.vars))
        object.__setattr__(self, "cons", tuple(self.cons))

    @property
    def n_vars(self) -> int:
        return len(self.vars)

    @property
    def n_cons(self) -> int:
        return len(self.cons)

    @cached_property
    def var_index(self) -> dict[str, int]:
        return {v.name: k for k, v in enumerate(self.vars)}

    @cached_property
    def integer_indices(self) -> np.ndarray:
        return np.array([k for k, v in enumerate(self.vars) if v.is_integer], dtype=int)

    @cached_property
    def objective(self) -> np.ndarray:
        return np.array([v.obj_coeff for v in self.vars], dtype=float)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([v.lb for v in self.vars], dtype=float)

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([v.ub for v in self.vars], dtype=float)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for r, con in enumerate(self.cons):
            for j, a in con.terms:
                rows.append(r)
                cols.append(j)
                vals.append(a)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_cons, self.n_vars))

    @cached_property
    def row_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.n_cons, -math.inf)
        hi = np.full(self.n_cons, math.inf)
        for r, con in enumerate(self.cons):
            if con.sense in ("=", ">="):
                lo[r] = con.rhs
            if con.sense in ("=", "<="):
                hi[r] = con.rhs
        return lo, hi

    def objective_value(self, x: Sequence[float]) -> float:
        return float(self.objective @ np.asarray(x, dtype=float))

    def is_feasible(self, x: Sequence[float], tol: float = 1e-6) -> bool:
        """Check bounds, integrality and rows at absolute tolerance ``tol``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_vars,) or not np.all(np.isfinite(x)):
            return False
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        xi = x[self.integer_indices]
        if np.any(np.abs(xi - np.round(xi)) > tol):
            return False
        act = self.matrix @ x
        lo, hi = self.row_bounds
        return bool(np.all(act >= lo - tol) and np.all(act <= hi + tol))

    def with_bounds(self, updates: dict[int, tuple[float, float]], name: str | None = None) -> "MipInstance":
        new_vars = list(self.vars)
        for k, (lb, ub) in updates.items():
            new_vars[k] = replace(new_vars[k], lb=float(lb), ub=float(ub))
        return MipInstance(tuple(new_vars), self.cons, self.sense, name or self.name)


def validate(mip: MipInstance) -> ValidationReport:
    """Collect every invariant violation; never raises."""
    out: list[Violation] = []
    try:
        if mip.sense not in ("min", "max"):
            out.append(Violation("sense", "instance", f"unknown sense {mip.sense!r}"))
        seen: dict[str, int] = {}
        for k, v in enumerate(mip.vars):
            loc = f"var {k} ({v.name})"
            if not v.name:
                out.append(Violation("name", loc, "empty variable name"))
            elif v.name in seen:
                out.append(Violation("duplicate", loc, f"duplicates var {seen[v.name]}"))
            else:
                seen[v.name] = k
            if math.isnan(v.lb) or math.isnan(v.ub) or v.lb > v.ub:
                out.append(Violation("bounds", loc, f"lb={v.lb} > ub={v.ub}"))
            if v.lb == math.inf or v.ub == -math.inf:
                out.append(Violation("bounds", loc, "infinite bound on the wrong side"))
            if not math.isfinite(v.obj_coeff):
                out.append(Violation("objective", loc, f"non-finite objective coefficient {v.obj_coeff}"))
        n = len(mip.vars)
        for r, con in enumerate(mip.cons):
            loc = f"con {r} ({con.name})"
            if con.sense not in SENSES:
                out.append(Violation("sense", loc, f"unknown row sense {con.sense!r}"))
            if not math.isfinite(con.rhs):
                out.append(Violation("rhs", loc, f"non-finite rhs {con.rhs}"))
            prev = -1
            for idx, coeff in con.terms:
                if not (isinstance(idx, (int, np.integer)) and 0 <= idx < n):
                    out.append(Violation("index", loc, f"variable index {idx} out of range [0,{n})"))
                    continue
                if idx <= prev:
                    out.append(Violation("order", loc, f"terms not strictly sorted at index {idx}"))
                prev = idx
                if not math.isfinite(coeff):
                    out.append(Violation("coeff", loc, f"non-finite coefficient for var {idx}"))
    except Exception as exc:  # report, never abort
        out.append(Violation("structure", "instance", repr(exc)))
    return ValidationReport(tuple(out))


def ensure_valid(mip: MipInstance) -> None:
    report = validate(mip)
    if report:
        first = report.violations[0]
        raise DataError(f"invalid MIP instance {mip.name!r}: {len(report)} violation(s), "
                        f"first: {first.location}: {first.message}")


@dataclass(frozen=True)
class BipartiteGraph:
    n_var_nodes: int
    n_con_nodes: int
    var_adj: tuple[tuple[int, ...], ...]
    con_adj: tuple[tuple[int, ...], ...]

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.con_adj)

    def degree(self, var: int) -> int:
        return len(self.var_adj[var])

    def reachable_constraints(self, var: int) -> set[int]:
        """Constraints connected to ``var`` by an undirected path."""
        seen_v, seen_c = {var}, set()
        stack = [var]
        while stack:
            v = stack.pop()
            for c in self.var_adj[v]:
                if c in seen_c:
                    continue
                seen_c.add(c)
                for w in self.con_adj[c]:
                    if w not in seen_v:
                        seen_v.add(w)
                        stack.append(w)
        return seen_c


def build_bipartite_graph(mip: MipInstance) -> BipartiteGraph:
    ensure_valid(mip)
    var_adj: list[list[int]] = [[] for _ in mip.vars]
    con_adj: list[tuple[int, ...]] = []
    for r, con in enumerate(mip.cons):
        members = tuple(j for j, a in con.terms if a != 0.0)
        con_adj.append(members)
        for j in members:
            var_adj[j].append(r)
    return BipartiteGraph(mip.n_vars, mip.n_cons, tuple(tuple(a) for a in var_adj), tuple(con_adj))


# -- repo instance schema ---------------------------------------------------

def _bound_out(v: float):
    return None if math.isinf(v) else v


def _bound_in(v, default: float) -> float:
    return default if v is None else float(v)


def mip_to_dict(mip: MipInstance) -> dict:
    return {
        "format": SCHEMA_ID,
        "name": mip.name,
        "sense": mip.sense,
        "vars": [[v.name, _bound_out(v.lb), _bound_out(v.ub), int(v.is_integer), v.obj_coeff]
                 for v in mip.vars],
        "cons": [[c.name, c.sense, c.rhs, [[j, a] for j, a in c.terms]] for c in mip.cons],
    }


def mip_from_dict(data: dict) -> MipInstance:
    if data.get("format") != SCHEMA_ID:
        raise DataError(f"not a {SCHEMA_ID} document (format={data.get('format')!r})")
    try:
        variables = []
        for name, lb, ub, is_int, obj in data["vars"]:
            variables.append(Variable(name, _bound_in(lb, -math.inf), _bound_in(ub, math.inf),
                                      bool(is_int), float(obj)))
        cons = [Constraint(name, tuple((int(j), float(a)) for j, a in terms), sense, float(rhs))
                for name, sense, rhs, terms in data["cons"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed instance document: {exc}") from exc
    return MipInstance(tuple(variables), tuple(cons), data["sense"], data.get("name", "mip"))


def dumps(mip: MipInstance) -> str:
    """Serialize with a fixed field order so golden files are byte-stable."""
    doc = mip_to_dict(mip)
    lines = ["{",
             f'  "format": {json.dumps(doc["format"])},',
             f'  "name": {json.dumps(doc["name"])},',
             f'  "sense": {json.dumps(doc["sense"])},',
             '  "vars": [']
    lines += [f"    {json.dumps(row)}," for row in doc["vars"]]
    if doc["vars"]:
        lines[-1] = lines[-1][:-1]
    lines.append("  ],")
    lines.append('  "cons": [')
    lines += [f"    {json.dumps(row)}," for row in doc["cons"]]
    if doc["cons"]:
        lines[-1] = lines[-1][:-1]
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> MipInstance:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"instance file is not valid JSON: {exc}") from exc
    return mip_from_dict(data)
