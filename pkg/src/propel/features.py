"""Temporal graph features for integer variables of a planning MIP.

The undirected variable/constraint graph is oriented by flow: anything that
adds stock to a balance row points into it, anything that draws stock from it
is pointed at by it, and every variable points into the demand rows it appears
in. Inventory carried from ``t`` to ``t+1`` therefore chains balance rows
forward in time and no path can run from a later period to an earlier one.
The demand rows reachable from a variable are its features.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError
from .mip import MipInstance
from .scp import ScpInstance, ScpTopology, demand_rhs, parse_name


@dataclass(frozen=True)
class FeatureSpec:
    var_name: str
    demand_refs: tuple[tuple[int, int], ...]  # (product, period), sorted by (period, product)
    fixed_length: int

    def __post_init__(self):
        if self.fixed_length < 0:
            raise DataError("fixed_length must be nonnegative")


@dataclass(frozen=True)
class DirectedScpGraph:
    """Directed graph over variable and row nodes, each tagged with its period."""

    names: tuple[str, ...]
    roles: tuple[str, ...]
    periods: tuple[int, ...]
    succ: tuple[tuple[int, ...], ...]
    index: dict

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    def arcs(self):
        for u, out in enumerate(self.succ):
            for v in out:
                yield u, v

    def reachable(self, start: int) -> list[int]:
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in self.succ[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        seen.discard(start)
        return sorted(seen)


def build_directed_graph(mip: MipInstance, topo: ScpTopology | None = None) -> DirectedScpGraph:
    """Orient the variable/constraint graph of a planning MIP by flow direction.

    ``topo`` is only used for a consistency check on period counts.
    """
    names: list[str] = []
    roles: list[str] = []
    periods: list[int] = []
    for v in mip.vars:
        role, a, b = parse_name(v.name)
        if role not in ("x", "z", "y", "u"):
            raise DataError(f"{v.name!r} is not a variable name")
        names.append(v.name)
        roles.append(role)
        periods.append(b)
    n_var = len(names)
    for c in mip.cons:
        role, a, b = parse_name(c.name)
        if role not in ("bal", "dem", "cap"):
            raise DataError(f"{c.name!r} is not a row name")
        names.append(c.name)
        roles.append(role)
        periods.append(b)
    if topo is not None and periods and max(periods) >= topo.n_periods:
        raise DataError("model references periods beyond the topology horizon")

    succ: list[set[int]] = [set() for _ in names]
    for r, c in enumerate(mip.cons):
        node = n_var + r
        role = roles[node]
        if role == "cap":
            continue
        for k, coeff in c.terms:
            if role == "dem":
                succ[k].add(node)
            elif coeff > 0:
                succ[k].add(node)  # stock flows in
            else:
                succ[node].add(k)  # stock is drawn out
    for u, out in enumerate(succ):
        for v in out:
            if periods[v] < periods[u]:
                raise DataError(f"arc {names[u]} -> {names[v]} runs backwards in time")
    return DirectedScpGraph(tuple(names), tuple(roles), tuple(periods),
                            tuple(tuple(sorted(s)) for s in succ),
                            {n: k for k, n in enumerate(names)})


def extract_feature_spec(g: DirectedScpGraph, var: str, fixed_length: int | None = None) -> FeatureSpec:
    """Demand rows reachable from ``var``, ordered by period then product."""
    k = g.index.get(var)
    if k is None or g.roles[k] not in ("x", "z"):
        raise DataError(f"{var!r} is not an integer variable of this graph")
    refs = []
    for v in g.reachable(k):
        if g.roles[v] == "dem":
            _, i, t = parse_name(g.names[v])
            refs.append((i, t))
    refs.sort(key=lambda it: (it[1], it[0]))
    return FeatureSpec(var, tuple(refs), len(refs) if fixed_length is None else fixed_length)


def assemble_vector(spec: FeatureSpec, inst: ScpInstance, normalizer: float = 1.0,
                    demand_window: int = 1) -> np.ndarray:
    """Demand values named by ``spec``, scaled and zero-padded.

    References beyond ``fixed_length`` are dropped from the latest period back.
    """
    if normalizer <= 0:
        raise DataError("normalizer must be positive")
    rhs = demand_rhs(inst, demand_window)
    M, T = rhs.shape
    out = np.zeros(spec.fixed_length)
    for slot, (i, t) in enumerate(spec.demand_refs[:spec.fixed_length]):
        if not (0 <= i < M and 0 <= t < T):
            raise DataError(f"demand reference {(i, t)} outside a {M}x{T} instance")
        out[slot] = rhs[i, t] / normalizer
    return out


def specs_hash(specs) -> str:
    payload = json.dumps([[s.var_name, [list(r) for r in s.demand_refs], s.fixed_length] for s in specs])
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class FeatureExtractor:
    """Fit the per-variable feature layout on training instances, then transform.

    Parameters
    ----------
    demand_window : demand row pooling used to build the models.
    pad_quantile : padded length is this quantile of the spec lengths.
    """

    def __init__(self, demand_window: int = 1, pad_quantile: float = 0.95):
        self.demand_window = demand_window
        self.pad_quantile = pad_quantile

    def get_params(self, deep: bool = True) -> dict:
        return {"demand_window": self.demand_window, "pad_quantile": self.pad_quantile}

    def set_params(self, **params) -> "FeatureExtractor":
        for k, v in params.items():
            if k not in self.get_params():
                raise ValueError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, instances, y=None) -> "FeatureExtractor":
        from .scp import build_mip

        instances = list(instances)
        if not instances:
            raise DataError("cannot fit features on an empty instance list")
        if not 0 < self.pad_quantile <= 1:
            raise ValueError("pad_quantile must lie in (0, 1]")
        topo = instances[0].topology
        if any(s.topology != topo for s in instances):
            raise DataError("all instances must share one topology")
        mip = build_mip(instances[0], self.demand_window)
        g = build_directed_graph(mip, topo)
        raw = [extract_feature_spec(g, mip.vars[k].name) for k in mip.integer_indices]
        lengths = np.array([len(s.demand_refs) for s in raw])
        L = max(1, int(math.ceil(np.quantile(lengths, self.pad_quantile, method="higher"))))
        self.topology_ = topo
        self.specs_ = tuple(FeatureSpec(s.var_name, s.demand_refs, L) for s in raw)
        self.var_names_ = tuple(s.var_name for s in self.specs_)
        self.fixed_length_ = L
        peak = max(float(np.max(demand_rhs(s, self.demand_window))) for s in instances)
        self.normalizer_ = peak if peak > 0 else 1.0
        self.hash_ = specs_hash(self.specs_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "specs_"):
            raise DataError("FeatureExtractor is not fitted")

    def transform(self, instances) -> np.ndarray:
        """Array of shape (n_instances, n_integer_vars, fixed_length)."""
        self._check_fitted()
        rows = []
        for inst in instances:
            if inst.topology != self.topology_:
                raise DataError(f"{inst.name}: topology differs from the fitted one")
            rows.append(np.stack([assemble_vector(s, inst, self.normalizer_, self.demand_window)
                                  for s in self.specs_]))
        return np.stack(rows) if rows else np.zeros((0, len(self.specs_), self.fixed_length_))

    def fit_transform(self, instances, y=None) -> np.ndarray:
        instances = list(instances)
        return self.fit(instances).transform(instances)

    def state(self) -> dict:
        self._check_fitted()
        return {"demand_window": self.demand_window, "pad_quantile": self.pad_quantile,
                "topology": self.topology_.to_dict(), "normalizer": self.normalizer_,
                "specs": [[s.var_name, [list(r) for r in s.demand_refs], s.fixed_length] for s in self.specs_],
                "hash": self.hash_}

    @classmethod
    def from_state(cls, d: dict) -> "FeatureExtractor":
        fx = cls(d["demand_window"], d["pad_quantile"])
        fx.topology_ = ScpTopology.from_dict(d["topology"])
        fx.specs_ = tuple(FeatureSpec(n, tuple(tuple(r) for r in refs), L) for n, refs, L in d["specs"])
        fx.var_names_ = tuple(s.var_name for s in fx.specs_)
        fx.fixed_length_ = fx.specs_[0].fixed_length if fx.specs_ else 1
        fx.normalizer_ = float(d["normalizer"])
        fx.hash_ = specs_hash(fx.specs_)
        if fx.hash_ != d["hash"]:
            raise DataError("feature spec hash mismatch")
        return fx
