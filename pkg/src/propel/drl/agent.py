"""Q-learning of unfixing decisions and macro-action inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigError, DataError
from ..learn.prop import FixSet, PropFixer, solve_prop
from ..metrics import primal_gap
from ..mip import MipInstance
from ..scp import ScpInstance, build_mip
from ..solve import LpModel, MipResult, SolveClock, SolveLimits, solve_mip
from .mdp import (
    INSERT,
    Action,
    Partition,
    RlState,
    encode_state,
    mip_periods,
    partition_fix_set,
    reward,
    state_mip,
    transition,
)
from .qnet import Experience, QNetwork, ReplayBuffer, learn_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RlHyper:
    gamma: float = 0.99
    alpha: float = 0.1  # exploration probability
    lr: float = 0.001
    t_max: int = 4
    m: int = 8
    tolerance: float = 0.01
    step_time_limit: float = 100.0
    episodes: int | None = None  # default: one pass over the training set
    batch: int = 32
    buffer_capacity: int = 10_000
    hidden: tuple[int, ...] = (128, 128)
    reward_mode: str = "objective"
    normalize_reward: bool = True
    rel_gap: float = 0.01
    deterministic_clock: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.t_max < 1 or self.m < 1:
            raise ConfigError("t_max and m must be at least 1")
        if self.step_time_limit <= 0 or self.lr <= 0:
            raise ConfigError("step_time_limit and lr must be positive")
        if self.reward_mode not in ("objective", "gap"):
            raise ConfigError(f"unknown reward mode {self.reward_mode!r}")

    def step_limits(self) -> SolveLimits:
        return SolveLimits(self.step_time_limit, self.rel_gap, None, self.deterministic_clock)


class Episode:
    """Everything one instance needs for unfixing: model, LP bound, fix set, partition."""

    def __init__(self, inst: ScpInstance, fixer: PropFixer, hyper: RlHyper, mip: MipInstance | None = None,
                 lp=None, fix: FixSet | None = None):
        self.inst = inst
        self.hyper = hyper
        self.mip = mip or build_mip(inst, fixer.demand_window)
        self.lp = lp if lp is not None else LpModel(self.mip).solve()
        if self.lp.status != "optimal":
            raise DataError(f"{inst.name}: LP relaxation is not optimal ({self.lp.status})")
        self.lp_star = float(self.lp.objective)
        self.fix = fix if fix is not None else fixer.predict_fix_set(inst, self.lp, self.mip)
        self.partition: Partition = partition_fix_set(self.fix, hyper.m, mip_periods(self.mip),
                                                      inst.topology.n_periods)

    def gap(self, s: RlState) -> float:
        return primal_gap(s.objective, self.lp_star) if s.has_incumbent else 1.0

    def encode(self, s: RlState) -> np.ndarray:
        return encode_state(s, self.inst, self.partition, self.gap(s))

    def solve(self, s: RlState, lim: SolveLimits, clock: SolveClock | None = None) -> tuple[RlState, MipResult]:
        """Solve the state's model warm-started from the state's incumbent."""
        model = state_mip(s, self.fix, self.partition, self.mip)
        res = solve_mip(model, lim, warm_start=s.solution, clock=clock)
        sign = 1.0 if self.mip.sense == "min" else -1.0
        if res.has_incumbent and (not s.has_incumbent or sign * res.best_objective < sign * s.objective - 1e-12):
            out = RlState(s.instance, s.inserted, s.excluded, 0.0, res.best_objective, res.best_solution)
        else:
            out = s
        out = RlState(out.instance, out.inserted, out.excluded, self.gap(out), out.objective, out.solution)
        return out, res

    def initial(self, result: MipResult) -> RlState:
        s = RlState(self.inst.name)
        if result.has_incumbent:
            s = RlState(self.inst.name, objective=result.best_objective, solution=result.best_solution)
        return RlState(s.instance, s.inserted, s.excluded, self.gap(s), s.objective, s.solution)

    def mask(self, s: RlState) -> np.ndarray:
        m = self.partition.m
        out = np.zeros(2 * m, bool)
        for k in s.available(m):
            out[k] = out[m + k] = True
        return out

    def reward(self, s: RlState) -> float:
        return reward(s, self.lp_star, self.mip.sense, self.hyper.reward_mode, self.hyper.normalize_reward)


def _greedy(q: np.ndarray, mask: np.ndarray) -> int:
    return int(np.argmax(np.where(mask, q, -np.inf)))


def choose_action(q: np.ndarray, mask: np.ndarray, alpha: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy: a uniform available action with probability ``alpha``, else the best one."""
    if rng.random() < alpha:
        return int(rng.choice(np.flatnonzero(mask)))
    return _greedy(q, mask)


def train_rl(instances, fixer: PropFixer, hyper: RlHyper | None = None, seed: int = 0,
             qnet: QNetwork | None = None, episode_log: list | None = None,
             prop_lim: SolveLimits | None = None) -> QNetwork:
    """Epsilon-greedy episodes with replay; one learning pass after each episode.

    The starting state of an episode is the PROP solution under ``prop_lim``
    (default: the step limits).

    ``episode_log`` collects ``(episode, step, actions, gap, reward)`` rows.
    """
    hyper = hyper or RlHyper()
    instances = list(instances)
    if not instances:
        raise DataError("train_rl needs at least one instance")
    if qnet is None:
        qnet = QNetwork(hyper.m, hyper.hidden, hyper.lr, seed)
    elif qnet.m != hyper.m:
        raise ConfigError("Q-network and hyper-parameters disagree on m")
    rng = np.random.default_rng(seed)
    buffer = ReplayBuffer(hyper.buffer_capacity)
    order = rng.permutation(len(instances))
    n_ep = len(instances) if hyper.episodes is None else hyper.episodes
    lim = hyper.step_limits()
    m = hyper.m
    for ep in range(n_ep):
        inst = instances[order[ep % len(instances)]]
        epi = Episode(inst, fixer, hyper)
        res0, _, _ = solve_prop(fixer, inst, prop_lim or lim, mip=epi.mip)
        s = epi.initial(res0)
        if episode_log is not None:
            episode_log.append((ep, 0, "", s.gap, 0.0))
        if s.gap <= hyper.tolerance:
            continue
        for t in range(hyper.t_max):
            mask = epi.mask(s)
            if not mask.any():
                break
            enc = epi.encode(s)
            a = choose_action(qnet.q_values(enc)[0], mask, hyper.alpha, rng)
            act = Action.from_code(a, m)
            s_next = transition(s, act, m)
            if act.kind == INSERT:
                s_next, _ = epi.solve(s_next, lim)
            r = epi.reward(s_next)
            next_mask = epi.mask(s_next)
            final = t == hyper.t_max - 1 or s_next.gap <= hyper.tolerance or not next_mask.any()
            buffer.add(Experience(enc, (a,), r, epi.encode(s_next), final, next_mask))
            if episode_log is not None:
                episode_log.append((ep, t + 1, f"{act.kind}({act.subset})", s_next.gap, r))
            s = s_next
            if final:
                break
        if len(buffer):
            learn_step(buffer, qnet, hyper.gamma, hyper.batch, rng)
    return qnet


def macro_action(q: np.ndarray, available: list[int], m: int) -> list[int]:
    """Subsets whose insert value is at least their exclude value."""
    return [k for k in available if q[k] >= q[m + k]]


def infer(inst: ScpInstance, fixer: PropFixer, qnet: QNetwork, hyper: RlHyper | None = None,
          prop_result: MipResult | None = None, clock: SolveClock | None = None,
          prop_lim: SolveLimits | None = None, episode: Episode | None = None) -> MipResult:
    """Unfix subsets by macro-actions starting from the PROP solution.

    Each step solves the state's model for at most ``hyper.step_time_limit``
    on ``clock`` warm-started from the best solution so far. The best solution
    over all steps is returned, with a trace of strict improvements.
    """
    hyper = hyper or RlHyper()
    if qnet.m != hyper.m:
        raise ConfigError("Q-network and hyper-parameters disagree on m")
    clock = clock or SolveClock(hyper.deterministic_clock)
    epi = episode or Episode(inst, fixer, hyper)
    if prop_result is None:
        prop_result, _, _ = solve_prop(fixer, inst, prop_lim or hyper.step_limits(), clock, mip=epi.mip)
    s = epi.initial(prop_result)
    trace = list(prop_result.trace)
    nodes = prop_result.node_count
    m = hyper.m
    steps = []
    status = prop_result.status
    sign = 1.0 if epi.mip.sense == "min" else -1.0
    for _ in range(hyper.t_max):
        if s.gap <= hyper.tolerance:
            break
        avail = s.available(m)
        if not avail:
            break
        q = qnet.q_values(epi.encode(s))[0]
        chosen = macro_action(q, avail, m)
        if not chosen:
            chosen = [max(avail, key=lambda k: (q[k], -k))]
        nxt = RlState(s.instance, s.inserted | frozenset(chosen), s.excluded, s.gap, s.objective, s.solution)
        s, res = epi.solve(nxt, hyper.step_limits(), clock)
        nodes += res.node_count
        status = res.status
        steps.append(tuple(chosen))
        for t, obj in res.trace:
            if not trace or sign * obj < sign * trace[-1][1] - 1e-12:
                trace.append((t, obj))
    if not s.has_incumbent:
        return MipResult(prop_result.status, None, prop_result.best_objective, prop_result.bound, trace,
                         nodes, clock.now(), {"steps": steps, "inserted": [], "lp_star": epi.lp_star})
    return MipResult(status, s.solution, s.objective, prop_result.bound, trace, nodes, clock.now(),
                     {"steps": steps, "inserted": sorted(s.inserted), "lp_star": epi.lp_star})
