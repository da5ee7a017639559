import copy
import math

import numpy as np
import pytest

from propel.drl import (
    EXCLUDE,
    INSERT,
    Action,
    Episode,
    Experience,
    QNetwork,
    ReplayBuffer,
    RlHyper,
    RlState,
    bellman_loss_and_grads,
    bellman_targets,
    choose_action,
    encode_state,
    infer,
    learn_step,
    macro_action,
    mip_periods,
    partition_fix_set,
    reward,
    segment_widths,
    state_mip,
    train_rl,
    transition,
)
from propel.exceptions import CheckpointError, ConfigError, DataError
from propel.learn import FixSet, build_reduced_mip
from propel.learn.prop import solve_prop
from propel.scp import build_mip
from propel.solve import SolveClock, SolveLimits, brute_force

from conftest import micro_batch


def test_segment_widths():
    assert segment_widths(8, 8) == (1,) * 8
    assert segment_widths(10, 8) == (2, 2, 1, 1, 1, 1, 1, 1)
    assert segment_widths(5, 1) == (5,)
    assert segment_widths(3, 5) == (1, 1, 1, 0, 0)
    with pytest.raises(ConfigError):
        segment_widths(4, 0)


def test_partition_covers_fix_set():
    periods = np.array([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 9])
    fix = FixSet(tuple(range(12)), 12)
    p = partition_fix_set(fix, 8, periods, 10)
    assert p.subsets[0] == (0, 1, 10) and p.subsets[1] == (2, 3) and p.subsets[7] == (9, 11)
    assert sorted(sum(p.subsets, ())) == list(range(12))
    whole = partition_fix_set(fix, 1, periods, 10)
    assert whole.subsets == (tuple(range(12)),)
    with pytest.raises(ConfigError):
        partition_fix_set(fix, 0, periods, 10)


def test_transition_rules():
    s0 = RlState("d")
    s1 = transition(s0, Action(INSERT, 3), 8)
    assert s1.inserted == {3} and s1.excluded == set() and s1.instance == "d"
    s2 = transition(s1, Action(EXCLUDE, 1), 8)
    assert s2.inserted == {3} and s2.excluded == {1}
    with pytest.raises(DataError):
        transition(s2, Action(INSERT, 3), 8)
    with pytest.raises(DataError):
        transition(s2, Action(EXCLUDE, 9), 8)
    assert len(s1.actions(8)) == len(s0.actions(8)) - 2  # one subset, two action kinds
    assert len(s1.available(8)) == len(s0.available(8)) - 1
    assert Action.from_code(Action(EXCLUDE, 5).code(8), 8) == Action(EXCLUDE, 5)


def test_state_mip_extremes(micro):
    mip = build_mip(micro)
    fix = FixSet(tuple(mip.integer_indices), len(mip.integer_indices))
    p = partition_fix_set(fix, 1, mip_periods(mip), 1)
    none = state_mip(RlState("m"), fix, p, mip)
    assert none == build_reduced_mip(mip, fix)
    full = state_mip(RlState("m", frozenset({0})), fix, p, mip)
    assert full == mip


def test_unfix_monotone_on_micros():
    rng = np.random.default_rng(3)
    for inst in micro_batch(10, 31):
        mip = build_mip(inst)
        T = inst.topology.n_periods
        fix = FixSet(tuple(mip.integer_indices), len(mip.integer_indices))
        p = partition_fix_set(fix, 2, mip_periods(mip), T)
        order = rng.permutation(2)
        prev = math.inf
        for k in range(3):
            s = RlState("m", frozenset(int(v) for v in order[:k]))
            val = brute_force(state_mip(s, fix, p, mip)).best_objective
            assert val <= prev + 1e-9
            prev = val


def test_encoding_layout(micro):
    mip = build_mip(micro)
    fix = FixSet(tuple(mip.integer_indices), 2)
    p = partition_fix_set(fix, 2, mip_periods(mip), 1)
    v0 = encode_state(RlState("m"), micro, p)
    assert v0.shape == (9,) and np.all(v0[:4] == 0) and v0[-1] == 1.0
    seen = set()
    for I in ((), (0,), (1,), (0, 1)):
        for E in ((), (0,), (1,)):
            if set(I) & set(E):
                continue
            seen.add(tuple(encode_state(RlState("m", frozenset(I), frozenset(E)), micro, p)))
    assert len(seen) == 8  # every disjoint (I, E) pair encodes distinctly
    other = micro.replace_demand(np.array([[7]]))
    a, b = encode_state(RlState("m"), micro, p), encode_state(RlState("m"), other, p)
    assert np.array_equal(np.delete(a, range(6, 8)), np.delete(b, range(6, 8)))


def test_reward_examples():
    s = RlState("d", objective=12.0, solution=np.zeros(1))
    assert reward(s, 10.0) == pytest.approx(-1.2)
    assert reward(RlState("d", objective=10.0, solution=np.zeros(1)), 10.0) == pytest.approx(-1.0)
    assert reward(RlState("d", objective=8.0, solution=np.zeros(1)), 10.0, sense="max") == pytest.approx(0.8)
    assert reward(s, 10.0, normalize=False) == -12.0
    assert reward(RlState("d"), 10.0) == -2.0
    assert reward(RlState("d"), 10.0, mode="gap") == -1.0
    assert reward(s, 10.0, mode="gap") == pytest.approx(-2 / 12)


def exp(state, a, r, nxt, final, mask):
    return Experience(np.asarray(state, float), (a,), r, np.asarray(nxt, float), final, np.asarray(mask, bool))


def test_bellman_targets():
    q = QNetwork(2, (4,), seed=0)
    e = exp(np.zeros(9), 0, 3.5, np.ones(9), True, [True] * 4)
    assert bellman_targets([e], q.snapshot(), 0.99)[0] == 3.5
    live = exp(np.zeros(9), 0, 1.0, np.ones(9), False, [True, False, True, False])
    assert bellman_targets([live], q.snapshot(), 0.0)[0] == 1.0
    q2 = q.q_values(np.ones(9))[0]
    expect = 1.0 + 0.5 * max(q2[0], q2[2])
    assert bellman_targets([live], q.snapshot(), 0.5)[0] == pytest.approx(expect)


def test_q_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    for trial in range(20):
        m = int(rng.integers(1, 4))
        q = QNetwork(m, tuple(int(h) for h in rng.integers(2, 6, rng.integers(1, 3))), seed=trial)
        net = q.net
        net.set_flat(rng.normal(scale=0.8, size=net.n_params()))
        B = int(rng.integers(1, 6))
        S = rng.normal(size=(B, 4 * m + 1))
        mask = np.zeros((B, 2 * m))
        mask[np.arange(B), rng.integers(0, 2 * m, B)] = 1
        mask[0, :] = 1
        y = rng.normal(size=B)
        _, grads = bellman_loss_and_grads(net, S, mask, y)
        g_an = np.concatenate([g.ravel() for g in grads])
        flat = net.get_flat()
        g_fd = np.zeros_like(flat)
        h = 1e-5
        for k in range(flat.size):
            for sgn in (1, -1):
                f = flat.copy()
                f[k] += sgn * h
                net.set_flat(f)
                g_fd[k] += sgn * bellman_loss_and_grads(net, S, mask, y)[0] / (2 * h)
        net.set_flat(flat)
        err = np.abs(g_an - g_fd) / np.maximum(np.abs(g_an) + np.abs(g_fd), 1e-8)
        assert np.all((err <= 1e-4) | (np.abs(g_an - g_fd) <= 1e-9))


def test_residual_decreases_on_fixed_buffer():
    rng = np.random.default_rng(11)
    q = QNetwork(2, (32, 32), lr=0.001, seed=0)
    buf = ReplayBuffer(100)
    for _ in range(10):
        buf.add(exp(rng.uniform(size=9), int(rng.integers(4)), float(rng.normal()), rng.uniform(size=9),
                    bool(rng.random() < 0.5), [True] * 4))
    losses = [learn_step(buf, q, 0.9, 4, rng) for _ in range(100)]
    smooth = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert smooth[-1] < smooth[0]
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])


def test_replay_fifo_and_empty():
    buf = ReplayBuffer(3)
    for k in range(5):
        buf.add(exp(np.zeros(5), 0, float(k), np.zeros(5), True, [True, True]))
    assert [e.reward for e in buf.items()] == [2.0, 3.0, 4.0]
    with pytest.raises(ConfigError):
        learn_step(ReplayBuffer(2), QNetwork(1))
    with pytest.raises(ConfigError):
        ReplayBuffer(0)


def test_macro_action_set():
    q = np.array([1.0, 0.2, 0.5, -1.0, 0.0, 0.3, 0.5, -2.0])
    assert macro_action(q, [0, 1, 2, 3], 4) == [0, 2, 3]
    assert macro_action(q, [1], 4) == []
    assert macro_action(q, [0, 1, 2, 3], 4) == [k for k in range(4) if q[k] >= q[4 + k]]


def test_uniform_exploration():
    rng = np.random.default_rng(0)
    mask = np.array([True, False, True, True, False, True])
    q = np.arange(6.0)
    counts = np.bincount([choose_action(q, mask, 1.0, rng) for _ in range(8000)], minlength=6)
    assert counts[1] == counts[4] == 0
    assert np.all(np.abs(counts[mask] / 8000 - 0.25) < 0.03)
    assert choose_action(q, mask, 0.0, rng) == 5


def test_qnet_checkpoint(tmp_path):
    q = QNetwork(3, (8, 8), seed=2)
    q.save(tmp_path / "q.npz", {"note": 1})
    back = QNetwork.load(tmp_path / "q.npz")
    s = np.random.default_rng(0).normal(size=(4, 13))
    assert np.array_equal(back.q_values(s), q.q_values(s)) and back.extra == {"note": 1}
    assert q.q_values(s).shape == (4, 6)
    with pytest.raises(CheckpointError):
        QNetwork.load(tmp_path / "missing.npz")


def test_hyper_validation():
    with pytest.raises(ConfigError):
        RlHyper(gamma=0)
    with pytest.raises(ConfigError):
        RlHyper(alpha=1.5)
    with pytest.raises(ConfigError):
        RlHyper(reward_mode="other")
    h = RlHyper()
    assert (h.gamma, h.alpha, h.lr, h.m, h.tolerance, h.buffer_capacity, h.hidden) == \
        (0.99, 0.1, 0.001, 8, 0.01, 10_000, (128, 128))


def test_train_rl_within_tolerance_has_no_transitions(small_fixer):
    fx, insts = small_fixer
    hyper = RlHyper(m=2, tolerance=1.0, step_time_limit=20, hidden=(8,))
    log = []
    q0 = QNetwork(2, (8,), seed=0)
    before = q0.net.get_flat().copy()
    train_rl(insts[10:], fx, hyper, seed=0, qnet=q0, episode_log=log)
    assert all(step == 0 for _, step, *_ in log)
    assert np.array_equal(before, q0.net.get_flat())
    with pytest.raises(DataError):
        train_rl([], fx, hyper)


def test_train_rl_deterministic(small_fixer):
    fx, insts = small_fixer
    # a loose threshold fixes many variables so the start is rarely within tolerance
    fx = copy.deepcopy(fx).set_params(tau=0.3)
    hyper = RlHyper(m=2, tolerance=0.0, step_time_limit=6, hidden=(8,), t_max=2, deterministic_clock=True)
    lim = SolveLimits(6, 0.0, None, True)
    logs = []
    nets = []
    for _ in range(2):
        log = []
        nets.append(train_rl(insts[:4], fx, hyper, seed=5, episode_log=log, prop_lim=lim))
        logs.append(log)
    assert logs[0] == logs[1]
    assert np.array_equal(nets[0].net.get_flat(), nets[1].net.get_flat())
    assert any(step > 0 for _, step, *_ in logs[0])


def test_infer_zero_steps_when_within_tolerance(small_fixer):
    fx, insts = small_fixer
    inst = insts[10]
    hyper = RlHyper(m=2, tolerance=1.0, step_time_limit=20, hidden=(8,), deterministic_clock=True)
    q = QNetwork(2, (8,), seed=0)
    prop, _, _ = solve_prop(fx, inst, SolveLimits(20, 0.01, None, True))
    res = infer(inst, fx, q, hyper, prop_result=prop)
    assert res.info["steps"] == [] and res.best_objective == prop.best_objective


def test_infer_best_so_far(small_fixer):
    fx, insts = small_fixer
    fx2 = copy.deepcopy(fx).set_params(tau=0.3)
    hyper = RlHyper(m=3, tolerance=0.0, step_time_limit=4, hidden=(8,), t_max=3, deterministic_clock=True)
    q = QNetwork(3, (8,), seed=1)
    for inst in insts[8:]:
        clock = SolveClock(True)
        prop, _, _ = solve_prop(fx2, inst, SolveLimits(4, 0.0, None, True), clock)
        res = infer(inst, fx2, q, hyper, prop_result=prop, clock=clock)
        objs = [o for _, o in res.trace]
        assert all(b < a for a, b in zip(objs, objs[1:]))
        if prop.has_incumbent:
            assert res.best_objective <= prop.best_objective + 1e-9
        if objs:
            assert res.best_objective == pytest.approx(min(objs))
        assert len(res.info["steps"]) <= hyper.t_max


def test_episode_gap_and_mask(small_fixer):
    fx, insts = small_fixer
    epi = Episode(insts[10], fx, RlHyper(m=3))
    s = RlState("x")
    assert epi.gap(s) == 1.0
    assert epi.mask(s).tolist() == [True] * 6
    s2 = transition(s, Action(INSERT, 1), 3)
    assert epi.mask(s2).tolist() == [True, False, True, True, False, True]
