import math

import numpy as np
import pytest

from propel.exceptions import CheckpointError, ConfigError, DataError
from propel.learn.prop import role_matrix
from propel.learn import (
    FixSet,
    MlpStack,
    PropFixer,
    WeightedMLPClassifier,
    build_reduced_mip,
    classifier_loss_and_grads,
    compute_weights,
    f1_zero_class,
    label_dataset,
    label_instance,
    load_checkpoint,
    normalized_rc,
    save_checkpoint,
    softmax2,
    weighted_ce_loss,
)
from propel.scp import build_mip
from propel.solve import SolveLimits, brute_force, solve_lp

from conftest import micro_batch


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)


def classifier_fd_check(rng, seed):
    V, B = int(rng.integers(1, 4)), int(rng.integers(2, 7))
    sizes = (int(rng.integers(1, 5)),) + tuple(int(rng.integers(2, 6)) for _ in range(rng.integers(1, 3))) + (2,)
    net = MlpStack(sizes, V, "softmax", seed)
    # random biases keep rectifiers off their kink
    net.set_flat(rng.normal(scale=0.8, size=net.n_params()))
    X = rng.normal(size=(V, B, sizes[0]))
    psi = rng.integers(0, 2, (V, B)).astype(float)
    w_fn = rng.uniform(1, 3, (V, B))
    w_fp = rng.uniform(0.5, 2, (V, B))
    _, grads = classifier_loss_and_grads(net, X, psi, w_fn, w_fp)
    flat = net.get_flat()
    g_an = np.concatenate([g.ravel() for g in grads])
    g_fd = np.zeros_like(flat)
    h = 1e-5
    for k in range(flat.size):
        for sgn in (1, -1):
            f = flat.copy()
            f[k] += sgn * h
            net.set_flat(f)
            g_fd[k] += sgn * classifier_loss_and_grads(net, X, psi, w_fn, w_fp)[0].sum() / (2 * h)
    net.set_flat(flat)
    return g_an, g_fd


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    for seed in range(20):
        g_an, g_fd = classifier_fd_check(rng, seed)
        assert np.all((rel_err(g_an, g_fd) <= 1e-4) | (np.abs(g_an - g_fd) <= 1e-9))


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    z = rng.normal(scale=50, size=(100, 2))
    assert np.allclose(softmax2(z).sum(axis=1), 1.0, atol=1e-9)
    net = MlpStack((3, 8, 2), 4, "softmax", 0)
    out = net.forward(rng.normal(scale=100, size=(4, 20, 3)))
    assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-9)


def test_compute_weights_examples():
    w_fp, w_fn = compute_weights([1, 1, 0, 0])
    assert np.allclose(w_fn, [math.exp(0.5), math.exp(0.5), 1, 1])
    assert np.allclose(w_fn[:2], 1.64872, atol=1e-5) and np.all(w_fp == 1)
    assert np.all(compute_weights([0, 0, 0])[1] == 1)
    assert compute_weights([1])[1][0] == pytest.approx(math.e)
    for k in range(1, 8):
        psi = np.r_[np.ones(k), np.zeros(5)]
        assert np.allclose(compute_weights(psi)[1], np.r_[np.full(k, math.exp(1 / k)), np.ones(5)])
    # solution values in the ratio
    assert np.allclose(compute_weights([1, 1, 0], values=[3, 1, 0])[1], [math.exp(0.75), math.exp(0.25), 1])
    with pytest.raises(DataError):
        compute_weights([])


def test_weighted_loss_examples():
    rng = np.random.default_rng(2)
    p = rng.uniform(0.01, 0.99, 50)
    y = rng.integers(0, 2, 50).astype(float)
    plain = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert np.array_equal(weighted_ce_loss(p, y), plain)
    assert weighted_ce_loss(1 - 1e-12, 1) == pytest.approx(0.0, abs=1e-11)
    assert weighted_ce_loss(0.5, 1, w_fn=2.0) == pytest.approx(2 * math.log(2))
    assert weighted_ce_loss(1.0, 0) == pytest.approx(-math.log(1e-12))
    assert math.isfinite(weighted_ce_loss(0.0, 1))


def test_normalized_rc_examples():
    assert normalized_rc(0.0, 1.0) == 0.0
    assert normalized_rc(2.0, 2.0) == pytest.approx(-0.25)
    rc = np.random.default_rng(3).normal(scale=10, size=200)
    r = normalized_rc(rc, np.max(np.abs(rc)))
    assert np.all((r >= -0.25) & (r <= 0.25))
    with pytest.raises(ConfigError):
        normalized_rc(1.0, 0.0)


def test_f1_zero_class():
    psi = np.array([[0, 1], [0, 0], [1, 1]])
    pz = np.array([[0.9, 0.2], [0.1, 0.7], [0.2, 0.1]])
    f1 = f1_zero_class(psi, pz)
    # column 0: tp=1 fn=1 fp=0 -> 2/3; column 1: tp=1, fp=0, fn=0 -> 1
    assert np.allclose(f1, [2 / 3, 1.0])


def test_separable_toy_reaches_full_accuracy():
    rng = np.random.default_rng(4)
    X = rng.uniform(0, 1, (200, 1))
    y = (X[:, 0] >= 0.5).astype(float)
    keep = np.abs(X[:, 0] - 0.5) > 0.02
    X, y = X[keep], y[keep]
    clf = WeightedMLPClassifier(hidden=16, layers=3, lr=0.005, epochs=100, seed=0).fit(X[:150], y[:150])
    assert (clf.predict(X[150:]) == y[150:]).mean() == 1.0
    assert clf.loss_curve_[-1] < clf.loss_curve_[0]


def test_zero_epochs_keeps_initialisation():
    X = np.random.default_rng(5).normal(size=(20, 3))
    y = np.r_[np.ones(10), np.zeros(10)]
    clf = WeightedMLPClassifier(hidden=8, layers=3, epochs=0, seed=7).fit(X, y)
    ref = MlpStack((3, 8, 8, 2), 1, "softmax", 7)
    assert np.array_equal(clf.net_.get_flat(), ref.get_flat())
    assert clf.loss_curve_ == []


def test_classifier_determinism_and_params():
    X = np.random.default_rng(6).normal(size=(40, 2))
    y = (X[:, 0] > 0).astype(float)
    a = WeightedMLPClassifier(hidden=8, epochs=5, seed=3).fit(X, y)
    b = WeightedMLPClassifier(hidden=8, epochs=5, seed=3).fit(X, y)
    assert np.array_equal(a.net_.get_flat(), b.net_.get_flat())
    assert a.get_params()["hidden"] == 8
    with pytest.raises(ValueError):
        a.set_params(depth=3)
    with pytest.raises(ValueError):
        a.fit(X, y + 2)
    with pytest.raises(DataError):
        WeightedMLPClassifier().predict_proba(X)


def test_stack_members_train_independently():
    # training a stack equals training each member alone
    rng = np.random.default_rng(8)
    X = rng.normal(size=(2, 30, 3))
    psi = rng.integers(0, 2, (2, 30)).astype(float)
    w = np.ones((2, 30))
    from propel.learn.prop import _train_stack

    stack = MlpStack((3, 4, 2), 2, "softmax", 1)
    solo = stack.select([1])
    _train_stack(stack, X, psi, w, w, 0.01, 3, 8, 0)
    _train_stack(solo, X[1:], psi[1:], w[1:], w[1:], 0.01, 3, 8, 0)
    assert np.allclose(stack.select([1]).get_flat(), solo.get_flat())


def test_label_micro_and_zero_demand(micro):
    lab = label_instance(micro, SolveLimits(rel_gap=0.0))
    mip = build_mip(micro)
    names = [mip.vars[k].name for k in mip.integer_indices]
    assert lab.psi[names.index("z[0,0]")] == 1 and lab.values[names.index("z[0,0]")] == 2
    zero = micro.replace_demand(np.zeros((1, 1)))
    assert np.all(label_dataset([zero])[0].psi == 0)


def test_label_psi_matches_values():
    for lab in label_dataset(micro_batch(8, 13), SolveLimits(rel_gap=0.0)):
        assert np.array_equal(lab.psi == 0, np.abs(lab.values) < 0.5)


def test_reduced_mip_rules(micro):
    mip = build_mip(micro)
    assert build_reduced_mip(mip, FixSet((), len(mip.integer_indices))) is mip
    all_int = FixSet(tuple(mip.integer_indices), len(mip.integer_indices))
    red = build_reduced_mip(mip, all_int)
    assert brute_force(red).best_objective == pytest.approx(float(np.sum(micro.unmet_penalty * micro.demand)))
    cont = [k for k in range(mip.n_vars) if k not in set(mip.integer_indices)]
    with pytest.raises(DataError):
        build_reduced_mip(mip, FixSet((cont[0],), 4))
    for inst in micro_batch(10, 14):
        m = build_mip(inst)
        full = FixSet(tuple(m.integer_indices), len(m.integer_indices))
        # initial stock cannot be consumed, so it is carried to the end
        y0 = np.array(inst.topology.initial_inventory)
        expect = float(np.sum(inst.unmet_penalty * inst.demand) + np.sum(inst.inv_cost * y0[:, None]))
        res = brute_force(build_reduced_mip(m, full))
        assert res.best_objective == pytest.approx(expect)
        assert np.all(res.best_solution[m.integer_indices] == 0)


def test_restriction_bound_on_micros():
    rng = np.random.default_rng(15)
    for inst in micro_batch(10, 15):
        mip = build_mip(inst)
        opt = brute_force(mip).best_objective
        ints = mip.integer_indices
        for _ in range(5):
            pick = ints[rng.random(len(ints)) < 0.5]
            assert brute_force(build_reduced_mip(mip, pick)).best_objective >= opt - 1e-9


def test_fixer_fit_report_and_predict(small_fixer):
    fx, insts = small_fixer
    rep = fx.training_report()
    assert len(rep) == len(fx.features_.var_names_)
    assert all(0 <= f1 <= 1 for _, f1, _ in rep)
    assert {arch for _, _, arch in rep} <= {"constant", "lr=0.005/layers=3/hidden=8", "lr=0.005/layers=3/hidden=16"}
    P = fx.predict_proba_zero(insts[10:])
    assert P.shape == (2, len(fx.features_.var_names_)) and np.all((P >= 0) & (P <= 1))


def test_fix_rule_examples(small_fixer):
    fx, insts = small_fixer
    inst = insts[10]
    mip = build_mip(inst)
    lp = solve_lp(mip)
    score = fx.scores(inst, mip, lp, use_rc=False)
    fix = fx.predict_fix_set(inst, lp, mip, use_rc=False)
    assert set(fix.indices) == set(mip.integer_indices[score >= 0.9])
    adj = fx.scores(inst, mip, lp, use_rc=True)
    rc = lp.reduced_costs[mip.integer_indices]
    s = np.max(np.abs(rc))
    assert np.allclose(adj, score - np.arctan(rc / s) / np.pi)
    # 0.95 + 0 passes 0.9; 0.88 - 0.25 does not
    assert 0.95 + normalized_rc(0.0, 1.0) >= 0.9 and 0.88 + normalized_rc(1.0, 1.0) < 0.9
    assert len(fx.predict_fix_set(inst, lp, mip, tau=1.0 + 1e-9, use_rc=False)) == 0


def test_fix_sets_monotone_in_tau(small_fixer):
    fx, insts = small_fixer
    for inst in insts[10:]:
        mip = build_mip(inst)
        lp = solve_lp(mip)
        prev = None
        for tau in (0.3, 0.5, 0.7, 0.9, 0.99):
            cur = set(fx.predict_fix_set(inst, lp, mip, tau=tau).indices)
            if prev is not None:
                assert cur <= prev
            prev = cur


def test_fixer_determinism(small_fixer):
    fx, insts = small_fixer
    again = PropFixer(**fx.get_params()).fit(insts[:10], lim=SolveLimits(rel_gap=0.01))
    for (c1, m1, n1), (c2, m2, n2) in zip(fx.groups_, again.groups_):
        assert c1 == c2 and np.array_equal(m1, m2) and np.array_equal(n1.get_flat(), n2.get_flat())


def test_checkpoint_round_trip_and_hash(small_fixer, tmp_path):
    fx, insts = small_fixer
    path = tmp_path / "fix.npz"
    fx.save(path)
    back = PropFixer.load(path, expected_hash=fx.features_.hash_)
    assert np.array_equal(back.predict_proba_zero(insts[10:]), fx.predict_proba_zero(insts[10:]))
    with pytest.raises(CheckpointError):
        PropFixer.load(path, expected_hash="deadbeef")
    with pytest.raises(CheckpointError):
        load_checkpoint(path, "qnet")
    save_checkpoint(tmp_path / "x.npz", "fixmodels", {"x": 1}, np.zeros(3))
    with pytest.raises((CheckpointError, KeyError)):
        PropFixer.load(tmp_path / "x.npz")


def test_fixer_rejects_bad_config(small_fixer):
    _, insts = small_fixer
    with pytest.raises(ConfigError):
        PropFixer(tau=1.5).fit(insts[:3])
    with pytest.raises(DataError):
        PropFixer().fit([])
    with pytest.raises(DataError):
        PropFixer().predict_proba_zero(insts[:1])


def test_role_matrix():
    R = role_matrix(["x[0,0]", "z[1,2]", "x[3,1]"])
    assert R.tolist() == [[1, 0, 1, 0, 0], [0, 1, 0, 0, 1], [1, 0, 0, 1, 0]]


def test_shared_model_fit_predict_and_checkpoint(small_fixer, tmp_path):
    fx, insts = small_fixer
    shared = PropFixer(**{**fx.get_params(), "shared_model": True}).fit(insts[:10], lim=SolveLimits(rel_gap=0.01))
    assert shared.groups_ == [] and shared.shared_[2].n_models == 1
    P = shared.predict_proba_zero(insts[10:])
    assert P.shape == (2, len(shared.features_.specs_)) and np.all((P >= 0) & (P <= 1))
    # one network serves every trainable variable
    assert len(set(shared.choice_[shared.choice_ >= 0])) == 1
    shared.save(tmp_path / "s.npz")
    back = PropFixer.load(tmp_path / "s.npz")
    assert np.array_equal(back.predict_proba_zero(insts[10:]), P)
    assert len(back.training_report()) == len(shared.features_.specs_)
