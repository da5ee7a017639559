"""Supervised fix-at-zero prediction and reduced models.

For every integer variable a small classifier maps the forecast demands that
can reach it to the probability that it is zero in a near-optimal plan. The
LP reduced cost then nudges that probability and variables whose adjusted
score clears ``tau`` are fixed at zero.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigError, DataError
from ..features import FeatureExtractor
from ..mip import MipInstance
from ..scp import ScpInstance, build_mip, parse_name
from ..solve import LpModel, LpSolution, SolveClock, SolveLimits, solve_lp, solve_mip
from .checkpoint import load_checkpoint, save_checkpoint
from .mlp import Adam, MlpStack, classifier_loss_and_grads, weighted_ce_terms

log = logging.getLogger(__name__)

LR_GRID = (0.001, 0.005)
LAYER_GRID = (3, 4)
HIDDEN_GRID = (32, 64, 128)


# -- formulas ---------------------------------------------------------------

def compute_weights(psis, values=None) -> tuple[np.ndarray, np.ndarray]:
    """False-positive and false-negative weights for one instance's labels.

    ``w_FN = exp(psi_i / sum(psi))``; when nothing is nonzero all weights are 1.
    Passing ``values`` uses them in place of the binary labels in the ratio.
    """
    psis = np.asarray(psis, dtype=float)
    if psis.size == 0:
        raise DataError("need at least one label")
    base = psis if values is None else np.abs(np.asarray(values, dtype=float))
    total = base.sum()
    w_fp = np.ones_like(psis)
    if total <= 0:
        return w_fp, np.ones_like(psis)
    return w_fp, np.exp(base / total)


def weighted_ce_loss(pred_nonzero_prob, psi, w_fn=1.0, w_fp=1.0) -> float | np.ndarray:
    """Weighted binary cross-entropy, negated for minimisation."""
    out = weighted_ce_terms(np.asarray(pred_nonzero_prob, float), np.asarray(psi, float),
                            np.asarray(w_fn, float), np.asarray(w_fp, float))
    return float(out) if np.ndim(out) == 0 else out


def normalized_rc(rc, s: float):
    """Reduced cost squashed into (-0.5, 0.5): ``-(1/pi) * arctan(rc / s)``."""
    if not s > 0:
        raise ConfigError("reduced-cost scale must be positive")
    r = -np.arctan(np.asarray(rc, dtype=float) / s) / math.pi
    return float(r) if np.ndim(r) == 0 else r


def f1_zero_class(psi_true: np.ndarray, prob_zero: np.ndarray) -> np.ndarray:
    """F1 of the "is zero" class per column; 1.0 where the class never occurs nor is predicted."""
    t0 = np.asarray(psi_true) == 0
    p0 = np.asarray(prob_zero) >= 0.5
    tp = (t0 & p0).sum(axis=0)
    fp = (~t0 & p0).sum(axis=0)
    fn = (t0 & ~p0).sum(axis=0)
    denom = 2 * tp + fp + fn
    return np.where(denom == 0, 1.0, 2 * tp / np.maximum(denom, 1))


# -- labels -----------------------------------------------------------------

@dataclass(frozen=True)
class LabeledSet:
    """Labels of one instance over the model's integer variables (column order)."""

    name: str
    psi: np.ndarray
    values: np.ndarray
    objective: float


def label_instance(inst: ScpInstance, lim: SolveLimits | None = None, demand_window: int = 1) -> LabeledSet | None:
    lim = lim or SolveLimits(rel_gap=0.01)
    mip = build_mip(inst, demand_window)
    res = solve_mip(mip, lim)
    if not res.has_incumbent:
        log.warning("%s: no incumbent within the labelling budget, dropped", inst.name)
        return None
    vals = res.best_solution[mip.integer_indices]
    psi = (np.abs(vals) >= 0.5).astype(float)
    return LabeledSet(inst.name, psi, np.round(vals), float(res.best_objective))


def label_dataset(instances, lim: SolveLimits | None = None, demand_window: int = 1) -> list[LabeledSet]:
    """Solve each instance to the limit's gap and record which integers are nonzero."""
    out = []
    for inst in instances:
        lab = label_instance(inst, lim, demand_window)
        if lab is not None:
            out.append(lab)
    return out


# -- single-variable estimator -----------------------------------------------

class WeightedMLPClassifier:
    """Binary classifier trained on the weighted cross-entropy.

    ``layers`` counts the affine layers, so ``layers=3`` has two hidden layers.
    ``sample_weight`` in ``fit`` supplies the weight of positive (nonzero)
    samples; negative samples weigh 1.
    """

    def __init__(self, hidden: int = 64, layers: int = 3, lr: float = 0.005, epochs: int = 100,
                 batch: int = 32, seed: int = 0):
        self.hidden = hidden
        self.layers = layers
        self.lr = lr
        self.epochs = epochs
        self.batch = batch
        self.seed = seed

    def get_params(self, deep: bool = True) -> dict:
        return {k: getattr(self, k) for k in ("hidden", "layers", "lr", "epochs", "batch", "seed")}

    def set_params(self, **params) -> "WeightedMLPClassifier":
        valid = self.get_params()
        for k, v in params.items():
            if k not in valid:
                raise ValueError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def fit(self, X, y, sample_weight=None) -> "WeightedMLPClassifier":
        X, y = _check_xy(X, y)
        w_fn = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, float)
        _check_hyper(self.lr, self.layers, self.hidden, self.epochs, self.batch)
        sizes = (X.shape[1],) + (self.hidden,) * (self.layers - 1) + (2,)
        self.net_ = MlpStack(sizes, 1, "softmax", self.seed)
        self.loss_curve_ = _train_stack(self.net_, X[None], y[None], w_fn[None], np.ones((1, len(y))),
                                        self.lr, self.epochs, self.batch, self.seed)[:, 0].tolist()
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        if not hasattr(self, "net_"):
            raise DataError("classifier is not fitted")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.net_.sizes[0]:
            raise ValueError(f"expected {self.net_.sizes[0]} features per row")
        return self.net_.forward(X)[0]

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise ValueError("X must be 2-D and y 1-D with matching length")
    if len(y) == 0:
        raise DataError("empty training set")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("labels must be 0 or 1")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    return X, y


def _check_hyper(lr, layers, hidden, epochs, batch):
    if lr <= 0 or layers < 2 or hidden < 1 or epochs < 0 or batch < 1:
        raise ConfigError("hyper-parameters must be positive (layers >= 2, epochs >= 0)")


def _train_stack(net: MlpStack, X, psi, w_fn, w_fp, lr, epochs, batch, seed) -> np.ndarray:
    """Minibatch Adam on every member; returns per-epoch mean loss, shape (epochs, V)."""
    n = X.shape[1]
    rng = np.random.default_rng(seed)
    opt = Adam(net.params, lr)
    curve = np.zeros((epochs, net.n_models))
    for ep in range(epochs):
        order = rng.permutation(n)
        total = np.zeros(net.n_models)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = classifier_loss_and_grads(net, X[:, idx], psi[:, idx], w_fn[:, idx], w_fp[:, idx])
            opt.step(grads)
            total += loss * len(idx)
        curve[ep] = total / n
    return curve


def role_matrix(var_names) -> np.ndarray:
    """One-hot variable role for the shared model: kind (x or z) then period."""
    parsed = [parse_name(n) for n in var_names]
    T = 1 + max((t for _, _, t in parsed), default=0)
    R = np.zeros((len(parsed), 2 + T))
    for v, (kind, _, t) in enumerate(parsed):
        R[v, 0 if kind == "x" else 1] = 1.0
        R[v, 2 + t] = 1.0
    return R


def _with_roles(X: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Append each variable's role to its feature rows: (V, K, L) -> (V, K, L + R)."""
    return np.concatenate([X, np.broadcast_to(R[:, None, :], X.shape[:2] + R.shape[1:])], axis=2)


# -- fix sets ---------------------------------------------------------------

@dataclass(frozen=True)
class FixSet:
    """Integer columns of a model to be fixed at zero."""

    indices: tuple[int, ...]
    n_int: int

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def fraction(self) -> float:
        return len(self.indices) / self.n_int if self.n_int else 0.0


def build_reduced_mip(mip: MipInstance, fix) -> MipInstance:
    """Copy of ``mip`` with the fixed integer columns bounded to [0, 0]."""
    idx = fix.indices if isinstance(fix, FixSet) else tuple(int(k) for k in fix)
    if not idx:
        return mip
    is_int = np.zeros(mip.n_vars, bool)
    is_int[mip.integer_indices] = True
    bad = [k for k in idx if not (0 <= k < mip.n_vars) or not is_int[k]]
    if bad:
        raise DataError(f"only integer columns can be fixed; got {[mip.vars[k].name if 0 <= k < mip.n_vars else k for k in bad][:5]}")
    return mip.with_bounds({k: (0.0, 0.0) for k in idx})


class PropFixer:
    """Per-variable fix-at-zero models with reduced-cost adjustment.

    Parameters
    ----------
    tau : fixing threshold on ``prob_zero + r``.
    use_rc : add the normalised reduced cost ``r`` to the score.
    rc_scale : ``"max_abs"`` (largest |rc| over the instance's integers) or a
        positive number used as a fixed scale.
    rc_sign : +1 applies the reduced cost as reported for the minimisation
        model; -1 flips it.
    weights_by_value : use solution values instead of 0/1 labels in the
        false-negative weight ratio.
    shared_model : train one classifier for all variables on features plus
        a role one-hot instead of one classifier per variable.
    """

    def __init__(self, tau: float = 0.9, use_rc: bool = True, rc_scale="max_abs", rc_sign: int = 1,
                 lr_grid=LR_GRID, layer_grid=LAYER_GRID, hidden_grid=HIDDEN_GRID, epochs: int = 100,
                 batch: int = 32, val_fraction: float = 0.2, weights_by_value: bool = False,
                 demand_window: int = 1, seed: int = 0, shared_model: bool = False):
        self.tau = tau
        self.use_rc = use_rc
        self.rc_scale = rc_scale
        self.rc_sign = rc_sign
        self.lr_grid = tuple(lr_grid)
        self.layer_grid = tuple(layer_grid)
        self.hidden_grid = tuple(hidden_grid)
        self.epochs = epochs
        self.batch = batch
        self.val_fraction = val_fraction
        self.weights_by_value = weights_by_value
        self.demand_window = demand_window
        self.seed = seed
        self.shared_model = shared_model

    _PARAMS = ("tau", "use_rc", "rc_scale", "rc_sign", "lr_grid", "layer_grid", "hidden_grid", "epochs",
               "batch", "val_fraction", "weights_by_value", "demand_window", "seed", "shared_model")

    def get_params(self, deep: bool = True) -> dict:
        return {k: getattr(self, k) for k in self._PARAMS}

    def set_params(self, **params) -> "PropFixer":
        for k, v in params.items():
            if k not in self._PARAMS:
                raise ValueError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def _validate(self) -> None:
        if not 0 < self.tau < 1:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if self.rc_sign not in (1, -1):
            raise ConfigError("rc_sign must be +1 or -1")
        if self.rc_scale != "max_abs" and not (isinstance(self.rc_scale, (int, float)) and self.rc_scale > 0):
            raise ConfigError("rc_scale must be 'max_abs' or a positive number")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        for lr, layers, hidden in self.grid():
            _check_hyper(lr, layers, hidden, self.epochs, self.batch)

    def grid(self) -> list[tuple[float, int, int]]:
        return list(itertools.product(self.lr_grid, self.layer_grid, self.hidden_grid))

    # -- training ----------------------------------------------------------

    def fit(self, instances, labels: list[LabeledSet] | None = None, lim: SolveLimits | None = None) -> "PropFixer":
        self._validate()
        instances = list(instances)
        if not instances:
            raise DataError("cannot train on an empty instance list")
        if labels is None:
            labels = label_dataset(instances, lim, self.demand_window)
        by_name = {inst.name: inst for inst in instances}
        labels = [lab for lab in labels if lab.name in by_name]
        if not labels:
            raise DataError("no labelled instances to train on")
        used = [by_name[lab.name] for lab in labels]
        fx = FeatureExtractor(self.demand_window).fit(used)
        X = fx.transform(used).transpose(1, 0, 2)  # (V, K, L)
        psi = np.stack([lab.psi for lab in labels]).T  # (V, K)
        if psi.shape[0] != len(fx.specs_):
            raise DataError("labels do not match the model's integer variables")
        w_fn = np.stack([compute_weights(lab.psi, lab.values if self.weights_by_value else None)[1]
                         for lab in labels]).T
        w_fp = np.ones_like(w_fn)

        K = len(labels)
        rng = np.random.default_rng(self.seed)
        perm = rng.permutation(K)
        n_val = int(round(self.val_fraction * K)) if K >= 2 else 0
        n_val = min(max(n_val, 1 if K >= 2 and self.val_fraction > 0 else 0), K - 1)
        val, tr = perm[:n_val], perm[n_val:]
        if n_val == 0:
            val = tr

        mean_psi = psi[:, tr].mean(axis=1)
        constant = (mean_psi == 0) | (mean_psi == 1)
        trainable = np.flatnonzero(~constant)
        self.features_ = fx
        self.constants_ = {int(v): float(1.0 - mean_psi[v]) for v in np.flatnonzero(constant)}
        self.shared_ = None
        if self.shared_model:
            return self._fit_shared(X, psi, w_fn, w_fp, trainable, tr, val)
        grid = self.grid()
        best_f1 = np.full(len(trainable), -1.0)
        choice = np.zeros(len(trainable), dtype=int)
        stacks: list[MlpStack] = []
        self.loss_curves_ = {}
        for c, (lr, layers, hidden) in enumerate(grid):
            sizes = (fx.fixed_length_,) + (hidden,) * (layers - 1) + (2,)
            net = MlpStack(sizes, len(trainable), "softmax", seed=self.seed * 1000 + c)
            if len(trainable):
                curve = _train_stack(net, X[trainable][:, tr], psi[trainable][:, tr], w_fn[trainable][:, tr],
                                     w_fp[trainable][:, tr], lr, self.epochs, self.batch, self.seed + c)
                self.loss_curves_[c] = curve.mean(axis=1)
                prob_zero = net.forward(X[trainable][:, val])[..., 0]  # (V, n_val)
                f1 = f1_zero_class(psi[trainable][:, val].T, prob_zero.T)
                better = f1 > best_f1
                best_f1[better] = f1[better]
                choice[better] = c
            stacks.append(net)
        self.groups_ = []
        for c in range(len(grid)):
            members = np.flatnonzero(choice == c)
            if len(members):
                self.groups_.append((c, trainable[members], stacks[c].select(members)))
        f1_all = np.ones(len(fx.specs_))
        f1_all[trainable] = best_f1
        arch = np.full(len(fx.specs_), -1)
        arch[trainable] = choice
        self.val_f1_ = f1_all
        self.choice_ = arch
        return self

    def _fit_shared(self, X, psi, w_fn, w_fp, trainable, tr, val) -> "PropFixer":
        Xa = _with_roles(X, role_matrix(self.features_.var_names_))[trainable]
        D = Xa.shape[2]
        flat = lambda a, cols: a[trainable][:, cols].reshape(1, -1)
        best = (-1.0, 0, None, np.zeros(len(trainable)))
        self.loss_curves_ = {}
        for c, (lr, layers, hidden) in enumerate(self.grid()):
            net = MlpStack((D,) + (hidden,) * (layers - 1) + (2,), 1, "softmax", seed=self.seed * 1000 + c)
            if len(trainable):
                curve = _train_stack(net, Xa[:, tr].reshape(1, -1, D), flat(psi, tr), flat(w_fn, tr),
                                     flat(w_fp, tr), lr, self.epochs, self.batch, self.seed + c)
                self.loss_curves_[c] = curve[:, 0]
                prob_zero = net.forward(Xa[:, val].reshape(1, -1, D))[0, :, 0].reshape(len(trainable), -1)
                f1 = f1_zero_class(psi[trainable][:, val].T, prob_zero.T)
                if f1.mean() > best[0]:
                    best = (float(f1.mean()), c, net, f1)
            elif best[2] is None:
                best = (-1.0, c, net, best[3])
        _, c, net, f1 = best
        self.groups_ = []
        self.shared_ = (c, trainable, net)
        self.val_f1_ = np.ones(len(self.features_.specs_))
        self.val_f1_[trainable] = f1
        self.choice_ = np.full(len(self.features_.specs_), -1)
        self.choice_[trainable] = c
        return self

    def _check_fitted(self):
        if not hasattr(self, "groups_"):
            raise DataError("PropFixer is not fitted")

    def training_report(self) -> list[tuple[str, float, str]]:
        """(variable, validation F1, chosen architecture) rows."""
        self._check_fitted()
        grid = self.grid()
        rows = []
        for v, name in enumerate(self.features_.var_names_):
            c = int(self.choice_[v])
            arch = "constant" if c < 0 else "lr={}/layers={}/hidden={}".format(*grid[c])
            rows.append((name, float(self.val_f1_[v]), arch))
        return rows

    # -- prediction ----------------------------------------------------------

    def predict_proba_zero(self, instances) -> np.ndarray:
        """Predicted probability of being zero, shape (n_instances, n_integer_vars)."""
        self._check_fitted()
        instances = list(instances)
        X = self.features_.transform(instances).transpose(1, 0, 2)
        out = np.zeros((len(self.features_.specs_), len(instances)))
        for _, members, net in self.groups_:
            out[members] = net.forward(X[members])[..., 0]
        if getattr(self, "shared_", None) is not None and len(self.shared_[1]):
            _, members, net = self.shared_
            Xa = _with_roles(X, role_matrix(self.features_.var_names_))[members]
            out[members] = net.forward(Xa.reshape(1, -1, Xa.shape[2]))[0, :, 0].reshape(len(members), -1)
        for v, p in self.constants_.items():
            out[v] = p
        return out.T

    def scores(self, inst: ScpInstance, mip: MipInstance, lp: LpSolution | None, use_rc: bool | None = None) -> np.ndarray:
        """Adjusted zero scores over ``mip.integer_indices``; NaN where no model exists."""
        self._check_fitted()
        ints = mip.integer_indices
        names = [mip.vars[k].name for k in ints]
        prob = self.predict_proba_zero([inst])[0]
        pos = {n: v for v, n in enumerate(self.features_.var_names_)}
        score = np.array([prob[pos[n]] if n in pos else np.nan for n in names])
        use_rc = self.use_rc if use_rc is None else use_rc
        if use_rc:
            if lp is None or lp.status != "optimal":
                raise DataError("the reduced-cost adjustment needs an optimal LP solution")
            rc = self.rc_sign * lp.reduced_costs[ints]
            s = float(np.max(np.abs(rc))) if self.rc_scale == "max_abs" else float(self.rc_scale)
            if s > 0:
                score = score + normalized_rc(rc, s)
        return score

    def predict_fix_set(self, inst: ScpInstance, lp: LpSolution | None = None, mip: MipInstance | None = None,
                        use_rc: bool | None = None, tau: float | None = None) -> FixSet:
        tau = self.tau if tau is None else tau
        mip = mip or build_mip(inst, self.demand_window)
        use_rc = self.use_rc if use_rc is None else use_rc
        if use_rc and lp is None:
            lp = solve_lp(mip)
        score = self.scores(inst, mip, lp, use_rc)
        ints = mip.integer_indices
        keep = np.nan_to_num(score, nan=-np.inf) >= tau
        return FixSet(tuple(int(k) for k in ints[keep]), len(ints))

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        self._check_fitted()
        header = {"params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
                  "features": self.features_.state(),
                  "feature_hash": self.features_.hash_,
                  "constants": [[v, p] for v, p in sorted(self.constants_.items())],
                  "groups": [{"config": c, "members": m.tolist(), "sizes": list(net.sizes)}
                             for c, m, net in self.groups_],
                  "shared": None if self.shared_ is None else
                  {"config": self.shared_[0], "members": self.shared_[1].tolist(), "sizes": list(self.shared_[2].sizes)},
                  "val_f1": self.val_f1_.tolist(), "choice": self.choice_.tolist()}
        nets = [net for _, _, net in self.groups_] + ([self.shared_[2]] if self.shared_ is not None else [])
        flat = np.concatenate([net.get_flat() for net in nets]) if nets else np.zeros(0)
        save_checkpoint(path, "fixmodels", header, flat)

    @classmethod
    def load(cls, path, expected_hash: str | None = None) -> "PropFixer":
        from ..exceptions import CheckpointError

        head, flat = load_checkpoint(path, "fixmodels")
        p = dict(head["params"])
        for k in ("lr_grid", "layer_grid", "hidden_grid"):
            p[k] = tuple(p[k])
        obj = cls(**p)
        try:
            obj.features_ = FeatureExtractor.from_state(head["features"])
        except DataError as exc:
            raise CheckpointError(f"{path}: {exc}") from exc
        if obj.features_.hash_ != head["feature_hash"]:
            raise CheckpointError(f"{path}: feature spec hash mismatch")
        if expected_hash is not None and expected_hash != obj.features_.hash_:
            raise CheckpointError(f"{path}: trained for a different feature layout")
        obj.constants_ = {int(v): float(q) for v, q in head["constants"]}
        obj.groups_ = []
        pos = 0
        for g in head["groups"]:
            members = np.array(g["members"], dtype=int)
            net = MlpStack(tuple(g["sizes"]), len(members), "softmax")
            n = net.n_params()
            if pos + n > flat.size:
                raise CheckpointError(f"{path}: parameter array too short")
            net.set_flat(flat[pos:pos + n])
            pos += n
            obj.groups_.append((g["config"], members, net))
        obj.shared_ = None
        if head.get("shared") is not None:
            g = head["shared"]
            net = MlpStack(tuple(g["sizes"]), 1, "softmax")
            n = net.n_params()
            if pos + n > flat.size:
                raise CheckpointError(f"{path}: parameter array too short")
            net.set_flat(flat[pos:pos + n])
            pos += n
            obj.shared_ = (g["config"], np.array(g["members"], dtype=int), net)
        if pos != flat.size:
            raise CheckpointError(f"{path}: parameter array has {flat.size - pos} extra values")
        obj.val_f1_ = np.array(head["val_f1"])
        obj.choice_ = np.array(head["choice"])
        return obj


def solve_prop(fixer: PropFixer, inst: ScpInstance, lim: SolveLimits, clock: SolveClock | None = None,
               use_rc: bool | None = None, mip: MipInstance | None = None):
    """Predict a fix set and solve the reduced model under ``lim``.

    The root LP that feeds the reduced costs is charged to ``clock``. Returns
    ``(result, fix_set, lp)``; the reduced model keeps the original's columns,
    so its solutions are solutions of the original model.
    """
    mip = mip or build_mip(inst, fixer.demand_window)
    clock = clock or SolveClock(lim.deterministic_clock)
    use_rc = fixer.use_rc if use_rc is None else use_rc
    start = clock.now()
    lp = LpModel(mip).solve(clock) if use_rc else None
    fix = fixer.predict_fix_set(inst, lp, mip, use_rc=use_rc)
    remaining = lim.time_limit - (clock.now() - start)
    sub = SolveLimits(max(remaining, 0.0), lim.rel_gap, lim.node_limit, lim.deterministic_clock)
    res = solve_mip(build_reduced_mip(mip, fix), sub, clock=clock)
    return res, fix, lp
