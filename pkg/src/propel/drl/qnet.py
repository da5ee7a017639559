"""Action-value network, replay memory and the Bellman regression step."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigError
from ..learn.checkpoint import load_checkpoint, save_checkpoint
from ..learn.mlp import Adam, MlpStack

ENCODING_VERSION = 1


class QNetwork:
    """Q-values for ``insert(k)`` (outputs ``0..m-1``) and ``exclude(k)`` (``m..2m-1``)."""

    def __init__(self, m: int, hidden: tuple[int, ...] = (128, 128), lr: float = 0.001, seed: int = 0):
        if m < 1:
            raise ConfigError("m must be at least 1")
        self.m = m
        self.hidden = tuple(hidden)
        self.lr = lr
        self.seed = seed
        self.net = MlpStack((self.n_inputs,) + self.hidden + (2 * m,), 1, "linear", seed)
        self.opt = Adam(self.net.params, lr)

    @property
    def n_inputs(self) -> int:
        return 4 * self.m + 1

    def q_values(self, states) -> np.ndarray:
        S = np.atleast_2d(np.asarray(states, dtype=float))
        return self.net.forward(S)[0]

    def snapshot(self) -> MlpStack:
        return self.net.copy()

    def save(self, path, extra: dict | None = None) -> None:
        head = {"m": self.m, "hidden": list(self.hidden), "lr": self.lr, "seed": self.seed,
                "encoding_version": ENCODING_VERSION, "extra": extra or {}}
        save_checkpoint(path, "qnet", head, self.net.get_flat())

    @classmethod
    def load(cls, path) -> "QNetwork":
        from ..exceptions import CheckpointError

        head, flat = load_checkpoint(path, "qnet")
        if head.get("encoding_version") != ENCODING_VERSION:
            raise CheckpointError(f"{path}: state encoding version {head.get('encoding_version')} unsupported")
        q = cls(head["m"], tuple(head["hidden"]), head["lr"], head["seed"])
        try:
            q.net.set_flat(flat)
        except ValueError as exc:
            raise CheckpointError(f"{path}: {exc}") from exc
        q.extra = head.get("extra", {})
        return q


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    actions: tuple[int, ...]  # action codes; a macro-action carries several
    reward: float
    next_state: np.ndarray
    final: bool
    next_mask: np.ndarray  # actions available in the next state


class ReplayBuffer:
    """First-in first-out experience memory."""

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ConfigError("replay capacity must be positive")
        self.capacity = capacity
        self._items: deque[Experience] = deque(maxlen=capacity)

    def add(self, e: Experience) -> None:
        self._items.append(e)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, k: int) -> Experience:
        return self._items[k]

    def items(self) -> list[Experience]:
        return list(self._items)


def bellman_targets(batch: list[Experience], target_net: MlpStack, gamma: float) -> np.ndarray:
    """``r`` for final transitions, else ``r + gamma * max`` over available next actions."""
    y = np.array([e.reward for e in batch], dtype=float)
    live = [k for k, e in enumerate(batch) if not e.final and e.next_mask.any()]
    if live and gamma != 0:
        S2 = np.stack([batch[k].next_state for k in live])
        q2 = target_net.forward(S2)[0]
        mask = np.stack([batch[k].next_mask for k in live])
        best = np.where(mask, q2, -np.inf).max(axis=1)
        y[live] += gamma * best
    return y


def bellman_loss_and_grads(net: MlpStack, states: np.ndarray, action_mask: np.ndarray, targets: np.ndarray):
    """Mean squared residual over the (transition, action) pairs selected by the mask."""
    q, cache = net.forward(states, keep=True)
    q = q[0]
    mask = np.asarray(action_mask, dtype=float)
    n = mask.sum()
    diff = (q - targets[:, None]) * mask
    loss = float((diff ** 2).sum() / n)
    grad = (2.0 / n) * diff
    return loss, net.backward(cache, grad[None])


def learn_step(buffer: ReplayBuffer, qnet: QNetwork, gamma: float = 0.99, batch: int = 32,
               rng: np.random.Generator | None = None) -> float:
    """One pass over the buffer in minibatches; targets come from a snapshot taken first."""
    items = buffer.items()
    if not items:
        raise ConfigError("learn_step needs a nonempty buffer")
    rng = rng or np.random.default_rng(0)
    frozen = qnet.snapshot()
    targets = bellman_targets(items, frozen, gamma)
    order = rng.permutation(len(items))
    two_m = 2 * qnet.m
    losses = []
    for start in range(0, len(items), batch):
        idx = order[start:start + batch]
        S = np.stack([items[k].state for k in idx])
        mask = np.zeros((len(idx), two_m))
        for row, k in enumerate(idx):
            mask[row, list(items[k].actions)] = 1.0
        loss, grads = bellman_loss_and_grads(qnet.net, S, mask, targets[idx])
        qnet.opt.step(grads)
        losses.append(loss * len(idx))
    return float(sum(losses) / len(items))
