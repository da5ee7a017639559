"""Stacks of independent ReLU perceptrons trained with Adam.

A stack holds ``V`` networks of identical shape in batched tensors so that
one einsum trains all of them at once. Each network only ever sees its own
slice of inputs and parameters, so training a stack is the same as training
its members one by one.
"""

from __future__ import annotations

import numpy as np

CLAMP = 1e-12


def softmax2(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class MlpStack:
    """``V`` multilayer perceptrons with rectifier hidden units.

    ``sizes`` lists layer widths from input to output. ``head`` is ``"softmax"``
    (probabilities over the output units) or ``"linear"``.
    """

    def __init__(self, sizes: tuple[int, ...], n_models: int = 1, head: str = "softmax", seed: int = 0):
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("sizes needs an input and an output width, all positive")
        if head not in ("softmax", "linear"):
            raise ValueError(f"unknown head {head!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.n_models = int(n_models)
        self.head = head
        rng = np.random.default_rng(seed)
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        for din, dout in zip(self.sizes[:-1], self.sizes[1:]):
            # He initialisation for rectifier layers
            self.W.append(rng.normal(0.0, np.sqrt(2.0 / din), size=(self.n_models, din, dout)))
            self.b.append(np.zeros((self.n_models, dout)))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params():
            raise ValueError(f"expected {self.n_params()} parameters, got {flat.size}")
        pos = 0
        for p in self.params:
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def copy(self) -> "MlpStack":
        out = MlpStack.__new__(MlpStack)
        out.sizes, out.n_models, out.head = self.sizes, self.n_models, self.head
        out.W = [w.copy() for w in self.W]
        out.b = [b.copy() for b in self.b]
        return out

    def select(self, idx) -> "MlpStack":
        """Sub-stack holding the members at ``idx``."""
        out = self.copy()
        out.W = [w[idx].copy() for w in self.W]
        out.b = [b[idx].copy() for b in self.b]
        out.n_models = out.W[0].shape[0]
        return out

    def _as_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = np.broadcast_to(X, (self.n_models,) + X.shape)
        if X.ndim != 3 or X.shape[0] != self.n_models or X.shape[2] != self.sizes[0]:
            raise ValueError(f"input shape {X.shape} does not fit ({self.n_models}, B, {self.sizes[0]})")
        return X

    def forward(self, X: np.ndarray, keep: bool = False):
        """Outputs of shape (V, B, out). With ``keep`` also returns the cache."""
        h = self._as_batch(X)
        cache = [h]
        last = len(self.W) - 1
        for k, (W, b) in enumerate(zip(self.W, self.b)):
            a = np.einsum("vbi,vio->vbo", h, W) + b[:, None, :]
            h = a if k == last else np.maximum(a, 0.0)
            cache.append(h)
        out = softmax2(h) if self.head == "softmax" else h
        return (out, cache) if keep else out

    def backward(self, cache: list[np.ndarray], grad_logits: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given d(loss)/d(final pre-head activations)."""
        grads: list[np.ndarray] = []
        g = grad_logits
        for k in range(len(self.W) - 1, -1, -1):
            h_in = cache[k]
            gW = np.einsum("vbi,vbo->vio", h_in, g)
            gb = g.sum(axis=1)
            grads = [gW, gb] + grads
            if k > 0:
                g = np.einsum("vbo,vio->vbi", g, self.W[k]) * (cache[k] > 0)
        return grads


class Adam:
    """First/second moment adaptive optimiser over a list of arrays."""

    def __init__(self, params: list[np.ndarray], lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def weighted_ce_terms(p_nonzero: np.ndarray, psi: np.ndarray, w_fn: np.ndarray, w_fp: np.ndarray) -> np.ndarray:
    """Elementwise weighted cross-entropy, clamped away from log(0)."""
    p = np.clip(p_nonzero, CLAMP, 1 - CLAMP)
    return -(w_fn * psi * np.log(p) + w_fp * (1 - psi) * np.log(1 - p))


def classifier_loss_and_grads(net: MlpStack, X, psi, w_fn, w_fp):
    """Mean weighted cross-entropy per member and its parameter gradients.

    ``psi``, ``w_fn`` and ``w_fp`` have shape (V, B). Output unit 1 is the
    probability that the variable is nonzero. The returned loss is the sum of
    the members' mean losses, so each member's gradient is its own.
    """
    probs, cache = net.forward(X, keep=True)
    p1 = probs[..., 1]
    B = p1.shape[1]
    loss = weighted_ce_terms(p1, psi, w_fn, w_fp).mean(axis=1)
    # d/dlogit1 of the softmax pair is p1(1-p1); logit0 gets the negative
    inside = (p1 > CLAMP) & (p1 < 1 - CLAMP)
    dp = np.where(inside, -(w_fn * psi / np.maximum(p1, CLAMP) - w_fp * (1 - psi) / np.maximum(1 - p1, CLAMP)), 0.0)
    dl1 = dp * p1 * (1 - p1) / B
    grad_logits = np.stack([-dl1, dl1], axis=-1)
    return loss, net.backward(cache, grad_logits)
