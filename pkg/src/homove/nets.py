"""Small dense networks in numpy: ReLU MLP with analytic backprop, Adam, softmax helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Mlp:
    """ReLU hidden layers, linear output.  ``W[k]`` has shape (fan_in, fan_out)."""
    W: list
    b: list

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, out_scale: float = 1.0) -> Mlp:
        W, b = [], []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            std = np.sqrt(2.0 / n_in) * (out_scale if last else 1.0)
            W.append(rng.normal(0.0, std, size=(n_in, n_out)))
            b.append(np.zeros(n_out))
        return cls(W, b)

    @property
    def sizes(self) -> list[int]:
        return [self.W[0].shape[0]] + [w.shape[1] for w in self.W]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.W, self.b) for p in pair]

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        last = len(self.W) - 1
        for k, (w, b) in enumerate(zip(self.W, self.b)):
            h = h @ w + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h

    def forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        acts = [np.asarray(x, dtype=float)]
        h = acts[0]
        last = len(self.W) - 1
        for k, (w, b) in enumerate(zip(self.W, self.b)):
            h = h @ w + b
            if k < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts: list, dout: np.ndarray) -> list[np.ndarray]:
        """Gradients in :attr:`params` order for upstream gradient ``dout`` of the output."""
        grads_W, grads_b = [None] * len(self.W), [None] * len(self.W)
        g = dout
        for k in range(len(self.W) - 1, -1, -1):
            grads_W[k] = acts[k].T @ g
            grads_b[k] = g.sum(axis=0)
            if k > 0:
                g = (g @ self.W[k].T) * (acts[k] > 0.0)
        return [p for pair in zip(grads_W, grads_b) for p in pair]

    def copy(self) -> Mlp:
        return Mlp([w.copy() for w in self.W], [b.copy() for b in self.b])

    def to_dict(self) -> dict:
        return {"sizes": self.sizes, "W": [w.tolist() for w in self.W], "b": [b.tolist() for b in self.b]}

    @classmethod
    def from_dict(cls, doc: dict) -> Mlp:
        return cls([np.asarray(w, dtype=float) for w in doc["W"]], [np.asarray(b, dtype=float) for b in doc["b"]])


@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place descent step on ``params``."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))
