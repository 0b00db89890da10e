"""Feed-forward value approximators with manual backprop, plus the
first/second-moment adaptive gradient optimizer and checkpoint io.

Everything is float64 numpy; forward passes and updates are bit-deterministic
for a fixed seed, which the training-reproducibility contract relies on.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint content does not match the declared architecture."""


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int):
    # He-style scaling for rectified-linear hiddens
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
    b = np.zeros(fan_out)
    return w, b


class QNetwork:
    """Plain value network: ReLU hidden layers, linear output head."""

    kind = "plain"

    def __init__(self, input_dim: int, hidden_sizes: tuple[int, ...],
                 action_count: int, rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_sizes = tuple(hidden_sizes)
        self.action_count = action_count
        sizes = [input_dim, *hidden_sizes, action_count]
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w, b = _init_layer(rng, fan_in, fan_out)
            self.params += [w, b]

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        if x.ndim == 1:
            return self.forward(x[None, :], cache)[0]
        if x.shape[1] != self.input_dim:
            raise ValueError(f"observation dim {x.shape[1]} != {self.input_dim}")
        h = x
        n_layers = len(self.params) // 2
        for layer in range(n_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ w + b
            if layer < n_layers - 1:
                if cache is not None:
                    cache.append((h, z))
                h = np.maximum(z, 0.0)
            else:
                if cache is not None:
                    cache.append((h, z))
                h = z
        return h

    def backward(self, cache: list, dq: np.ndarray) -> list[np.ndarray]:
        """Gradients of a scalar loss given dloss/dQ, in `params` order."""
        grads = [None] * len(self.params)
        n_layers = len(self.params) // 2
        grad = dq
        for layer in reversed(range(n_layers)):
            h_in, z = cache[layer]
            if layer < n_layers - 1:
                grad = grad * (z > 0.0)
            grads[2 * layer] = h_in.T @ grad
            grads[2 * layer + 1] = grad.sum(axis=0)
            grad = grad @ self.params[2 * layer].T
        return grads

    def clone(self) -> "QNetwork":
        new = object.__new__(QNetwork)
        new.input_dim = self.input_dim
        new.hidden_sizes = self.hidden_sizes
        new.action_count = self.action_count
        new.params = [p.copy() for p in self.params]
        return new

    def load_params_from(self, other: "QNetwork") -> None:
        self.params = [p.copy() for p in other.params]


class DuelingQNetwork:
    """Shared ReLU trunk splitting into a scalar value head and a per-action
    advantage head; Q(s,a) = V(s) + A(s,a) - mean_a A(s,a), so the mean Q
    over actions equals V exactly. Head parameter count stays close to the
    plain network so the two train at comparable speed."""

    kind = "dueling"

    def __init__(self, input_dim: int, hidden_sizes: tuple[int, ...],
                 action_count: int, rng: np.random.Generator):
        if not hidden_sizes:
            raise ValueError("dueling head needs >= 1 hidden size")
        self.input_dim = input_dim
        self.hidden_sizes = tuple(hidden_sizes)
        self.action_count = action_count
        self.params: list[np.ndarray] = []
        sizes = [input_dim, *hidden_sizes]
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w, b = _init_layer(rng, fan_in, fan_out)
            self.params += [w, b]
        wv, bv = _init_layer(rng, sizes[-1], 1)
        wa, ba = _init_layer(rng, sizes[-1], action_count)
        self.params += [wv, bv, wa, ba]

    @property
    def _n_trunk(self) -> int:
        return len(self.hidden_sizes)

    def forward(self, x: np.ndarray, cache: list | None = None) -> np.ndarray:
        if x.ndim == 1:
            return self.forward(x[None, :], cache)[0]
        if x.shape[1] != self.input_dim:
            raise ValueError(f"observation dim {x.shape[1]} != {self.input_dim}")
        h = x
        pre = []
        for layer in range(self._n_trunk):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ w + b
            pre.append((h, z))
            h = np.maximum(z, 0.0)
        wv, bv, wa, ba = self.params[-4:]
        v = h @ wv + bv                          # (B, 1)
        a = h @ wa + ba                          # (B, A)
        q = v + a - a.mean(axis=1, keepdims=True)
        if cache is not None:
            cache.append((pre, h))
        return q

    def backward(self, cache: list, dq: np.ndarray) -> list[np.ndarray]:
        pre, h = cache[0]
        wv, bv, wa, ba = self.params[-4:]
        dv = dq.sum(axis=1, keepdims=True)       # (B, 1)
        da = dq - dq.mean(axis=1, keepdims=True)
        d_wv = h.T @ dv
        d_bv = dv.sum(axis=0)
        d_wa = h.T @ da
        d_ba = da.sum(axis=0)
        grad = dv @ wv.T + da @ wa.T
        grads = [None] * (2 * self._n_trunk)
        for layer in reversed(range(self._n_trunk)):
            h_in, z = pre[layer]
            grad = grad * (z > 0.0)
            grads[2 * layer] = h_in.T @ grad
            grads[2 * layer + 1] = grad.sum(axis=0)
            grad = grad @ self.params[2 * layer].T
        return grads + [d_wv, d_bv, d_wa, d_ba]

    def clone(self) -> "DuelingQNetwork":
        new = object.__new__(DuelingQNetwork)
        new.input_dim = self.input_dim
        new.hidden_sizes = self.hidden_sizes
        new.action_count = self.action_count
        new.params = [p.copy() for p in self.params]
        return new

    def load_params_from(self, other: "DuelingQNetwork") -> None:
        self.params = [p.copy() for p in other.params]


def build_network(kind: str, input_dim: int, hidden_sizes, action_count: int,
                  rng: np.random.Generator):
    cls = {"plain": QNetwork, "dueling": DuelingQNetwork}.get(kind)
    if cls is None:
        raise ValueError(f"unknown network kind: {kind}")
    return cls(input_dim, tuple(hidden_sizes), action_count, rng)


def get_flat(model) -> np.ndarray:
    return np.concatenate([p.ravel() for p in model.params])


def set_flat(model, flat: np.ndarray) -> None:
    offset = 0
    for p in model.params:
        p[...] = flat[offset:offset + p.size].reshape(p.shape)
        offset += p.size
    if offset != flat.size:
        raise ValueError("flat vector size does not match parameter count")


def clip_gradients(grads: list[np.ndarray], bound: float) -> list[np.ndarray]:
    """Scale the whole gradient so its global L2 norm is at most `bound`."""
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm <= bound or norm == 0.0:
        return grads
    scale = bound / norm
    return [g * scale for g in grads]


class AdamOptimizer:
    """First/second-moment adaptive gradient steps with bias correction."""

    def __init__(self, params: list[np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# Checkpoints: versioned JSON with layer sizes and flat weight arrays

def checkpoint_dict(model, config_echo: dict | None = None) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": model.kind,
        "input_dim": model.input_dim,
        "hidden_sizes": list(model.hidden_sizes),
        "action_count": model.action_count,
        "arrays": [{"shape": list(p.shape), "data": p.ravel().tolist()}
                   for p in model.params],
        "config": config_echo or {},
    }


def save_checkpoint(model, path: str | Path,
                    config_echo: dict | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model, config_echo)))


def model_from_checkpoint(data: dict):
    if data.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format: {data.get('format_version')}")
    model = build_network(data["kind"], data["input_dim"],
                          data["hidden_sizes"], data["action_count"],
                          np.random.default_rng(0))
    arrays = data["arrays"]
    if len(arrays) != len(model.params):
        raise CheckpointError(
            f"expected {len(model.params)} arrays, got {len(arrays)}")
    for p, entry in zip(model.params, arrays):
        if tuple(entry["shape"]) != p.shape:
            raise CheckpointError(
                f"array shape {entry['shape']} does not match {list(p.shape)}")
        p[...] = np.array(entry["data"], dtype=float).reshape(p.shape)
    return model


def load_checkpoint(path: str | Path):
    return model_from_checkpoint(json.loads(Path(path).read_text()))
