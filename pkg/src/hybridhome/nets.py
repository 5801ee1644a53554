"""Small multi-head MLP for action-value estimation, with explicit gradients.

A shared rectified-linear trunk feeds one linear head per actuator, so a
single forward pass yields an action-quality vector for every actuator a
service controls. Gradients are computed in closed form (needed both for
training and for finite-difference verification), and parameters can be
flattened to a single vector for checking and persistence.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def _he_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


class QNetwork:
    """Trunk of fully connected ReLU layers plus one linear head per actuator."""

    def __init__(self, input_dim: int, head_sizes: list[int], hidden: tuple[int, ...] = (64, 64),
                 rng: np.random.Generator | None = None, zero_init: bool = False):
        if input_dim < 1 or not head_sizes or any(h < 1 for h in head_sizes):
            raise ContractError("QNetwork needs input_dim >= 1 and non-empty heads")
        self.input_dim = input_dim
        self.head_sizes = list(head_sizes)
        self.hidden = tuple(hidden)

        dims = [input_dim, *hidden]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            if zero_init:
                self.weights.append(np.zeros((fan_in, fan_out)))
            else:
                self.weights.append(_he_init(rng, fan_in, fan_out))
            self.biases.append(np.zeros(fan_out))
        trunk_out = dims[-1]
        self.head_weights: list[np.ndarray] = []
        self.head_biases: list[np.ndarray] = []
        for size in head_sizes:
            if zero_init:
                self.head_weights.append(np.zeros((trunk_out, size)))
            else:
                self.head_weights.append(_he_init(rng, trunk_out, size))
            self.head_biases.append(np.zeros(size))

    # -- forward ------------------------------------------------------------

    def _trunk(self, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        pre, post = [], []
        a = x
        for w, b in zip(self.weights, self.biases):
            z = a @ w + b
            a = np.maximum(z, 0.0)
            pre.append(z)
            post.append(a)
        return pre, post

    def forward(self, x: np.ndarray) -> list[np.ndarray]:
        """Batched Q values: x of shape (B, input_dim) -> one (B, n_k) per head."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ContractError(f"expected (B, {self.input_dim}) input, got {x.shape}")
        _, post = self._trunk(x)
        top = post[-1] if post else x
        return [top @ w + b for w, b in zip(self.head_weights, self.head_biases)]

    def q_single(self, x: np.ndarray) -> list[np.ndarray]:
        """Q vectors for one observation, shape (n_k,) per head."""
        outs = self.forward(np.asarray(x, dtype=np.float64)[None, :])
        return [o[0] for o in outs]

    # -- loss and gradients ---------------------------------------------------

    def loss_and_grads(self, x: np.ndarray, actions: list[np.ndarray],
                       targets: list[np.ndarray]):
        """Mean squared error on the chosen-action entries of every head.

        ``actions[k]`` and ``targets[k]`` are (B,) arrays giving, for head k,
        the selected level index and its regression target. Returns the
        scalar loss and gradients shaped like the parameter lists.
        """
        x = np.asarray(x, dtype=np.float64)
        batch = x.shape[0]
        n_heads = len(self.head_sizes)
        pre, post = self._trunk(x)
        top = post[-1] if post else x

        loss = 0.0
        d_top = np.zeros_like(top)
        g_head_w = []
        g_head_b = []
        denom = batch * n_heads
        for k, (w, b) in enumerate(zip(self.head_weights, self.head_biases)):
            out = top @ w + b
            idx = np.asarray(actions[k], dtype=np.intp)
            tgt = np.asarray(targets[k], dtype=np.float64)
            picked = out[np.arange(batch), idx]
            diff = picked - tgt
            loss += float(np.sum(diff * diff))
            g_out = np.zeros_like(out)
            g_out[np.arange(batch), idx] = 2.0 * diff / denom
            g_head_w.append(top.T @ g_out)
            g_head_b.append(g_out.sum(axis=0))
            d_top += g_out @ w.T
        loss /= denom

        g_w = [np.zeros_like(w) for w in self.weights]
        g_b = [np.zeros_like(b) for b in self.biases]
        grad = d_top
        for layer in reversed(range(len(self.weights))):
            grad = grad * (pre[layer] > 0)
            below = post[layer - 1] if layer > 0 else x
            g_w[layer] = below.T @ grad
            g_b[layer] = grad.sum(axis=0)
            grad = grad @ self.weights[layer].T
        return loss, (g_w, g_b, g_head_w, g_head_b)

    def loss(self, x, actions, targets) -> float:
        value, _ = self.loss_and_grads(x, actions, targets)
        return value

    # -- parameter plumbing ---------------------------------------------------

    def param_arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, *self.head_weights, *self.head_biases]

    def grad_arrays(self, grads) -> list[np.ndarray]:
        g_w, g_b, g_head_w, g_head_b = grads
        return [*g_w, *g_b, *g_head_w, *g_head_b]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.param_arrays()])

    def set_flat(self, flat: np.ndarray) -> None:
        arrays = self.param_arrays()
        total = sum(p.size for p in arrays)
        if flat.shape != (total,):
            raise ContractError(f"expected flat vector of size {total}, got {flat.shape}")
        offset = 0
        for p in arrays:
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def copy_from(self, other: "QNetwork") -> None:
        for mine, theirs in zip(self.param_arrays(), other.param_arrays()):
            mine[...] = theirs

    def clone(self) -> "QNetwork":
        twin = QNetwork(self.input_dim, self.head_sizes, self.hidden, zero_init=True)
        twin.copy_from(self)
        return twin


class Adam:
    """Adam updates over a QNetwork's parameter list."""

    def __init__(self, net: QNetwork, learn_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.learn_rate = learn_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.param_arrays()]
        self.v = [np.zeros_like(p) for p in net.param_arrays()]

    def step(self, grads) -> None:
        self.t += 1
        params = self.net.param_arrays()
        gs = self.net.grad_arrays(grads)
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, gs, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learn_rate * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t,
                "m": [a.tolist() for a in self.m],
                "v": [a.tolist() for a in self.v]}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for mine, saved in zip(self.m, state["m"]):
            mine[...] = np.asarray(saved, dtype=np.float64).reshape(mine.shape)
        for mine, saved in zip(self.v, state["v"]):
            mine[...] = np.asarray(saved, dtype=np.float64).reshape(mine.shape)
