"""Differentiable maps used by predictive, dual and goal schemas.

The default structure is a single affine layer over the concatenated inputs
followed by ``tanh``.  An optional tanh hidden layer can be switched on.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class DimensionMismatch(ValueError):
    pass


class DifferentiableMap:
    def __init__(self, in_dims: Sequence[int], out_dim: int, rng: np.random.Generator | None = None,
                 init_scale: float = 0.01, hidden: int = 0, in_scales: Sequence[float] | None = None):
        self.in_dims = [int(d) for d in in_dims]
        # fixed per-input gains, so inputs of very different magnitude train evenly
        self.in_scales = [1.0] * len(self.in_dims) if in_scales is None else [float(c) for c in in_scales]
        if len(self.in_scales) != len(self.in_dims):
            raise DimensionMismatch("one scale per input is required")
        self.out_dim = int(out_dim)
        self.hidden = int(hidden)
        n_in = sum(self.in_dims) + 1
        rng = rng if rng is not None else np.random.default_rng(0)
        if self.hidden:
            self.params = {
                "V": rng.uniform(-init_scale, init_scale, (self.hidden, n_in)),
                "W": rng.uniform(-init_scale, init_scale, (self.out_dim, self.hidden + 1)),
            }
        else:
            self.params = {"W": rng.uniform(-init_scale, init_scale, (self.out_dim, n_in))}

    # -- plumbing ------------------------------------------------------

    def _concat(self, inputs: Sequence[np.ndarray]) -> np.ndarray:
        if len(inputs) != len(self.in_dims):
            raise DimensionMismatch(f"expected {len(self.in_dims)} inputs, got {len(inputs)}")
        z = np.empty(sum(self.in_dims) + 1)
        i = 0
        for x, d, c in zip(inputs, self.in_dims, self.in_scales):
            x = np.asarray(x, dtype=float).reshape(-1)
            if x.size != d:
                raise DimensionMismatch(f"input of dim {x.size}, expected {d}")
            z[i:i + d] = x if c == 1.0 else c * x
            i += d
        z[i] = 1.0
        return z

    def _forward(self, inputs):
        z = self._concat(inputs)
        if self.hidden:
            h = np.tanh(self.params["V"] @ z)
            hb = np.append(h, 1.0)
            y = np.tanh(self.params["W"] @ hb)
            return z, h, hb, y
        y = np.tanh(self.params["W"] @ z)
        return z, None, None, y

    def copy(self) -> "DifferentiableMap":
        other = object.__new__(DifferentiableMap)
        other.in_dims = list(self.in_dims)
        other.in_scales = list(self.in_scales)
        other.out_dim = self.out_dim
        other.hidden = self.hidden
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def set_flat(self, flat: np.ndarray):
        i = 0
        for k in sorted(self.params):
            n = self.params[k].size
            self.params[k] = np.asarray(flat[i:i + n], dtype=float).reshape(self.params[k].shape).copy()
            i += n

    # -- evaluation and gradients -------------------------------------

    def evaluate(self, inputs: Sequence[np.ndarray]) -> np.ndarray:
        return self._forward(inputs)[3]

    __call__ = evaluate

    def vjp_input(self, inputs: Sequence[np.ndarray], v: np.ndarray, k: int) -> np.ndarray:
        """Gradient of ``v . f(inputs)`` with respect to input ``k``."""
        z, h, hb, y = self._forward(inputs)
        g = np.asarray(v, dtype=float) * (1.0 - y * y)
        if self.hidden:
            gh = (self.params["W"][:, :-1].T @ g) * (1.0 - h * h)
            gz = self.params["V"].T @ gh
        else:
            gz = self.params["W"].T @ g
        start = sum(self.in_dims[:k])
        return self.in_scales[k] * gz[start:start + self.in_dims[k]]

    def jacobian_input(self, inputs: Sequence[np.ndarray], k: int) -> np.ndarray:
        """Full Jacobian d f / d input_k, shape (out_dim, in_dims[k])."""
        return np.stack([self.vjp_input(inputs, e, k) for e in np.eye(self.out_dim)])

    def vjp_params(self, inputs: Sequence[np.ndarray], v: np.ndarray) -> dict[str, np.ndarray]:
        """Gradient of ``v . f(inputs)`` with respect to every parameter array."""
        z, h, hb, y = self._forward(inputs)
        g = np.asarray(v, dtype=float) * (1.0 - y * y)
        if self.hidden:
            gh = (self.params["W"][:, :-1].T @ g) * (1.0 - h * h)
            return {"W": np.outer(g, hb), "V": np.outer(gh, z)}
        return {"W": np.outer(g, z)}

    def step(self, inputs: Sequence[np.ndarray], direction: np.ndarray, lr: float):
        """Move parameters by ``lr * d(direction . f)/dW``.

        With ``direction = target - f(inputs)`` this is one gradient-descent
        step on ``0.5 * |target - f|^2``.
        """
        if lr == 0.0:
            return
        grads = self.vjp_params(inputs, direction)
        for k, gk in grads.items():
            self.params[k] += lr * gk

    def fit_sgd(self, rows: Sequence[Sequence[np.ndarray]], targets: Sequence[np.ndarray], lr: float,
                epochs: int = 1):
        """Per-sample squared-error descent over ``rows`` in order, ``epochs`` times.

        Same result as calling ``step(x, t - f(x), lr)`` in a loop; inputs are
        concatenated once up front.
        """
        Z = [self._concat(x) for x in rows]
        T = [np.asarray(t, dtype=float).reshape(-1) for t in targets]
        if len(Z) != len(T):
            raise DimensionMismatch("one target per row is required")
        for _ in range(epochs):
            for z, t in zip(Z, T):
                if self.hidden:
                    V, W = self.params["V"], self.params["W"]
                    h = np.tanh(V @ z)
                    hb = np.append(h, 1.0)
                    y = np.tanh(W @ hb)
                    g = (t - y) * (1.0 - y * y)
                    gh = (W[:, :-1].T @ g) * (1.0 - h * h)
                    W += lr * np.outer(g, hb)
                    V += lr * np.outer(gh, z)
                else:
                    W = self.params["W"]
                    y = np.tanh(W @ z)
                    W += lr * np.outer((t - y) * (1.0 - y * y), z)
