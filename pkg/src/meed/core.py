"""Shared domain types and the small differentiable MLP everything is built on.

All arrays are float64. Networks keep their trainable parameters in one flat
vector so optimizers and checkpoints can treat them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad

SIMPLEX_TOL = 1e-6


class ShapeError(ValueError):
    """Input shape does not match a network's architecture."""


class ConfigError(ValueError):
    """Invalid configuration value."""


def is_simplex(vec: np.ndarray, tol: float = SIMPLEX_TOL) -> bool:
    vec = np.asarray(vec)
    return bool(np.all(vec >= 0.0) and abs(vec.sum() - 1.0) <= tol)


@dataclass(frozen=True)
class Sample:
    """One instance to explain: features, cached model output, optional label.

    `true_label` exists for evaluation only and is never read while training
    an explainer.
    """

    id: str
    x: np.ndarray
    y: np.ndarray
    true_label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64))
        if self.x.ndim != 1 or self.x.size == 0:
            raise ValueError("x must be a nonempty vector")
        if self.y.ndim != 1 or self.y.size == 0:
            raise ValueError("y must be a nonempty vector")
        if not is_simplex(self.y):
            raise ShapeError("y must lie on the probability simplex")


@dataclass(frozen=True)
class SelectionSet:
    """Hard selection of k feature indices out of d."""

    indices: tuple
    d: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if not 1 <= len(idx) <= self.d:
            raise ValueError("need 1 <= k <= d")
        if any(i < 0 or i >= self.d for i in idx):
            raise ValueError("index out of range")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("indices must be strictly increasing")

    @property
    def k(self) -> int:
        return len(self.indices)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.d)
        m[list(self.indices)] = 1.0
        return m

    def complement(self) -> tuple:
        chosen = set(self.indices)
        return tuple(i for i in range(self.d) if i not in chosen)


@dataclass(frozen=True)
class RelaxedMask:
    """Differentiable approximately-k-hot mask."""

    v: np.ndarray
    k: int
    tau: float

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        object.__setattr__(self, "v", v)
        if self.k < 1 or self.tau <= 0:
            raise ValueError("need k >= 1 and tau > 0")
        if v.min() < -SIMPLEX_TOL or v.max() > 1.0 + SIMPLEX_TOL:
            raise ValueError("mask entries must lie in [0, 1]")
        if v.sum() > self.k + SIMPLEX_TOL:
            raise ValueError("mask entries must sum to at most k")


@dataclass
class TrainConfig:
    """Hyperparameters for the alternating training loop."""

    k: int
    epochs: int
    seed: int
    tau: float = 0.5
    lambda_u: float = 1.0
    lambda_e: float = 0.0
    batch_size: int = 64
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    decay: float = 0.0
    loss_u: str = "cross-entropy"
    use_output_feedback: bool = True
    prior_method: str = "none"
    n_projections: int = 128

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.loss_u not in ("cross-entropy", "sliced-wasserstein"):
            raise ConfigError(f"unknown loss_u: {self.loss_u}")
        if self.optimizer not in ("sgd", "rmsprop", "adadelta", "adam"):
            raise ConfigError(f"unknown optimizer: {self.optimizer}")
        if self.prior_method not in ("none", "grad", "gradient-times-input"):
            raise ConfigError(f"unknown prior_method: {self.prior_method}")
        if self.lambda_u < 0 or self.lambda_e < 0:
            raise ConfigError("lambda_u and lambda_e must be nonnegative")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.n_projections < 1:
            raise ConfigError("n_projections must be >= 1")


class BlackBoxModel:
    """Contract for the model being explained: deterministic x -> y."""

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def randomize(self, rng: np.random.Generator) -> None:
        """Reinitialize parameters (sanity randomization tests only)."""
        raise NotImplementedError


def named_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent substream of the run seed, keyed by a stream name."""
    streams = {"data": 0, "init": 1, "gumbel": 2, "perturb": 3, "model": 4}
    key = streams[stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


# ---------------------------------------------------------------------------
# Differentiable network
# ---------------------------------------------------------------------------

Layer = tuple  # ("dense", width) | ("relu",) | ("softmax",)


def _glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class Mlp:
    """Feed-forward net over a flat float64 parameter vector.

    Layers are drawn from dense(width), relu and softmax. Weights use
    uniform Glorot initialization from the provided RNG; biases start at 0.
    """

    def __init__(self, in_dim: int, layers: Sequence[Layer], rng: Optional[np.random.Generator] = None,
                 parameters: Optional[np.ndarray] = None):
        self.in_dim = int(in_dim)
        self.layers = [tuple(l) for l in layers]
        self._slices = []  # (w_slice, w_shape, b_slice) per dense layer
        width = self.in_dim
        offset = 0
        self.out_dim = width
        for i, layer in enumerate(self.layers):
            kind = layer[0]
            if kind == "dense":
                out = int(layer[1])
                w_size = width * out
                self._slices.append((slice(offset, offset + w_size), (width, out),
                                     slice(offset + w_size, offset + w_size + out)))
                offset += w_size + out
                width = out
            elif kind in ("relu", "softmax"):
                pass
            else:
                raise ConfigError(f"unknown layer kind at position {i}: {kind}")
        self.out_dim = width
        self.n_params = offset
        if parameters is not None:
            params = np.asarray(parameters, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise ShapeError(f"expected {self.n_params} parameters, got {params.shape}")
            self._params = params.copy()
        else:
            self._params = np.zeros(self.n_params)
            if rng is None:
                rng = np.random.default_rng(0)
            for w_sl, w_shape, _ in self._slices:
                lim = _glorot_limit(*w_shape)
                self._params[w_sl] = rng.uniform(-lim, lim, size=w_shape[0] * w_shape[1])

    @property
    def parameters(self) -> np.ndarray:
        return self._params

    def set_parameters(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {vec.shape}")
        self._params[:] = vec

    def clone(self) -> "Mlp":
        return Mlp(self.in_dim, self.layers, parameters=self._params)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ShapeError(
                f"dense layer 0 expects input width {self.in_dim}, got {x.shape[1]}")
        return x if not squeeze else x  # caller handles squeeze via flag

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Fast forward pass without building a graph."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = self._check_input(x if not squeeze else x[None, :])
        dense_i = 0
        for layer in self.layers:
            if layer[0] == "dense":
                w_sl, w_shape, b_sl = self._slices[dense_i]
                w = self._params[w_sl].reshape(w_shape)
                b = self._params[b_sl]
                h = h @ w + b
                dense_i += 1
            elif layer[0] == "relu":
                h = np.maximum(h, 0.0)
            else:  # softmax
                e = np.exp(h - h.max(axis=1, keepdims=True))
                h = e / e.sum(axis=1, keepdims=True)
        return h[0] if squeeze else h

    def make_leaves(self) -> list:
        """Fresh graph leaves (one Var per weight matrix / bias vector)."""
        leaves = []
        for w_sl, w_shape, b_sl in self._slices:
            leaves.append(ad.Var(self._params[w_sl].reshape(w_shape)))
            leaves.append(ad.Var(self._params[b_sl]))
        return leaves

    def forward_var(self, x, leaves) -> ad.Var:
        h = ad.as_var(x)
        if h.value.ndim != 2 or h.value.shape[1] != self.in_dim:
            raise ShapeError(
                f"dense layer 0 expects input width {self.in_dim}, got {h.value.shape}")
        dense_i = 0
        for layer in self.layers:
            if layer[0] == "dense":
                w = leaves[2 * dense_i]
                b = leaves[2 * dense_i + 1]
                h = ad.add(ad.matmul(h, w), b)
                dense_i += 1
            elif layer[0] == "relu":
                h = ad.relu(h)
            else:
                h = ad.softmax(h, axis=1)
        return h

    def grad_from_leaves(self, leaves) -> np.ndarray:
        flat = np.zeros(self.n_params)
        for i, (w_sl, w_shape, b_sl) in enumerate(self._slices):
            gw = leaves[2 * i].grad
            gb = leaves[2 * i + 1].grad
            flat[w_sl] = (gw if gw is not None else np.zeros(w_shape)).ravel()
            flat[b_sl] = gb if gb is not None else 0.0
        return flat


def net_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return net.predict(x)


def net_gradient(net: Mlp, loss_fn: Callable) -> np.ndarray:
    """Gradient of a scalar loss with respect to the net's flat parameters.

    `loss_fn` receives a forward callable mapping a (n, in_dim) array to the
    network output Var, and must return a scalar Var.
    """
    leaves = net.make_leaves()
    loss = loss_fn(lambda x: net.forward_var(ad.as_var(np.atleast_2d(np.asarray(x, dtype=np.float64))), leaves))
    ad.check_finite(loss, "loss")
    ad.backward(loss)
    grad = net.grad_from_leaves(leaves)
    if not np.all(np.isfinite(grad)):
        raise ad.NonFiniteError("non-finite value encountered in gradient")
    return grad
