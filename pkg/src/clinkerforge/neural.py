"""One-hidden-layer perceptron regressor trained by mini-batch Adam(W) or SGD.

    hidden = act(X @ W1 + b1)        act: ReLU or LeakyReLU(0.01)
    y_hat  = hidden @ w2 + b2

Dropout is inverted (kept units scaled by ``1 / (1 - rate)`` at train time),
so inference is a plain forward pass.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import serialize
from .datamodel import check_columns


class Diverged(FloatingPointError):
    pass


LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class MlpConfig:
    hidden: int = 64
    activation: str = "relu"
    dropout: float = 0.0
    optimizer: str = "adam"
    lr: float = 1e-3
    weight_decay: float = 0.0
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32

    def __post_init__(self):
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if self.activation not in ("relu", "leaky_relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("need lr > 0, epochs >= 0, batch_size >= 1")


@dataclass
class MlpState:
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    config: MlpConfig = field(default_factory=MlpConfig)
    loss_history: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_features(self) -> int:
        return self.W1.shape[0]

    def predict(self, X) -> np.ndarray:
        return mlp_forward(self, X)

    def params(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.w2, [self.b2]])

    def with_params(self, theta) -> MlpState:
        p, h = self.W1.shape
        k = p * h
        return MlpState(theta[:k].reshape(p, h).copy(), theta[k:k + h].copy(), theta[k + h:k + 2 * h].copy(),
                        float(theta[-1]), self.config, self.loss_history)

    def to_payload(self):
        meta = {"config": asdict(self.config), "b2": self.b2, "n_features": self.n_features}
        return meta, {"W1": self.W1, "b1": self.b1, "w2": self.w2, "loss_history": self.loss_history}

    @classmethod
    def from_payload(cls, meta, arrays) -> MlpState:
        cfg = MlpConfig(**meta["config"])
        W1 = arrays["W1"].reshape(meta["n_features"], cfg.hidden)
        return cls(W1, arrays["b1"], arrays["w2"], meta["b2"], cfg, arrays["loss_history"])


def activate(z, kind: str):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def activate_grad(z, kind: str):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def init_mlp(n_features: int, config: MlpConfig, rng: np.random.Generator) -> MlpState:
    """Glorot-uniform weights, zero thresholds."""
    h = config.hidden
    a1 = np.sqrt(6.0 / (n_features + h))
    a2 = np.sqrt(6.0 / (h + 1))
    return MlpState(rng.uniform(-a1, a1, (n_features, h)), np.zeros(h), rng.uniform(-a2, a2, h), 0.0, config)


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    if rate == 0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _forward(state: MlpState, X, mask=None):
    Z = X @ state.W1 + state.b1
    A = activate(Z, state.config.activation)
    if mask is not None:
        A = A * mask
    return Z, A, A @ state.w2 + state.b2


def mlp_forward(state: MlpState, X, training: bool = False, rng: np.random.Generator | None = None,
                mask: np.ndarray | None = None) -> np.ndarray:
    """Network output; with ``training`` a dropout mask is drawn from ``rng`` unless given."""
    X = check_columns(X, state.n_features)
    if training and mask is None and state.config.dropout > 0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        mask = dropout_mask(rng, (len(X), state.config.hidden), state.config.dropout)
    return _forward(state, X, mask if training else None)[2]


def mse_loss(state: MlpState, X, y, mask=None) -> float:
    r = _forward(state, np.asarray(X, float), mask)[2] - y
    return float(np.mean(r * r))


def mlp_grad(state: MlpState, X, y, mask: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Exact gradients of ``mean((y_hat - y)^2)`` for a fixed dropout mask."""
    X = check_columns(X, state.n_features)
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) == 0:
        raise ValueError("empty batch")
    Z, A, out = _forward(state, X, mask)
    d_out = 2.0 * (out - y) / len(y)
    gw2 = A.T @ d_out
    gb2 = d_out.sum()
    dA = np.outer(d_out, state.w2)
    if mask is not None:
        dA = dA * mask
    dZ = dA * activate_grad(Z, state.config.activation)
    return {"W1": X.T @ dZ, "b1": dZ.sum(axis=0), "w2": gw2, "b2": np.array(gb2)}


def flatten_grad(g: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([g["W1"].ravel(), g["b1"], g["w2"], np.atleast_1d(g["b2"])])


def mlp_train(X, y, config: MlpConfig = MlpConfig(), seed: int = 0) -> MlpState:
    """Shuffled mini-batch training for a fixed number of epochs.

    Adam uses decoupled weight decay on W1 and w2; SGD uses heavy-ball
    momentum with the same decoupled decay. ``loss_history`` holds the
    full-batch inference loss after each epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    rng = np.random.default_rng(seed)
    state = init_mlp(p, config, rng)
    theta = state.params()
    k_w1 = p * config.hidden
    decay = np.zeros_like(theta)
    decay[:k_w1] = 1.0
    decay[k_w1 + config.hidden:k_w1 + 2 * config.hidden] = 1.0
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0
    history = []
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            mask = dropout_mask(rng, (len(idx), config.hidden), config.dropout) if config.dropout > 0 else None
            g = flatten_grad(mlp_grad(state, X[idx], y[idx], mask))
            t += 1
            if config.optimizer == "adam":
                m = beta1 * m + (1 - beta1) * g
                v = beta2 * v + (1 - beta2) * g * g
                step = (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
            else:
                m = config.momentum * m + g
                step = m
            theta = theta - config.lr * (step + config.weight_decay * decay * theta)
            state = state.with_params(theta)
        loss = mse_loss(state, X, y)
        if not np.isfinite(loss):
            raise Diverged(f"training loss became {loss}")
        history.append(loss)
    state.loss_history = np.array(history)
    return state


def load_mlp(path) -> MlpState:
    fam, meta, arrays = serialize.load(path)
    if fam != "mlp":
        raise serialize.FormatError(f"expected mlp, found {fam!r}")
    return MlpState.from_payload(meta, arrays)
