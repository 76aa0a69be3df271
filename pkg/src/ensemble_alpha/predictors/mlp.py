"""Fully connected regression network trained by mini-batch gradient descent."""

from __future__ import annotations

import numpy as np


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite at epoch {epoch}")


def _tanh(z):
    return np.tanh(z)


def _tanh_grad(z, a):
    return 1.0 - a * a


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(float)


def _identity(z):
    return z


def _identity_grad(z, a):
    return np.ones_like(z)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _sigmoid_grad(z, a):
    return a * (1.0 - a)


ACTIVATIONS = {
    "tanh": (_tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
    "identity": (_identity, _identity_grad),
    "linear": (_identity, _identity_grad),
    "sigmoid": (_sigmoid, _sigmoid_grad),
}


def init_params(layer_sizes, rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, layer by layer."""
    params = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(rng.uniform(-bound, bound, size=fan_out))
    return params


def forward(params, X, activation: str = "tanh") -> np.ndarray:
    act, _ = ACTIVATIONS[activation]
    a = np.asarray(X, dtype=float)
    n_layers = len(params) // 2
    for k in range(n_layers):
        z = a @ params[2 * k] + params[2 * k + 1]
        a = z if k == n_layers - 1 else act(z)
    return a[:, 0]


def loss_and_grad(params, X, y, activation: str = "tanh"):
    """Mean squared error and its gradient with respect to every parameter array."""
    act, act_grad = ACTIVATIONS[activation]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n_layers = len(params) // 2
    zs, acts = [], [X]
    a = X
    for k in range(n_layers):
        z = a @ params[2 * k] + params[2 * k + 1]
        a = z if k == n_layers - 1 else act(z)
        zs.append(z)
        acts.append(a)
    resid = a[:, 0] - y
    m = y.size
    loss = float(resid @ resid / m)
    delta = (2.0 / m) * resid[:, None]
    grads: list[np.ndarray] = [None] * len(params)
    for k in range(n_layers - 1, -1, -1):
        grads[2 * k] = acts[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params[2 * k].T) * act_grad(zs[k - 1], acts[k])
    return loss, grads


def train_network(
    X,
    y,
    hidden=(32,),
    activation: str = "tanh",
    learning_rate: float = 1e-3,
    epochs: int = 200,
    batch_size: int = 64,
    seed: int = 0,
):
    """Returns ``(params, loss_history)``; history[0] is the untrained loss."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if batch_size < 1 or n < batch_size:
        raise ValueError(f"need at least batch_size={batch_size} rows, have {n}")
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    rng = np.random.default_rng(seed)
    params = init_params((d, *hidden, 1), rng)
    history = [float(np.mean((forward(params, X, activation) - y) ** 2))]
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                _, grads = loss_and_grad(params, X[batch], y[batch], activation)
                for p, g in zip(params, grads):
                    p -= learning_rate * g
        with np.errstate(over="ignore", invalid="ignore"):
            loss = float(np.mean((forward(params, X, activation) - y) ** 2))
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        history.append(loss)
    return params, history
