"""Shared downstream network with hand-written reverse mode, Adam, and the training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

HIDDEN_WIDTHS = (256, 128, 64, 32)
SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NetworkError(ValueError):
    pass


def gelu(x):
    """Exact GELU, ``x * Phi(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / SQRT2))


def gelu_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + erf(x / SQRT2)) + x * INV_SQRT_2PI * np.exp(-0.5 * x * x)


class Network:
    """Fully connected net: GELU + dropout after each hidden layer, linear scalar output.

    Parameters are kept in ``params`` as ``W0, b0, W1, b1, ...`` with ``W`` of
    shape (fan_in, fan_out).
    """

    def __init__(self, input_width: int, hidden=HIDDEN_WIDTHS, dropout: float = 0.1, seed=0):
        if input_width < 1:
            raise NetworkError("network needs at least one input")
        self.widths = (int(input_width), *map(int, hidden), 1)
        self.dropout = float(dropout)
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            self.params[f"W{i}"] = rng.uniform(-bound, bound, (fan_in, fan_out))
            self.params[f"b{i}"] = rng.uniform(-bound, bound, fan_out)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def n_params(self) -> int:
        return count_network_params(self.widths[0], self.widths[1:-1])

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None):
        """Predictions (samples,) and a cache for :meth:`backward`.

        Train mode applies inverted dropout, so inference needs no rescaling.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise NetworkError(f"expected inputs of width {self.widths[0]}, got shape {x.shape}")
        drop = train and self.dropout > 0
        if drop and rng is None:
            raise NetworkError("train-mode dropout needs an rng")
        keep = 1.0 - self.dropout
        cache = [x]
        h = x
        for i in range(self.n_layers - 1):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            a = gelu(z)
            m = None
            if drop:
                m = (rng.random(a.shape) < keep) / keep
                a = a * m
            cache.append((z, m, a))
            h = a
        last = self.n_layers - 1
        y = h @ self.params[f"W{last}"] + self.params[f"b{last}"]
        return y[:, 0], cache

    def backward(self, cache, grad_out: np.ndarray):
        """Parameter gradients and the gradient w.r.t. the inputs."""
        grads = {}
        g = np.asarray(grad_out, dtype=np.float64)[:, None]
        last = self.n_layers - 1
        h_prev = cache[-1][2] if last > 0 else cache[0]
        grads[f"W{last}"] = h_prev.T @ g
        grads[f"b{last}"] = g.sum(axis=0)
        g = g @ self.params[f"W{last}"].T
        for i in range(last - 1, -1, -1):
            z, m, _ = cache[i + 1]
            if m is not None:
                g = g * m
            g = g * gelu_grad(z)
            h_prev = cache[i][2] if i > 0 else cache[0]
            grads[f"W{i}"] = h_prev.T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"W{i}"].T
        return grads, g

    def predict(self, x: np.ndarray, chunk: int = 8192) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.concatenate([self.forward(x[i:i + chunk])[0] for i in range(0, max(len(x), 1), chunk)]) \
            if len(x) else np.zeros(0)


def count_network_params(input_width: int, hidden=HIDDEN_WIDTHS) -> int:
    widths = (input_width, *hidden, 1)
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def mse_grad(pred: np.ndarray, target: np.ndarray):
    """Batch-mean squared error and its gradient w.r.t. the predictions."""
    r = pred - target
    return float(np.mean(r * r)), 2.0 * r / r.size


# ----------------------------------------------------------------------------

@dataclass
class Adam:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr_scale: dict[str, float] | None = None) -> None:
        """In-place bias-corrected Adam update of ``params``."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            lr = self.lr * (lr_scale or {}).get(name.split(".", 1)[0], 1.0)
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainController:
    """Plateau learning-rate decay and early stopping on validation loss."""

    lr_patience: int = 2
    lr_factor: float = 0.5
    min_lr: float = 1e-6
    stop_patience: int = 4
    max_epochs: int = 20
    best: float = math.inf
    best_epoch: int = -1
    plateau: int = 0
    bad_epochs: int = 0

    def update(self, epoch: int, val_loss: float, optimizer: Adam) -> dict:
        """Record one epoch; returns flags ``improved``, ``lr_reduced``, ``stop``."""
        improved = val_loss < self.best
        lr_reduced = False
        if improved:
            self.best, self.best_epoch = val_loss, epoch
            self.plateau = self.bad_epochs = 0
        else:
            self.plateau += 1
            self.bad_epochs += 1
            if self.plateau >= self.lr_patience:
                new_lr = max(optimizer.lr * self.lr_factor, self.min_lr)
                lr_reduced = new_lr < optimizer.lr
                optimizer.lr = new_lr
                self.plateau = 0
        stop = self.bad_epochs >= self.stop_patience or epoch + 1 >= self.max_epochs
        return {"improved": improved, "lr_reduced": lr_reduced, "stop": stop}


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for weight init, kernel init, batch order and dropout."""
    names = ("init", "kernel", "shuffle", "dropout")
    children = np.random.SeedSequence(int(seed)).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def evaluate_loss(model, dataset, chunk: int = 4096) -> float:
    n = len(dataset)
    total = 0.0
    for i in range(0, n, chunk):
        inputs, targets = dataset.take(np.arange(i, min(i + chunk, n)))
        r = model.predict(inputs) - targets
        total += float(np.sum(r * r))
    return total / n


def train(model, train_set, val_set, controller: TrainController | None = None, seed: int = 42,
          batch_size: int = 500, lr: float = 5e-4, lr_scale: dict[str, float] | None = None,
          optimizer: Adam | None = None, callback=None):
    """Mini-batch Adam on batch-mean MSE with plateau decay and early stopping.

    ``model`` exposes ``params``, ``loss_and_grad(inputs, targets, rng)`` and
    ``predict(inputs)``; the data sets expose ``len`` and ``take(indices)``.
    Returns the model (restored to its best-validation parameters) and the
    per-epoch log.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise NetworkError("training and validation sets must be nonempty")
    controller = controller or TrainController()
    streams = seed_streams(seed)
    optimizer = optimizer or Adam(lr=lr)
    best_params = {k: v.copy() for k, v in model.params.items()}
    log = []
    for epoch in range(controller.max_epochs):
        order = streams["shuffle"].permutation(len(train_set))
        total, seen = 0.0, 0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            inputs, targets = train_set.take(idx)
            loss, grads = model.loss_and_grad(inputs, targets, streams["dropout"])
            optimizer.step(model.params, grads, lr_scale)
            total += loss * len(idx)
            seen += len(idx)
        lr_used = optimizer.lr
        val_loss = evaluate_loss(model, val_set)
        flags = controller.update(epoch, val_loss, optimizer)
        if flags["improved"]:
            best_params = {k: v.copy() for k, v in model.params.items()}
        entry = {"epoch": epoch, "train_loss": total / seen, "val_loss": val_loss, "lr": lr_used,
                 "next_lr": optimizer.lr, **flags}
        log.append(entry)
        if callback is not None:
            callback(entry)
        if flags["stop"]:
            break
    for k, v in best_params.items():
        model.params[k][...] = v
    return model, log
