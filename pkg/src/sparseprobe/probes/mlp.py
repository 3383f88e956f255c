"""ReLU multilayer perceptron probe trained with Adam.

Loss is mean binary cross-entropy plus ``0.5 * alpha * sum(||W||^2)`` over the
weight matrices (biases unpenalised). Training uses mini-batches of
``min(64, n)``, at most 200 epochs, and stops once the loss on a held-back 10%
validation subset has not improved for 20 epochs, restoring the best weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._util import log_loss_from_logits, sigmoid
from .base import ProbeModel, Standardizer, check_binary, register

EPOCHS = 200
PATIENCE = 20
BATCH = 64
VAL_FRACTION = 0.1
MIN_VAL = 10
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

DEFAULTS = {"depth": 1, "width": 32, "learning_rate": 1e-3, "alpha": 1e-4}


def init_params(sizes, rng) -> list[np.ndarray]:
    """Glorot-uniform weights and zero biases, flattened as [W0, b0, W1, b1, ...]."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def forward(params, X) -> np.ndarray:
    h = X
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = h @ params[2 * i] + params[2 * i + 1]
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    return h[:, 0]


def loss_and_grad(params, X, y, alpha: float):
    """Penalised loss and its gradient with respect to every parameter array."""
    n_layers = len(params) // 2
    acts = [X]
    pre = []
    h = X
    for i in range(n_layers):
        z = h @ params[2 * i] + params[2 * i + 1]
        pre.append(z)
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    logits = h[:, 0]
    n = len(X)
    loss = log_loss_from_logits(logits, y)
    loss += 0.5 * alpha * sum(float(np.sum(params[2 * i] ** 2)) for i in range(n_layers))
    delta = ((sigmoid(logits) - y) / n)[:, None]
    grads = [None] * len(params)
    for i in reversed(range(n_layers)):
        grads[2 * i] = acts[i].T @ delta + alpha * params[2 * i]
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[2 * i].T) * (pre[i - 1] > 0)
    return loss, grads


@register
@dataclass(frozen=True, eq=False)
class MLPProbe(ProbeModel):
    family = "mlp"
    layers: list
    epochs_run: int = 0

    def _decision(self, Xs):
        return forward(self.layers, Xs)


def _validation_split(y, rng):
    n = len(y)
    n_val = int(round(VAL_FRACTION * n))
    if n_val < MIN_VAL or n - n_val < 2:
        return np.arange(n), None
    order = rng.permutation(n)
    val, fit = order[:n_val], order[n_val:]
    if y[fit].min() == y[fit].max():
        return np.arange(n), None
    return np.sort(fit), np.sort(val)


def train_mlp(features, targets, h_p: dict | None = None, *, seed: int = 0, epochs: int = EPOCHS) -> MLPProbe:
    X, y = check_binary(features, targets)
    hp = {**DEFAULTS, **(h_p or {})}
    hp.pop("seed", None)
    depth, width = int(hp["depth"]), int(hp["width"])
    lr, alpha = float(hp["learning_rate"]), float(hp["alpha"])
    rng = np.random.default_rng(seed)
    std = Standardizer.fit(X)
    Xs = std(X)
    yf = y.astype(np.float64)
    params = init_params([X.shape[1]] + [width] * depth + [1], rng)
    fit_idx, val_idx = _validation_split(y, rng)
    Xf, yfit = Xs[fit_idx], yf[fit_idx]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2 = ADAM_BETAS
    step = 0
    batch = min(BATCH, len(Xf))

    def monitor_loss(ps):
        if val_idx is None:
            return loss_and_grad(ps, Xf, yfit, alpha)[0]
        return log_loss_from_logits(forward(ps, Xs[val_idx]), yf[val_idx])

    best = monitor_loss(params)
    best_params = [p.copy() for p in params]
    stale = 0
    epoch = 0
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(Xf))
        for start in range(0, len(Xf), batch):
            idx = perm[start : start + batch]
            _, grads = loss_and_grad(params, Xf[idx], yfit[idx], alpha)
            step += 1
            for i, gr in enumerate(grads):
                m[i] = b1 * m[i] + (1 - b1) * gr
                v[i] = b2 * v[i] + (1 - b2) * gr * gr
                mhat = m[i] / (1 - b1**step)
                vhat = v[i] / (1 - b2**step)
                params[i] = params[i] - lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        current = monitor_loss(params)
        if current < best - 1e-6:
            best, stale = current, 0
            best_params = [p.copy() for p in params]
        else:
            stale += 1
            if stale >= PATIENCE:
                break
    stored = {"depth": depth, "width": width, "learning_rate": lr, "alpha": alpha}
    return MLPProbe(stored, std, best_params, epoch if epochs else 0)
