"""Multi-token probes: pooled activations, concatenated per-token PCA, attention pooling.

The attention probe scores an example ``x`` (tokens ``x_t``) as

    a = softmax_t(x_t . q)   over valid tokens only
    logit = sum_t a_t (x_t . v) + b
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import encode_array, decode_array, log_loss_from_logits, sigmoid
from .probes.base import SingleClassError, Standardizer
from .probes.mlp import ADAM_BETAS, ADAM_EPS, BATCH, EPOCHS, PATIENCE, VAL_FRACTION, MIN_VAL
from .probes.pca import principal_components
from .tensor_io import ActivationTensor, pool_tokens

ATTN_DEFAULTS = {"learning_rate": 1e-2, "weight_decay": 1e-4}


def pool_activations(x: ActivationTensor, mode: str = "last") -> np.ndarray:
    return pool_tokens(np.asarray(x.data, dtype=np.float64), x.token_mask, mode)


@dataclass(frozen=True, eq=False)
class AttentionProbe:
    q: np.ndarray
    v: np.ndarray
    b: float = 0.0
    standardizer: Standardizer | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if q.shape != v.shape or q.ndim != 1:
            raise ValueError("q and v must be vectors of equal length")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v)) and np.isfinite(self.b)):
            raise ValueError("attention probe parameters must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "b", float(self.b))

    def to_dict(self) -> dict:
        doc = {"family": "attention", "q": encode_array(self.q), "v": encode_array(self.v), "b": self.b}
        if self.standardizer is not None:
            doc["mean"] = encode_array(self.standardizer.mean)
            doc["scale"] = encode_array(self.standardizer.scale)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "AttentionProbe":
        std = None
        if "mean" in doc:
            std = Standardizer(decode_array(doc["mean"]), decode_array(doc["scale"]))
        return cls(decode_array(doc["q"]), decode_array(doc["v"]), doc["b"], std)


def _masked_softmax(s: np.ndarray, valid: np.ndarray) -> np.ndarray:
    s = np.where(valid, s, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def attn_logits_raw(q, v, b, X, valid) -> np.ndarray:
    """Logits for a batch ``X`` of shape ``(n, T, d)`` with boolean ``valid`` mask ``(n, T)``."""
    if not valid.any(axis=1).all():
        raise ValueError("every example needs at least one valid token")
    a = _masked_softmax(X @ q, valid)
    return (a * (X @ v)).sum(axis=1) + b


def attn_logits(probe: AttentionProbe, x: ActivationTensor) -> np.ndarray:
    X = np.asarray(x.data, dtype=np.float64)
    if probe.standardizer is not None:
        X = probe.standardizer(X)
    return attn_logits_raw(probe.q, probe.v, probe.b, X, x.valid_mask())


def attn_score(probe: AttentionProbe, x, n_valid: int | None = None) -> float:
    """Logit for a single example given as a ``(T, d)`` array (last ``n_valid`` tokens valid)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    t = x.shape[0]
    n_valid = t if n_valid is None else int(n_valid)
    if n_valid < 1:
        raise ValueError("attention pooling needs at least one valid token")
    if probe.standardizer is not None:
        x = probe.standardizer(x)
    valid = (np.arange(t) >= t - n_valid)[None, :]
    return float(attn_logits_raw(probe.q, probe.v, probe.b, x[None], valid)[0])


def attn_loss_and_grad(q, v, b, X, valid, y, weight_decay: float = 0.0):
    """Mean logistic loss plus ``0.5 * wd * (|q|^2 + |v|^2)`` and its gradient."""
    s = X @ q
    u = X @ v
    a = _masked_softmax(s, valid)
    logit = (a * u).sum(axis=1) + b
    loss = log_loss_from_logits(logit, y) + 0.5 * weight_decay * (q @ q + v @ v)
    r = (sigmoid(logit) - y) / len(y)
    # d logit / d v = sum_t a_t x_t ; d logit / d q = sum_t a_t (u_t - logit_pool) x_t
    pooled = (a * u).sum(axis=1, keepdims=True)
    gv = np.einsum("n,nt,ntd->d", r, a, X) + weight_decay * v
    gq = np.einsum("n,nt,ntd->d", r, a * (u - pooled), X) + weight_decay * q
    gb = float(r.sum())
    return float(loss), gq, gv, gb


def train_attn_probe(x: ActivationTensor, targets, h_p: dict | None = None, *, seed: int = 0,
                     epochs: int = EPOCHS) -> AttentionProbe:
    """Fit ``(q, v, b)`` with Adam; early stopping mirrors the MLP probe."""
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if y.min() == y.max():
        raise SingleClassError("training data contains a single class")
    hp = {**ATTN_DEFAULTS, **(h_p or {})}
    lr, wd = float(hp["learning_rate"]), float(hp["weight_decay"])
    valid = x.valid_mask()
    raw = np.asarray(x.data, dtype=np.float64)
    std = Standardizer.fit(raw[valid])
    X = std(raw)
    X[~valid] = 0.0
    n, _, d = X.shape
    rng = np.random.default_rng(seed)
    params = [rng.normal(0, 1 / np.sqrt(d), d), rng.normal(0, 1 / np.sqrt(d), d), np.zeros(1)]

    n_val = int(round(VAL_FRACTION * n))
    if n_val >= MIN_VAL and n - n_val >= 2:
        perm = rng.permutation(n)
        val_idx, fit_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
        if y[fit_idx].min() == y[fit_idx].max():
            val_idx, fit_idx = None, np.arange(n)
    else:
        val_idx, fit_idx = None, np.arange(n)

    def monitor(ps):
        idx = fit_idx if val_idx is None else val_idx
        return log_loss_from_logits(attn_logits_raw(ps[0], ps[1], ps[2][0], X[idx], valid[idx]), y[idx])

    m = [np.zeros_like(p) for p in params]
    s2 = [np.zeros_like(p) for p in params]
    b1, b2 = ADAM_BETAS
    step = 0
    best, best_params, stale = monitor(params), [p.copy() for p in params], 0
    batch = min(BATCH, len(fit_idx))
    for _ in range(epochs):
        order = fit_idx[rng.permutation(len(fit_idx))]
        for start in range(0, len(order), batch):
            idx = order[start : start + batch]
            _, gq, gv, gb = attn_loss_and_grad(params[0], params[1], params[2][0], X[idx], valid[idx], y[idx], wd)
            step += 1
            for i, g in enumerate((gq, gv, np.array([gb]))):
                m[i] = b1 * m[i] + (1 - b1) * g
                s2[i] = b2 * s2[i] + (1 - b2) * g * g
                params[i] = params[i] - lr * (m[i] / (1 - b1**step)) / (np.sqrt(s2[i] / (1 - b2**step)) + ADAM_EPS)
        current = monitor(params)
        if current < best - 1e-6:
            best, best_params, stale = current, [p.copy() for p in params], 0
        else:
            stale += 1
            if stale >= PATIENCE:
                break
    q, v, b = best_params
    return AttentionProbe(q, v, float(b[0]), std)


@dataclass(frozen=True, eq=False)
class TokenPCA:
    """A shared per-token PCA projection for a fixed context length."""

    mean: np.ndarray
    components: np.ndarray
    n_tokens: int

    def transform(self, x: ActivationTensor) -> np.ndarray:
        if x.n_tokens != self.n_tokens:
            raise ValueError(f"context length {x.n_tokens} != fitted length {self.n_tokens}")
        X = np.asarray(x.data, dtype=np.float64)
        proj = (X - self.mean) @ self.components.T
        proj[~x.valid_mask()] = 0.0
        return proj.reshape(x.n_examples, -1)


def fit_token_pca(x: ActivationTensor, n_components: int = 20, rows=None) -> TokenPCA:
    """Fit one PCA over the valid tokens of the given example rows (default: all)."""
    sub = x if rows is None else x.take(rows)
    tokens = np.asarray(sub.data, dtype=np.float64)[sub.valid_mask()]
    k = min(n_components, tokens.shape[0], tokens.shape[1])
    comps, _ = principal_components(tokens, k)
    return TokenPCA(tokens.mean(axis=0), comps, x.n_tokens)


def concat_pca_features(x: ActivationTensor, n_components: int = 20, rows=None) -> np.ndarray:
    """Per-token PCA projections concatenated along the token axis, width ``n_components * T``."""
    return fit_token_pca(x, n_components, rows).transform(x)
