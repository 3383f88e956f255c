from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import ProbeModel, Standardizer, check_binary, register
from .logreg import UNREGULARIZED_C, train_logreg

MAX_COMPONENTS = 100


def principal_components(X, n_components: int) -> tuple[np.ndarray, np.ndarray]:
    """Top principal directions of the centred rows of ``X``.

    Returns ``(components, variances)`` with ``components`` of shape
    ``(n_components, d)``. Each direction is sign-fixed so its largest-magnitude
    entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / max(len(X), 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")[:n_components]
    comps = vecs[:, order].T
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(len(comps)), pivot])
    signs[signs == 0] = 1.0
    return comps * signs[:, None], vals[order]


def max_components(n_samples: int, n_features: int) -> int:
    return min(n_samples, n_features, MAX_COMPONENTS)


@register
@dataclass(frozen=True, eq=False)
class PCARegProbe(ProbeModel):
    family = "pca"
    center: np.ndarray
    components: np.ndarray
    coef: np.ndarray
    intercept: float

    def _decision(self, Xs):
        return ((Xs - self.center) @ self.components.T) @ self.coef + self.intercept

    def project(self, features) -> np.ndarray:
        Xs = self.standardizer(np.asarray(features, dtype=np.float64))
        return (Xs - self.center) @ self.components.T


def train_pca_reg(features, targets, n_components: int) -> PCARegProbe:
    """Project onto the top principal components, then fit a (numerically) unregularized logistic regression."""
    X, y = check_binary(features, targets)
    cap = max_components(*X.shape)
    if not 1 <= n_components <= cap:
        raise ValueError(f"n_components={n_components} must lie in [1, {cap}]")
    std = Standardizer.fit(X)
    Xs = std(X)
    center = Xs.mean(axis=0)
    comps, _ = principal_components(Xs, n_components)
    Z = (Xs - center) @ comps.T
    head = train_logreg(Z, y, "l2", UNREGULARIZED_C, standardize=False)
    return PCARegProbe(
        {"n_components": int(n_components)}, std, center, comps, head.coef, head.intercept
    )
