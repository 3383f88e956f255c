from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .base import ProbeModel, Standardizer, check_binary, register

MAX_NEIGHBORS = 100


@register
@dataclass(frozen=True, eq=False)
class KNNProbe(ProbeModel):
    family = "knn"
    train_x: np.ndarray
    train_y: np.ndarray

    def neighbors(self, features) -> np.ndarray:
        """Indices of the nearest training points, closest first (ties by index)."""
        Xs = self.standardizer(np.atleast_2d(np.asarray(features, dtype=np.float64)))
        dist = cdist(Xs, self.train_x, "sqeuclidean")
        k = int(self.hyperparams["n_neighbors"])
        return np.argsort(dist, axis=1, kind="stable")[:, :k]

    def _decision(self, Xs):
        dist = cdist(Xs, self.train_x, "sqeuclidean")
        k = int(self.hyperparams["n_neighbors"])
        nn = np.argsort(dist, axis=1, kind="stable")[:, :k]
        return self.train_y[nn].mean(axis=1)

    def predict_proba(self, features):
        return self.decision_function(features)


def train_knn(features, targets, n_neighbors: int) -> KNNProbe:
    """Store the standardized training set; score is the positive fraction among neighbours."""
    X, y = check_binary(features, targets)
    if not 1 <= n_neighbors <= len(X):
        raise ValueError(f"n_neighbors={n_neighbors} must lie in [1, {len(X)}]")
    std = Standardizer.fit(X)
    return KNNProbe({"n_neighbors": int(n_neighbors)}, std, std(X), y.astype(np.float64))
