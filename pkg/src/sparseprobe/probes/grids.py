"""Ten-candidate hyperparameter grids per probe family.

Logistic regression, PCA regression and KNN are searched exhaustively over a
fixed grid; boosted trees and the MLP use ten configurations sampled from their
ranges with a dedicated seeded generator. Data-dependent caps (PCA components,
KNN neighbours) are applied here: over-cap values are clamped and duplicates
dropped, so those grids may hold fewer than ten entries at tiny n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .knn import MAX_NEIGHBORS
from .pca import max_components

N_CANDIDATES = 10

LOGREG_C = tuple(float(c) for c in np.logspace(5, -5, N_CANDIDATES))
GBT_N_ESTIMATORS = (50, 100, 150, 200, 250)
GBT_MAX_DEPTH = (2, 3, 4, 5)
GBT_MIN_CHILD_WEIGHT = tuple(range(1, 10))
MLP_DEPTH = (1, 2, 3)
MLP_WIDTH = (16, 32, 64)
MLP_LEARNING_RATE = tuple(float(v) for v in np.logspace(-4, -2, 5))
MLP_ALPHA = tuple(float(v) for v in np.logspace(-5, -2, 5))


@dataclass(frozen=True)
class HyperparamGrid:
    family: str
    candidates: tuple
    search_mode: str  # "exhaustive" | "random"

    def __len__(self):
        return len(self.candidates)


def _log_int_grid(cap: int) -> list[int]:
    cap = max(int(cap), 1)
    vals = np.round(np.logspace(0, np.log10(cap), N_CANDIDATES)).astype(int)
    return sorted(set(int(min(max(v, 1), cap)) for v in vals))


def _log_uniform(rng, lo, hi) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def logreg_grid(reg: str = "l2") -> HyperparamGrid:
    return HyperparamGrid("logreg", tuple({"reg": reg, "c": c} for c in LOGREG_C), "exhaustive")


def pca_grid(n_samples: int, n_features: int) -> HyperparamGrid:
    vals = _log_int_grid(max_components(n_samples, n_features))
    return HyperparamGrid("pca", tuple({"n_components": v} for v in vals), "exhaustive")


def knn_grid(n_samples: int) -> HyperparamGrid:
    vals = _log_int_grid(min(MAX_NEIGHBORS, n_samples - 1))
    return HyperparamGrid("knn", tuple({"n_neighbors": v} for v in vals), "exhaustive")


def gbt_grid(seed: int) -> HyperparamGrid:
    rng = np.random.default_rng(seed)
    cands = []
    for _ in range(N_CANDIDATES):
        cands.append(
            {
                "n_estimators": int(rng.choice(GBT_N_ESTIMATORS)),
                "max_depth": int(rng.choice(GBT_MAX_DEPTH)),
                "learning_rate": _log_uniform(rng, 1e-3, 1e-1),
                "subsample": float(rng.uniform(0.7, 1.0)),
                "colsample_bytree": float(rng.uniform(0.7, 1.0)),
                "reg_alpha": _log_uniform(rng, 1e-3, 10.0),
                "reg_lambda": _log_uniform(rng, 1e-3, 10.0),
                "min_child_weight": int(rng.choice(GBT_MIN_CHILD_WEIGHT)),
            }
        )
    return HyperparamGrid("gbt", tuple(cands), "random")


def mlp_grid(seed: int) -> HyperparamGrid:
    rng = np.random.default_rng(seed)
    cands = []
    for _ in range(N_CANDIDATES):
        cands.append(
            {
                "depth": int(rng.choice(MLP_DEPTH)),
                "width": int(rng.choice(MLP_WIDTH)),
                "learning_rate": float(rng.choice(MLP_LEARNING_RATE)),
                "alpha": float(rng.choice(MLP_ALPHA)),
            }
        )
    return HyperparamGrid("mlp", tuple(cands), "random")


def default_grid(family: str, n_samples: int, n_features: int, seed: int = 0, reg: str = "l2") -> HyperparamGrid:
    if family == "logreg":
        return logreg_grid(reg)
    if family == "pca":
        return pca_grid(n_samples, n_features)
    if family == "knn":
        return knn_grid(n_samples)
    if family == "gbt":
        return gbt_grid(seed)
    if family == "mlp":
        return mlp_grid(seed)
    raise ValueError(f"unknown family {family!r}")
