"""Baseline probe families and the SAE logistic-regression head."""

import json

from .base import FAMILIES, ProbeModel, SingleClassError, Standardizer, model_from_dict, score
from .gbt import GBTProbe, train_gbt
from .grids import HyperparamGrid, default_grid
from .knn import KNNProbe, train_knn
from .logreg import LogRegProbe, train_logreg
from .mlp import MLPProbe, train_mlp
from .pca import PCARegProbe, train_pca_reg


def train(family: str, features, targets, h_p: dict, seed: int = 0) -> ProbeModel:
    """Dispatch to the family's trainer with a hyperparameter dict."""
    if family == "logreg":
        return train_logreg(features, targets, h_p.get("reg", "l2"), h_p["c"])
    if family == "pca":
        return train_pca_reg(features, targets, h_p["n_components"])
    if family == "knn":
        return train_knn(features, targets, h_p["n_neighbors"])
    if family == "gbt":
        return train_gbt(features, targets, h_p, seed=seed)
    if family == "mlp":
        return train_mlp(features, targets, h_p, seed=seed)
    raise ValueError(f"unknown family {family!r}")


def dumps(model: ProbeModel) -> str:
    return json.dumps(model.to_dict())


def loads(text: str) -> ProbeModel:
    return model_from_dict(json.loads(text))


__all__ = [
    "FAMILIES",
    "GBTProbe",
    "HyperparamGrid",
    "KNNProbe",
    "LogRegProbe",
    "MLPProbe",
    "PCARegProbe",
    "ProbeModel",
    "SingleClassError",
    "Standardizer",
    "default_grid",
    "dumps",
    "loads",
    "model_from_dict",
    "score",
    "train",
    "train_gbt",
    "train_knn",
    "train_logreg",
    "train_mlp",
    "train_pca_reg",
]
