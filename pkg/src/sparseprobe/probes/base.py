from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .._util import decode_array, encode_array, sigmoid

FAMILIES = ("logreg", "pca", "knn", "gbt", "mlp")


class SingleClassError(ValueError):
    """Raised when training data holds only one class."""


def check_binary(features, targets) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets).astype(np.int64).reshape(-1)
    if X.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {X.shape}")
    if len(X) != len(y):
        raise ValueError(f"{len(X)} rows but {len(y)} targets")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("targets must be 0/1")
    if y.min() == y.max():
        raise SingleClassError("training data contains a single class")
    return X, y


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(np.zeros(d), np.ones(d))

    def __call__(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


@dataclass(frozen=True, eq=False)
class ProbeModel:
    """A trained probe. Subclasses implement ``_decision`` on standardized inputs."""

    family = "base"
    hyperparams: dict
    standardizer: Standardizer

    @property
    def n_features(self) -> int:
        return len(self.standardizer.mean)

    def _decision(self, Xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decision_function(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return self._decision(self.standardizer(X))

    def predict_proba(self, features) -> np.ndarray:
        return sigmoid(self.decision_function(features))

    # serialization --------------------------------------------------------

    def _arrays(self) -> dict:
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name not in ("hyperparams", "standardizer")
        }

    def to_dict(self) -> dict:
        params = {}
        for name, value in self._arrays().items():
            params[name] = _encode_value(value)
        return {
            "family": self.family,
            "hyperparams": self.hyperparams,
            "standardizer": {
                "mean": encode_array(self.standardizer.mean),
                "scale": encode_array(self.standardizer.scale),
            },
            "params": params,
        }


def _encode_value(value):
    if isinstance(value, np.ndarray):
        return {"array": encode_array(value)}
    if isinstance(value, (list, tuple)):
        return {"list": [_encode_value(v) for v in value]}
    return {"value": value}


def _decode_value(doc):
    if "array" in doc:
        return decode_array(doc["array"])
    if "list" in doc:
        return [_decode_value(v) for v in doc["list"]]
    return doc["value"]


_REGISTRY: dict[str, type] = {}


def register(cls):
    _REGISTRY[cls.family] = cls
    return cls


def model_from_dict(doc: dict) -> ProbeModel:
    cls = _REGISTRY[doc["family"]]
    std = Standardizer(
        decode_array(doc["standardizer"]["mean"]), decode_array(doc["standardizer"]["scale"])
    )
    params = {k: _decode_value(v) for k, v in doc["params"].items()}
    return cls(hyperparams=doc["hyperparams"], standardizer=std, **params)


def score(model: ProbeModel, features) -> np.ndarray:
    """Real-valued scores; higher means more likely target = 1."""
    return model.decision_function(features)
