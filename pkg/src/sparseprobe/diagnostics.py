"""Dataset-quality tooling: label disagreement mining and top-activating-token tables."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .probes import LogRegProbe, PCARegProbe, ProbeModel
from .tensor_io import ActivationTensor, LabeledDataset

LINEAR_FAMILIES = (LogRegProbe, PCARegProbe)


@dataclass(frozen=True)
class Disagreement:
    index: int
    confidence: float  # model probability of the class opposite the recorded label
    label: int


def mine_disagreements(model: ProbeModel, features, targets, top_n: int = 10, *,
                       min_confidence: float = 0.0, indices=None) -> list[Disagreement]:
    """Rank examples by the model's confidence that their recorded label is wrong.

    ``features``/``targets`` may be given directly, or pass a
    :class:`LabeledDataset` as ``features`` (its last-token activations or latent
    matrix are scored) and ``None`` for ``targets``. Ties are broken by index.
    """
    if isinstance(features, LabeledDataset):
        data = features
        feats = data.features.last_token() if isinstance(data.features, ActivationTensor) else data.features
        targets = data.targets
    else:
        feats = features
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    X = np.asarray(feats, dtype=np.float64)
    y = np.asarray(targets).astype(np.int64)
    idx = np.arange(len(y)) if indices is None else np.asarray(indices, dtype=np.int64)
    if top_n > len(idx):
        warnings.warn(f"top_n={top_n} exceeds {len(idx)} examples; clamping", stacklevel=2)
        top_n = len(idx)
    p = model.predict_proba(X[idx])
    conf = np.where(y[idx] == 1, 1.0 - p, p)
    order = np.lexsort((idx, -conf))
    out = []
    for o in order[:top_n]:
        if conf[o] <= min_confidence:
            break
        out.append(Disagreement(int(idx[o]), float(conf[o]), int(y[idx[o]])))
    return out


@dataclass(frozen=True)
class TokenRow:
    token_id: int
    mean_activation: float
    occurrences: int


def top_activating_tokens(model: ProbeModel, tokens, token_ids, min_occurrences: int = 10) -> list[TokenRow]:
    """Mean probe score per token id over a token stream, highest first.

    ``tokens`` is a ``(n_tokens, d)`` matrix (or an :class:`ActivationTensor`
    whose valid tokens are flattened in order) aligned with ``token_ids``.
    """
    if not isinstance(model, LINEAR_FAMILIES):
        raise TypeError(f"token attribution needs a linear probe, got {model.family}")
    if isinstance(tokens, ActivationTensor):
        X = np.asarray(tokens.data, dtype=np.float64)[tokens.valid_mask()]
    else:
        X = np.asarray(tokens, dtype=np.float64)
    ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
    if len(ids) != len(X):
        raise ValueError(f"{len(X)} token activations but {len(ids)} token ids")
    s = model.decision_function(X)
    uniq, inverse, counts = np.unique(ids, return_inverse=True, return_counts=True)
    means = np.bincount(inverse, weights=s) / counts
    keep = counts >= min_occurrences
    uniq, means, counts = uniq[keep], means[keep], counts[keep]
    order = np.lexsort((uniq, -means))
    return [TokenRow(int(uniq[i]), float(means[i]), int(counts[i])) for i in order]


def write_token_table(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["token_id", "mean_activation", "occurrences"])
        for r in rows:
            w.writerow([r.token_id, repr(r.mean_activation), r.occurrences])
