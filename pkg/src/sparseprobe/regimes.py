"""Difficulty regimes (scarcity, imbalance, label noise, covariate shift) and quiver selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._util import stratified_order
from .metrics import EvalRecord
from .tensor_io import ActivationTensor, LabeledDataset, Split, concat_tensors

KINDS = ("standard", "scarcity", "imbalance", "noise", "shift")
HOLDOUT_ABOVE = 128


def scarcity_grid() -> list[int]:
    vals = [int(v) for v in np.round(np.geomspace(2, 1024, 20))]
    for i in range(1, len(vals)):
        if vals[i] <= vals[i - 1]:
            vals[i] = vals[i - 1] + 1
    return vals


def imbalance_grid() -> list[float]:
    return [round(float(v), 10) for v in np.linspace(0.05, 0.95, 19)]


def noise_grid() -> list[float]:
    return [round(float(v), 10) for v in np.linspace(0.0, 0.5, 11)]


def default_grid(kind: str) -> list:
    return {
        "standard": [None],
        "scarcity": scarcity_grid(),
        "imbalance": imbalance_grid(),
        "noise": noise_grid(),
        "shift": [None],
    }[kind]


class InfeasibleRegimeError(ValueError):
    pass


@dataclass(frozen=True)
class RegimeSpec:
    """One regime point.

    ``value`` is the training size (scarcity), positive ratio (imbalance) or
    flipped fraction (noise). ``ood`` carries the shifted test set for the
    covariate-shift regime as ``(features, targets)``.
    """

    kind: str = "standard"
    value: float | None = None
    seed: int = 0
    ood: tuple | None = field(default=None, repr=False, compare=False)
    n_train: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regime {self.kind!r}")
        v = self.value
        if self.kind == "scarcity" and not (v is not None and 2 <= v <= 1024 and float(v).is_integer()):
            raise ValueError("scarcity n must be an integer in [2, 1024]")
        if self.kind == "imbalance" and not (v is not None and 0.05 - 1e-12 <= v <= 0.95 + 1e-12):
            raise ValueError("imbalance ratio must lie in [0.05, 0.95]")
        if self.kind == "noise" and not (v is not None and 0.0 <= v <= 0.5):
            raise ValueError("noise fraction must lie in [0, 0.5]")
        if self.kind == "shift" and self.ood is None:
            raise ValueError("covariate shift needs an OOD test set")

    @property
    def label(self) -> str:
        return self.kind if self.value is None else f"{self.kind}={self.value:g}"


def _pool_split(indices, targets, rng) -> tuple[np.ndarray, np.ndarray]:
    """Split a training pool: 80/20 stratified hold-out above 128 examples, else all-train."""
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) <= HOLDOUT_ABOVE:
        return np.sort(indices), np.array([], dtype=np.int64)
    order = indices[stratified_order(targets[indices], rng)]
    n_val = int(round(0.2 * len(indices)))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _sample_classes(pool, targets, n_pos, n_neg, rng) -> np.ndarray:
    pos = pool[targets[pool] == 1]
    neg = pool[targets[pool] == 0]
    if n_pos > len(pos) or n_neg > len(neg):
        raise InfeasibleRegimeError(
            f"need {n_pos} positives / {n_neg} negatives, have {len(pos)} / {len(neg)}"
        )
    chosen = np.concatenate(
        [rng.choice(pos, size=n_pos, replace=False), rng.choice(neg, size=n_neg, replace=False)]
    )
    return np.sort(chosen)


def _scarcity(data: LabeledDataset, spec: RegimeSpec, rng) -> LabeledDataset:
    n = int(spec.value)
    pool = np.sort(data.split.pool)
    if n > len(pool):
        raise InfeasibleRegimeError(f"scarcity n={n} exceeds training pool of {len(pool)}")
    if n == len(pool):
        return data
    t = data.targets
    n_pos_avail = int((t[pool] == 1).sum())
    n_neg_avail = len(pool) - n_pos_avail
    n_pos = n // 2 + (n % 2) * int(rng.integers(2))
    n_pos = min(max(n_pos, n - n_neg_avail), n_pos_avail)
    chosen = _sample_classes(pool, t, n_pos, n - n_pos, rng)
    train, val = _pool_split(chosen, t, rng)
    return data.with_(split=Split(train, val, data.split.test))


def _imbalance(data: LabeledDataset, spec: RegimeSpec, rng) -> LabeledDataset:
    ratio = float(spec.value)
    t = data.targets
    pool = np.sort(data.split.pool)
    p, q = int((t[pool] == 1).sum()), int((t[pool] == 0).sum())
    n_train = spec.n_train or min(len(pool), math.floor(min(p, q) / 0.95))
    n_pos = int(round(ratio * n_train))
    if n_pos < 1 or n_train - n_pos < 1:
        raise InfeasibleRegimeError(f"ratio {ratio} leaves a class empty at n={n_train}")
    chosen = _sample_classes(pool, t, n_pos, n_train - n_pos, rng)
    test = data.split.test
    tp, tq = int((t[test] == 1).sum()), int((t[test] == 0).sum())
    n_test = min(len(test), math.floor(min(tp, tq) / 0.95))
    tpos = int(round(ratio * n_test))
    if tpos < 1 or n_test - tpos < 1:
        raise InfeasibleRegimeError(f"ratio {ratio} leaves a test class empty at n={n_test}")
    new_test = _sample_classes(test, t, tpos, n_test - tpos, rng)
    train, val = _pool_split(chosen, t, rng)
    return data.with_(split=Split(train, val, new_test))


def noise_flip_indices(pool, fraction: float, seed: int) -> np.ndarray:
    """Indices whose labels get flipped: floor(fraction * |pool|) drawn without replacement."""
    pool = np.sort(np.asarray(pool, dtype=np.int64))
    n_flip = math.floor(fraction * len(pool))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(pool, size=n_flip, replace=False))


def _noise(data: LabeledDataset, spec: RegimeSpec) -> LabeledDataset:
    flips = noise_flip_indices(data.split.pool, float(spec.value), spec.seed)
    if len(flips) == 0:
        return data
    targets = data.targets.copy()
    targets[flips] = 1 - targets[flips]
    meta = dict(data.meta, flipped=flips.tolist())
    return data.with_(targets=targets, meta=meta)


def _shift(data: LabeledDataset, spec: RegimeSpec) -> LabeledDataset:
    ood_x, ood_y = spec.ood
    ood_y = np.asarray(ood_y, dtype=np.int64)
    n = data.n_examples
    if isinstance(data.features, ActivationTensor):
        if not isinstance(ood_x, ActivationTensor):
            ood_x = ActivationTensor(np.asarray(ood_x))
        feats = concat_tensors(data.features, ood_x)
    else:
        feats = np.concatenate([data.features, np.asarray(ood_x, dtype=np.float64)])
    targets = np.concatenate([data.targets, ood_y])
    test = np.arange(n, n + len(ood_y))
    return data.with_(features=feats, targets=targets, split=Split(data.split.train, data.split.val, test))


def apply_regime(data: LabeledDataset, spec: RegimeSpec) -> LabeledDataset:
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "standard":
        return data
    if spec.kind == "scarcity":
        return _scarcity(data, spec, rng)
    if spec.kind == "imbalance":
        return _imbalance(data, spec, rng)
    if spec.kind == "noise":
        return _noise(data, spec)
    return _shift(data, spec)


@dataclass
class QuiverResult:
    chosen: EvalRecord
    index: int
    records: list
    tie_break_applied: bool

    @property
    def method_id(self) -> str:
        return self.chosen.method_id

    @property
    def auc_test(self) -> float:
        return self.chosen.auc_test


def _tie_key(rec: EvalRecord, position: int):
    width = rec.width if (rec.is_sae and rec.width is not None) else math.inf
    k = rec.k if (rec.is_sae and rec.k is not None) else 0
    return (0 if rec.is_sae else 1, width, -k, position)


def quiver_select(records) -> QuiverResult:
    """Pick the record with the highest validation AUC and report its test AUC.

    Ties prefer SAE probes, then the smallest SAE width, then the largest k,
    then the earliest record.
    """
    records = list(records)
    if not records:
        raise ValueError("quiver needs at least one record")
    best = max(r.auc_val for r in records)
    tied = [i for i, r in enumerate(records) if r.auc_val == best]
    idx = min(tied, key=lambda i: _tie_key(records[i], i))
    return QuiverResult(records[idx], idx, records, len(tied) > 1)


def head_to_head(a: EvalRecord, b: EvalRecord) -> float:
    """Signed test-AUC difference ``a - b`` for records on the same dataset and regime point."""
    if (a.dataset_id, a.regime, a.param) != (b.dataset_id, b.regime, b.param):
        raise ValueError(
            f"records differ in dataset/regime: {(a.dataset_id, a.regime, a.param)} "
            f"vs {(b.dataset_id, b.regime, b.param)}"
        )
    return a.auc_test - b.auc_test
