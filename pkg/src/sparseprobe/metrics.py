"""AUC, size-adaptive cross-validation plans and validation-AUC hyperparameter search."""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import probes
from ._util import stratified_order
from .tensor_io import ActivationTensor

log = logging.getLogger(__name__)

TRAIN_ON_ALL = "TrainOnAll"
LEAVE_TWO_OUT = "LeaveTwoOut"
SIX_FOLD = "SixFold"
HOLD_OUT_20 = "HoldOut20"


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank sum (ties count one half)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class CVPlan:
    kind: str
    folds: tuple  # ((train_idx, val_idx), ...) relative to the training pool

    @property
    def n_folds(self) -> int:
        return len(self.folds)


def cv_kind(n: int) -> str:
    if n < 2:
        raise ValueError("cross-validation needs n >= 2")
    if n <= 3:
        return TRAIN_ON_ALL
    if n <= 12:
        return LEAVE_TWO_OUT
    if n <= 128:
        return SIX_FOLD
    return HOLD_OUT_20


def make_cv_plan(n: int, seed: int = 0, labels=None) -> CVPlan:
    """Build the validation plan for a training pool of ``n`` examples.

    With ``labels`` the six folds and the 20% hold-out are class-stratified.
    """
    kind = cv_kind(n)
    idx = np.arange(n)
    if kind == TRAIN_ON_ALL:
        return CVPlan(kind, ((idx, idx),))
    if kind == LEAVE_TWO_OUT:
        folds = []
        for i, j in itertools.combinations(range(n), 2):
            held = np.array([i, j])
            folds.append((np.delete(idx, held), held))
        return CVPlan(kind, tuple(folds))
    rng = np.random.default_rng(seed)
    order = stratified_order(labels, rng) if labels is not None else rng.permutation(n)
    if kind == SIX_FOLD:
        fold_of = np.empty(n, dtype=np.int64)
        fold_of[order] = np.arange(n) % 6
        folds = tuple(
            (np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)) for f in range(6)
        )
        return CVPlan(kind, folds)
    n_val = int(round(0.2 * n))
    val = np.sort(order[:n_val])
    train = np.sort(order[n_val:])
    return CVPlan(kind, ((train, val),))


def holdout_plan(train_idx, val_idx) -> CVPlan:
    """A HoldOut20 plan from an existing train/validation partition."""
    return CVPlan(HOLD_OUT_20, ((np.asarray(train_idx), np.asarray(val_idx)),))


@dataclass
class EvalRecord:
    method_id: str
    auc_val: float
    auc_test: float
    family: str = "logreg"
    feature_source: str = "act"  # "act" or "sae"
    pooling: str = "last"
    k: int | None = None
    width: int | None = None
    l0: float | None = None
    hyperparams: dict = field(default_factory=dict)
    seed: int = 0
    dataset_id: str = ""
    regime: str = "standard"
    param: float | None = None
    manifest_hash: str = ""

    def __post_init__(self):
        for name in ("auc_val", "auc_test"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
            setattr(self, name, v)

    @property
    def is_sae(self) -> bool:
        return self.feature_source == "sae"

    def to_dict(self) -> dict:
        return asdict(self)


class HyperparamSelectionError(RuntimeError):
    def __init__(self, causes: dict):
        self.causes = causes
        super().__init__(f"every hyperparameter candidate failed: {causes}")


def _rows(X, idx):
    return X.take(idx) if isinstance(X, ActivationTensor) else X[idx]


def _fold_auc(family, hp, X, y, train, val, seed, fit=None):
    if fit is None:
        model = probes.train(family, X[train], y[train], hp, seed=seed)
        return auc(probes.score(model, X[val]), y[val])
    scorer = fit(_rows(X, train), y[train], hp, seed)
    return auc(scorer(_rows(X, val)), y[val])


def evaluate_candidate(family, hp, X, y, plan: CVPlan, seed: int = 0, fit=None) -> float:
    """Mean validation AUC of one candidate over the plan's usable folds.

    ``fit(X_train, y_train, hp, seed)`` may replace the probe-family trainer; it
    must return a callable mapping features to scores.
    """
    if not isinstance(X, ActivationTensor):
        X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    aucs = []
    skipped = 0
    for train, val in plan.folds:
        if len(np.unique(y[train])) < 2 or len(np.unique(y[val])) < 2:
            skipped += 1
            continue
        aucs.append(_fold_auc(family, hp, X, y, train, val, seed, fit))
    if skipped:
        log.warning("%s %s: skipped %d single-class folds of %d", family, hp, skipped, plan.n_folds)
    if not aucs:
        raise ValueError(f"all {plan.n_folds} folds are single-class")
    return float(np.mean(aucs))


def select_hyperparams(family, grid, X, y, plan: CVPlan, seed: int = 0):
    """Return ``(best_hp, auc_val)``; ties go to the earlier grid entry."""
    candidates = grid.candidates if hasattr(grid, "candidates") else tuple(grid)
    if not candidates:
        raise ValueError("empty hyperparameter grid")
    best, best_auc = None, -np.inf
    causes = {}
    for i, hp in enumerate(candidates):
        try:
            val = evaluate_candidate(family, hp, X, y, plan, seed)
        except (ValueError, np.linalg.LinAlgError) as exc:
            causes[i] = f"{type(exc).__name__}: {exc}"
            continue
        if val > best_auc:
            best, best_auc = hp, val
    if best is None:
        raise HyperparamSelectionError(causes)
    return dict(best), float(best_auc)
