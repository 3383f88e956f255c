"""Second-order gradient boosting on logistic loss with exact greedy splits.

Trees are grown level by level. For each level the rows of every column are kept
grouped by node and sorted by value inside each node, so all candidate splits
of all nodes are scored with one cumulative sum per level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._util import log_loss_from_logits, sigmoid
from .base import ProbeModel, Standardizer, check_binary, register

DEFAULTS = {
    "n_estimators": 100,
    "max_depth": 3,
    "learning_rate": 0.1,
    "subsample": 1.0,
    "colsample_bytree": 1.0,
    "reg_alpha": 0.0,
    "reg_lambda": 1.0,
    "min_child_weight": 1.0,
}


def _thresh_l1(G, alpha):
    if alpha == 0:
        return G
    return np.maximum(G - alpha, 0.0) + np.minimum(G + alpha, 0.0)


def _leaf_score(G, H, lam, alpha):
    t = _thresh_l1(G, alpha)
    denom = H + lam
    # an empty side with no L2 term contributes nothing
    return np.divide(t * t, denom, out=np.zeros_like(t * t, dtype=np.float64), where=denom > 0)


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                break
            r, nd = rows[inner], node[inner]
            go_left = X[r, feat[inner]] < self.threshold[nd]
            node[inner] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]


def build_tree(
    X, g, h, *, max_depth, reg_lambda, reg_alpha, min_child_weight, columns=None, order=None
) -> Tree:
    """Grow one regression tree on gradient/hessian statistics.

    ``order`` optionally supplies the per-column ascending row order of
    ``X[:, columns]``, saving the initial sort.
    """
    n, d = X.shape
    cols = np.arange(d) if columns is None else np.asarray(columns)
    Xc = X[:, cols]
    if order is None:
        order = np.argsort(Xc, axis=0, kind="stable")
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    level_nodes = [0]
    slot = np.zeros(n, dtype=np.int64)  # position of each row's node in level_nodes, -1 if finished
    for depth in range(max_depth + 1):
        n_slots = len(level_nodes)
        if n_slots == 0:
            break
        key_dtype = np.uint8 if n_slots < 255 else np.int64
        keys = np.where(slot >= 0, slot, n_slots).astype(key_dtype)[order]
        order = np.take_along_axis(order, np.argsort(keys, axis=0, kind="stable"), axis=0)
        counts = np.bincount(slot[slot >= 0], minlength=n_slots)
        starts = np.concatenate([[0], np.cumsum(counts)])
        Gtot = np.bincount(slot[slot >= 0], weights=g[slot >= 0], minlength=n_slots)
        Htot = np.bincount(slot[slot >= 0], weights=h[slot >= 0], minlength=n_slots)
        for s in range(n_slots):
            value[level_nodes[s]] = float(-_thresh_l1(Gtot[s], reg_alpha) / (Htot[s] + reg_lambda))
        if depth == max_depth:
            break
        m = starts[-1]
        active = order[:m]
        Gs = g[active]
        Hs = h[active]
        Vs = np.take_along_axis(Xc, active, axis=0)
        cG = np.cumsum(Gs, axis=0)
        cH = np.cumsum(Hs, axis=0)
        seg = np.repeat(np.arange(n_slots), counts)
        # each column's running total at the end of the previous segment
        startG = np.zeros((n_slots, cG.shape[1]))
        startH = np.zeros((n_slots, cH.shape[1]))
        if n_slots > 1:
            startG[1:] = cG[starts[1:-1] - 1]
            startH[1:] = cH[starts[1:-1] - 1]
        GL = cG - startG[seg]
        HL = cH - startH[seg]
        GT = Gtot[seg][:, None]
        HT = Htot[seg][:, None]
        GR = GT - GL
        HR = HT - HL
        last_in_seg = np.zeros(m, dtype=bool)
        last_in_seg[starts[1:] - 1] = True
        nxt = np.vstack([Vs[1:], Vs[-1:]])
        ok = (~last_in_seg)[:, None] & (Vs < nxt)
        ok &= (HL >= min_child_weight) & (HR >= min_child_weight)
        gain = (
            _leaf_score(GL, HL, reg_lambda, reg_alpha)
            + _leaf_score(GR, HR, reg_lambda, reg_alpha)
            - _leaf_score(GT, HT, reg_lambda, reg_alpha)
        )
        gain = np.where(ok, gain, -np.inf)
        new_level, new_slot = [], np.full(n, -1, dtype=np.int64)
        for s in range(n_slots):
            a, b = starts[s], starts[s + 1]
            if b - a < 2:
                continue
            block = gain[a:b]
            flat = int(np.argmax(block))
            best = block.flat[flat]
            if not best > 1e-12:
                continue
            i, j = divmod(flat, block.shape[1])
            lo, hi = Vs[a + i, j], Vs[a + i + 1, j]
            thr = lo + (hi - lo) / 2.0
            if not lo < thr <= hi:
                thr = hi
            node = level_nodes[s]
            feature[node] = int(cols[j])
            threshold[node] = float(thr)
            rows = active[a:b, 0]
            go_left = Xc[rows, j] < thr
            for child_rows in (rows[go_left], rows[~go_left]):
                cid = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
                new_slot[child_rows] = len(new_level)
                new_level.append(cid)
            left[node], right[node] = len(feature) - 2, len(feature) - 1
        level_nodes, slot = new_level, new_slot
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value),
    )


@register
@dataclass(frozen=True, eq=False)
class GBTProbe(ProbeModel):
    family = "gbt"
    base_score: float
    trees: list
    learning_rate: float

    def _decision(self, Xs):
        out = np.full(len(Xs), self.base_score)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(Xs)
        return out

    def to_dict(self) -> dict:
        doc = super().to_dict()
        doc["params"]["trees"] = {
            "list": [
                {"value": {k: getattr(t, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}}
                for t in self.trees
            ]
        }
        return doc

    def __post_init__(self):
        trees = [
            t if isinstance(t, Tree) else Tree(**{k: np.asarray(v) for k, v in t.items()})
            for t in self.trees
        ]
        object.__setattr__(self, "trees", trees)


def train_gbt(features, targets, h_p: dict | None = None, *, seed: int = 0, track_loss: bool = False):
    """Fit boosted trees. With ``track_loss`` also return the training log-loss after each round."""
    X, y = check_binary(features, targets)
    hp = {**DEFAULTS, **(h_p or {})}
    hp.pop("seed", None)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    rate = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    base = float(np.log(rate / (1 - rate)))
    lr = float(hp["learning_rate"])
    margin = np.full(n, base)
    trees, losses = [], [log_loss_from_logits(margin, y)]
    n_rows = max(1, int(round(hp["subsample"] * n)))
    n_cols = max(1, int(round(hp["colsample_bytree"] * d)))
    full_order = np.argsort(X, axis=0, kind="stable")
    for _ in range(int(hp["n_estimators"])):
        rows = np.sort(rng.choice(n, size=n_rows, replace=False)) if n_rows < n else np.arange(n)
        cols = np.sort(rng.choice(d, size=n_cols, replace=False)) if n_cols < d else np.arange(d)
        order = full_order[:, cols]
        if n_rows < n:
            local = np.full(n, -1, dtype=np.int64)
            local[rows] = np.arange(n_rows)
            mapped = local[order]
            order = mapped.T[mapped.T >= 0].reshape(len(cols), n_rows).T
        p = sigmoid(margin[rows])
        tree = build_tree(
            X[rows],
            p - y[rows],
            p * (1.0 - p),
            max_depth=int(hp["max_depth"]),
            reg_lambda=float(hp["reg_lambda"]),
            reg_alpha=float(hp["reg_alpha"]),
            min_child_weight=float(hp["min_child_weight"]),
            columns=cols,
            order=order,
        )
        trees.append(tree)
        margin = margin + lr * tree.predict(X)
        if track_loss:
            losses.append(log_loss_from_logits(margin, y))
    stored = {k: (v.item() if hasattr(v, "item") else v) for k, v in hp.items()}
    model = GBTProbe(stored, Standardizer.identity(d), base, trees, lr)
    return (model, losses) if track_loss else model
