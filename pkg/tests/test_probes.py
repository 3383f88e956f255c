import itertools
import json

import numpy as np
import pytest

from conftest import blobs
from gradcheck import check, relu_pattern
from sparseprobe import probes
from sparseprobe.metrics import auc
from sparseprobe.probes import grids
from sparseprobe.probes.base import SingleClassError
from sparseprobe.probes.gbt import build_tree, train_gbt
from sparseprobe.probes.knn import train_knn
from sparseprobe.probes.logreg import UNREGULARIZED_C, objective, train_logreg
from sparseprobe.probes.mlp import forward, init_params, loss_and_grad, train_mlp
from sparseprobe.probes.pca import principal_components, train_pca_reg


# ----------------------------------------------------------------- logistic regression


def test_separable_large_c_auc_one(rng):
    X, y = blobs(60, 2, rng, gap=6.0)
    for reg in ("l1", "l2"):
        m = train_logreg(X, y, reg, 1e5)
        assert auc(probes.score(m, X), y) == 1.0


def test_shrinkage_monotone(rng):
    X = rng.standard_normal((80, 6))
    y = (rng.random(80) < 0.5).astype(int)
    for reg in ("l1", "l2"):
        strong = train_logreg(X, y, reg, 1e-5)
        weak = train_logreg(X, y, reg, 1e5)
        assert np.linalg.norm(strong.coef) < np.linalg.norm(weak.coef)


@pytest.mark.parametrize("reg", ["l1", "l2"])
def test_optimum_beats_random_search(reg, rng):
    X = rng.standard_normal((20, 3))
    y = (X[:, 0] + rng.normal(0, 1.0, 20) > 0).astype(float)
    lam = 1.0
    m = train_logreg(X, y, reg, 1.0 / lam, standardize=False)
    best = objective(X, y, m.coef, m.intercept, lam, reg)
    cand = m.coef + rng.normal(0, 0.5, size=(10000, 3))
    cb = m.intercept + rng.normal(0, 0.5, size=10000)
    wide = rng.normal(0, 3.0, size=(10000, 4))
    for w, b in itertools.chain(zip(cand, cb), ((r[:3], r[3]) for r in wide)):
        assert best <= objective(X, y, w, b, lam, reg) + 1e-9


def test_l1_produces_exact_zeros(rng):
    X = rng.standard_normal((100, 10))
    y = (X[:, 0] > 0).astype(int)
    m = train_logreg(X, y, "l1", 0.05)
    assert np.sum(m.coef == 0) >= 5
    assert m.coef[0] != 0


def test_score_definition(rng):
    X, y = blobs(40, 3, rng)
    m = train_logreg(X, y, "l2", 1.0)
    Xs = (X - m.standardizer.mean) / m.standardizer.scale
    np.testing.assert_allclose(probes.score(m, X), Xs @ m.coef + m.intercept, rtol=1e-12)


def test_single_class_rejected(rng):
    with pytest.raises(SingleClassError):
        train_logreg(rng.standard_normal((5, 2)), np.ones(5))


def test_rank_invariance_of_auc(rng):
    X, y = blobs(50, 2, rng, gap=0.5)
    s = probes.score(train_logreg(X, y, "l2", 1.0), X)
    assert auc(s, y) == auc(np.exp(s) * 3 + 1, y)


# ------------------------------------------------------------------------------ PCA


def test_components_match_eigensolver(rng):
    X = rng.standard_normal((50, 10)) @ rng.standard_normal((10, 10))
    comps, var = principal_components(X, 10)
    Xc = X - X.mean(axis=0)
    vals, vecs = np.linalg.eig(Xc.T @ Xc / 50)
    order = np.argsort(-vals.real)
    for i, j in enumerate(order):
        ref = vecs[:, j].real
        assert min(np.abs(comps[i] - ref).max(), np.abs(comps[i] + ref).max()) < 1e-8
        assert var[i] == pytest.approx(vals[j].real, rel=1e-9)


def test_rank_one_projection_keeps_variance(rng):
    X = np.outer(rng.standard_normal(30), rng.standard_normal(5))
    comps, var = principal_components(X, 1)
    Xc = X - X.mean(axis=0)
    proj = Xc @ comps.T
    assert np.sum(proj**2) == pytest.approx(np.sum(Xc**2), rel=1e-10)


def test_full_components_equal_plain_logreg(rng):
    X = rng.standard_normal((60, 4))
    y = (X @ [1.0, -0.5, 0.2, 0.0] + rng.normal(0, 1, 60) > 0).astype(int)
    pca = train_pca_reg(X, y, 4)
    plain = train_logreg(X, y, "l2", UNREGULARIZED_C)
    Xt = rng.standard_normal((200, 4))
    yt = (Xt[:, 0] > 0).astype(int)
    assert auc(probes.score(pca, Xt), yt) == pytest.approx(auc(probes.score(plain, Xt), yt), abs=1e-6)


def test_pca_component_cap(rng):
    X, y = blobs(10, 20, rng)
    with pytest.raises(ValueError):
        train_pca_reg(X, y, 11)


# ------------------------------------------------------------------------------ KNN


def test_knn_exact_point_and_global_rate(rng):
    X, y = blobs(30, 3, rng)
    m1 = train_knn(X, y, 1)
    np.testing.assert_array_equal(probes.score(m1, X), y)
    mn = train_knn(X, y, 30)
    np.testing.assert_allclose(probes.score(mn, rng.standard_normal((5, 3))), y.mean())


def test_knn_neighbors_brute_force(rng):
    X = rng.standard_normal((30, 4))
    y = np.arange(30) % 2
    m = train_knn(X, y, 5)
    Q = rng.standard_normal((10, 4))
    Xs, Qs = m.standardizer(X), m.standardizer(Q)
    for q, got in zip(Qs, m.neighbors(Q)):
        dists = [(sum((q[t] - x[t]) ** 2 for t in range(4)), i) for i, x in enumerate(Xs)]
        assert got.tolist() == [i for _, i in sorted(dists)[:5]]


def test_knn_all_positive_neighbours():
    X = np.array([[0.0], [0.1], [0.2], [5.0], [5.1]])
    y = np.array([1, 1, 1, 0, 0])
    assert probes.score(train_knn(X, y, 3), [[0.05]])[0] == 1.0


# ------------------------------------------------------------------------------ GBT


def test_single_stump_separates(rng):
    X = rng.standard_normal((40, 3))
    y = (X[:, 1] > 0.2).astype(int)
    m = train_gbt(X, y, {"n_estimators": 1, "max_depth": 1, "learning_rate": 1.0, "reg_lambda": 0.0})
    assert auc(probes.score(m, X), y) == 1.0


def test_zero_learning_rate_is_constant(rng):
    X, y = blobs(40, 3, rng)
    m = train_gbt(X, y, {"n_estimators": 5, "learning_rate": 0.0})
    s = probes.score(m, X)
    np.testing.assert_allclose(s, m.base_score)
    assert auc(s, y) == 0.5


def best_stump_logloss(X, y):
    """Exhaustive stump oracle: every feature, every midpoint, MLE leaf log-odds."""
    def side_loss(ys):
        if len(ys) == 0:
            return 0.0
        p = ys.mean()
        if p in (0.0, 1.0):
            return 0.0
        return -np.sum(ys * np.log(p) + (1 - ys) * np.log(1 - p))

    best = side_loss(y)
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for t in (vals[1:] + vals[:-1]) / 2:
            left = X[:, j] < t
            best = min(best, side_loss(y[left]) + side_loss(y[~left]))
    return best / len(y)


def test_boosting_beats_best_stump(rng):
    X = rng.standard_normal((40, 3))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0.3)).astype(float)
    _, losses = train_gbt(X, y, {"n_estimators": 5, "max_depth": 2, "learning_rate": 1.0,
                                 "reg_lambda": 1e-3, "min_child_weight": 0.0}, track_loss=True)
    assert losses[-1] <= best_stump_logloss(X, y)


def test_tree_split_matches_exhaustive_gain(rng):
    X = rng.standard_normal((25, 2))
    g = rng.standard_normal(25)
    h = rng.random(25) + 0.1
    tree = build_tree(X, g, h, max_depth=1, reg_lambda=1.0, reg_alpha=0.0, min_child_weight=0.0)
    best = (-np.inf, None)
    for j in range(2):
        vals = np.unique(X[:, j])
        for t in (vals[1:] + vals[:-1]) / 2:
            L = X[:, j] < t
            gain = g[L].sum() ** 2 / (h[L].sum() + 1) + g[~L].sum() ** 2 / (h[~L].sum() + 1)
            if gain > best[0] + 1e-12:
                best = (gain, (j, t))
    j, t = best[1]
    assert tree.feature[0] == j
    left = X[:, j] < t
    np.testing.assert_array_equal(X[:, j] < tree.threshold[0], left)
    np.testing.assert_allclose(tree.predict(X[left][:1]), -g[left].sum() / (h[left].sum() + 1))


def test_gbt_loss_decreases(rng):
    X, y = blobs(80, 4, rng, gap=1.0)
    _, losses = train_gbt(X, y, {"n_estimators": 20}, track_loss=True)
    assert np.all(np.diff(losses) <= 1e-12)


# ------------------------------------------------------------------------------ MLP


@pytest.mark.parametrize("depth,width", list(itertools.product((1, 2, 3), (16, 32, 64))))
def test_mlp_gradients(depth, width):
    rng = np.random.default_rng(depth * 100 + width)
    X = rng.standard_normal((8, 4))
    y = (rng.random(8) < 0.5).astype(float)
    params = init_params([4] + [width] * depth + [1], rng)
    _, grads = loss_and_grad(params, X, y, 1e-2)
    worst, checked, skipped = check(lambda: loss_and_grad(params, X, y, 1e-2)[0], params, grads,
                                    lambda: relu_pattern(params, X))
    assert worst < 1e-4
    assert skipped < 0.05 * (checked + skipped)


def test_mlp_learns_xor():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    m = train_mlp(X, y, {"depth": 1, "width": 16, "learning_rate": 1e-2, "alpha": 0.0}, epochs=2000)
    assert auc(probes.score(m, X), y) == 1.0


def test_zero_epoch_mlp_is_chance(rng):
    aucs = []
    for s in range(20):
        X = rng.standard_normal((100, 5))
        y = np.arange(100) % 2
        m = train_mlp(X, y, seed=s, epochs=0)
        aucs.append(auc(probes.score(m, X), y))
    assert abs(np.mean(aucs) - 0.5) < 0.05


def test_forward_matches_loss_path(rng):
    params = init_params([3, 5, 1], rng)
    X = rng.standard_normal((4, 3))
    h = np.maximum(X @ params[0] + params[1], 0) @ params[2] + params[3]
    np.testing.assert_allclose(forward(params, X), h[:, 0])


# ---------------------------------------------------------------- grids and dispatch


def test_grids_match_published_ranges():
    c = [g["c"] for g in grids.logreg_grid().candidates]
    assert len(c) == 10 and c[0] == pytest.approx(1e5) and c[-1] == pytest.approx(1e-5)
    pca = [g["n_components"] for g in grids.pca_grid(500, 1000).candidates]
    assert pca[0] == 1 and pca[-1] == 100
    assert [g["n_components"] for g in grids.pca_grid(3, 50).candidates][-1] == 3
    knn = [g["n_neighbors"] for g in grids.knn_grid(30).candidates]
    assert knn[0] == 1 and knn[-1] == 29 and knn == sorted(set(knn))
    for hp in grids.gbt_grid(1).candidates:
        assert hp["n_estimators"] in (50, 100, 150, 200, 250)
        assert 2 <= hp["max_depth"] <= 5 and 1 <= hp["min_child_weight"] <= 9
        assert 1e-3 <= hp["learning_rate"] <= 1e-1
        assert 0.7 <= hp["subsample"] <= 1.0 and 0.7 <= hp["colsample_bytree"] <= 1.0
        assert 1e-3 <= hp["reg_alpha"] <= 10 and 1e-3 <= hp["reg_lambda"] <= 10
    for hp in grids.mlp_grid(1).candidates:
        assert hp["depth"] in (1, 2, 3) and hp["width"] in (16, 32, 64)
        assert any(np.isclose(hp["learning_rate"], v) for v in np.logspace(-4, -2, 5))
        assert any(np.isclose(hp["alpha"], v) for v in np.logspace(-5, -2, 5))
    assert grids.gbt_grid(3) == grids.gbt_grid(3)


@pytest.mark.parametrize("family,hp", [
    ("logreg", {"reg": "l1", "c": 1.0}),
    ("pca", {"n_components": 2}),
    ("knn", {"n_neighbors": 3}),
    ("gbt", {"n_estimators": 10, "max_depth": 2, "subsample": 0.8, "colsample_bytree": 0.8}),
    ("mlp", {"depth": 2, "width": 16, "learning_rate": 1e-2, "alpha": 1e-4}),
])
def test_serialization_round_trip(family, hp, rng):
    X, y = blobs(60, 4, rng)
    m = probes.train(family, X, y, hp, seed=1)
    back = probes.loads(json.dumps(json.loads(probes.dumps(m))))
    assert back.family == family
    np.testing.assert_array_equal(probes.score(back, X), probes.score(m, X))
    assert auc(probes.score(m, X), y) > 0.9


def test_seeded_training_deterministic(rng):
    X, y = blobs(60, 4, rng)
    for family, hp in (("gbt", {"n_estimators": 10, "subsample": 0.8}), ("mlp", {})):
        a = probes.score(probes.train(family, X, y, hp, seed=5), X)
        b = probes.score(probes.train(family, X, y, hp, seed=5), X)
        np.testing.assert_array_equal(a, b)
