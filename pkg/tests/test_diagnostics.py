from collections import defaultdict

import numpy as np
import pytest

from conftest import blobs
from sparseprobe import probes
from sparseprobe.diagnostics import mine_disagreements, top_activating_tokens, write_token_table
from sparseprobe.tensor_io import ActivationTensor, LabeledDataset, Split


def test_flipped_label_ranked_first(rng):
    X, y = blobs(80, 3, rng, gap=5.0)
    noisy = y.copy()
    noisy[17] = 1 - noisy[17]
    model = probes.train_logreg(X, noisy, "l2", 1.0)
    out = mine_disagreements(model, X, noisy, 5)
    assert out[0].index == 17 and out[0].label == noisy[17]


def test_exact_model_has_no_confident_disagreements(rng):
    X, y = blobs(60, 2, rng, gap=8.0)
    model = probes.train_logreg(X, y, "l2", 1e5)
    assert mine_disagreements(model, X, y, 10, min_confidence=0.5) == []


def test_ranking_matches_full_sort(rng):
    X = rng.standard_normal((40, 3))
    y = (rng.random(40) < 0.5).astype(int)
    model = probes.train_logreg(X, y, "l2", 1.0)
    out = mine_disagreements(model, X, y, 40)
    p = model.predict_proba(X)
    conf = [(-(1 - p[i] if y[i] == 1 else p[i]), i) for i in range(40)]
    assert [d.index for d in out] == [i for _, i in sorted(conf)]


def test_dataset_input_and_clamp(rng):
    X, y = blobs(12, 2, rng)
    data = LabeledDataset(ActivationTensor(X[:, None, :].astype(np.float32)), y,
                          Split(np.arange(8), np.array([], int), np.arange(8, 12)))
    model = probes.train_logreg(X, y, "l2", 1.0)
    with pytest.warns(UserWarning):
        out = mine_disagreements(model, data, None, 50)
    assert len(out) == 12


def test_token_table_group_by_oracle(rng, tmp_path):
    X, y = blobs(50, 4, rng)
    model = probes.train_logreg(X, y, "l2", 1.0)
    tokens = rng.standard_normal((500, 4))
    ids = rng.integers(0, 20, size=500)
    rows = top_activating_tokens(model, tokens, ids, min_occurrences=1)
    s = probes.score(model, tokens)
    groups = defaultdict(list)
    for i, t in enumerate(ids):
        groups[int(t)].append(s[i])
    assert len(rows) == len(groups)
    for r in rows:
        assert abs(r.mean_activation - sum(groups[r.token_id]) / len(groups[r.token_id])) < 1e-10
        assert r.occurrences == len(groups[r.token_id])
    assert all(a.mean_activation >= b.mean_activation for a, b in zip(rows, rows[1:]))
    write_token_table(rows, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "token_id,mean_activation,occurrences"


def test_token_table_small_cases(rng):
    X, y = blobs(20, 1, rng)
    model = probes.train_logreg(X, y, "l2", 1.0)
    rows = top_activating_tokens(model, np.ones((12, 1)), [3] * 12)
    assert len(rows) == 1 and rows[0].occurrences == 12
    w = model.coef[0] / model.standardizer.scale[0]
    hi, lo = (5.0, 1.0) if w > 0 else (1.0, 5.0)
    rows = top_activating_tokens(model, np.array([[hi]] * 10 + [[lo]] * 10), [1] * 10 + [2] * 10)
    assert [r.token_id for r in rows] == [1, 2]
    assert len(top_activating_tokens(model, np.ones((9, 1)), [3] * 9)) == 0


def test_token_table_needs_linear_probe(rng):
    X, y = blobs(20, 2, rng)
    with pytest.raises(TypeError):
        top_activating_tokens(probes.train_knn(X, y, 3), X, np.arange(20))
