"""Acceptance suite: one test per criterion, named ``test_criterion_NN_*``.

A PASS/FAIL line per criterion is printed in the pytest terminal summary.
"""

import json
import math
import random
import struct
import time
import warnings
from collections import defaultdict

import numpy as np
import pytest

from conftest import blobs
from gradcheck import check, relu_pattern
from sparseprobe import probes
from sparseprobe.diagnostics import mine_disagreements, top_activating_tokens
from sparseprobe.harness import ExperimentManifest, read_records, run_experiment
from sparseprobe.metrics import EvalRecord, auc, cv_kind, holdout_plan, select_hyperparams
from sparseprobe.multitoken import attn_logits, attn_loss_and_grad, pool_activations, train_attn_probe
from sparseprobe.probes.mlp import init_params, loss_and_grad
from sparseprobe.regimes import imbalance_grid, noise_grid, quiver_select, scarcity_grid
from sparseprobe.sae import binarize, encode, pool_latents, select_top_k
from sparseprobe.synth import calibrate_oracle, generate_world, sample_dataset, write_fixture
from sparseprobe.tensor_io import (
    ActivationTensor,
    BadMagicError,
    TruncatedPayloadError,
    VersionMismatchError,
    read_tensor,
    write_tensor,
)


def pair_count(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def test_criterion_01_auc_matches_pair_counting():
    rng = np.random.default_rng(1)
    cases = []
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        scores = rng.integers(0, int(rng.integers(2, 30)), n) / 7.0  # coarse values force ties
        cases.append((scores, labels))
    start = time.perf_counter()
    got = [auc(s, l) for s, l in cases]
    elapsed = time.perf_counter() - start
    for g, (s, l) in zip(got, cases):
        assert abs(g - pair_count(s, l)) <= 1e-12
    assert elapsed < 10.0


def sort_all(z, y, k):
    w = z.shape[1]
    pos, neg = z[y == 1], z[y == 0]
    stat = [abs(math.fsum(pos[:, j]) / len(pos) - math.fsum(neg[:, j]) / len(neg)) for j in range(w)]
    return [j for _, j in sorted((-s, j) for j, s in enumerate(stat))][:k]


def test_criterion_02_selection_matches_full_sort():
    rng = np.random.default_rng(2)
    for i in range(100):
        n, w = int(rng.integers(4, 120)), int(rng.integers(1, 513))
        if i % 2:
            z = rng.exponential(1.0, (n, w)) * (rng.random((n, w)) < 0.2)
        else:
            z = rng.integers(0, 3, (n, w)).astype(float)
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        k = int(rng.integers(1, w + 1))
        assert select_top_k(z, y, k).indices.tolist() == sort_all(z, y, k)


def test_criterion_03_protocol_constants():
    s = scarcity_grid()
    assert (s[0], s[-1], len(s)) == (2, 1024, 20)
    im = imbalance_grid()
    assert (len(im), im[0], im[-1]) == (19, 0.05, 0.95)
    nz = noise_grid()
    assert (len(nz), nz[0], nz[-1]) == (11, 0.0, 0.5)
    assert [cv_kind(n) for n in (3, 4, 12, 13, 128, 129)] == [
        "TrainOnAll", "LeaveTwoOut", "LeaveTwoOut", "SixFold", "SixFold", "HoldOut20"]


def test_criterion_04_fixture_end_to_end():
    start = time.perf_counter()
    world = generate_world(d_model=64, w_true=256, seed=0, noise_sigma=0.05, target_features=(0,))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sae = calibrate_oracle(world).sae
    d = sample_dataset(world, 1024, seed=1).dataset
    z = encode(d.features, sae)
    pool, test, y = d.split.pool, d.split.test, d.targets
    plan = holdout_plan(np.arange(len(d.split.train)), np.arange(len(d.split.train), len(pool)))
    results = {}
    for k in (1, 16):
        sel = select_top_k(z[pool], y[pool], k)
        X = z[:, sel.indices]
        hp, _ = select_hyperparams("logreg", probes.default_grid("logreg", 0, 0, reg="l1"), X[pool], y[pool], plan)
        model = probes.train("logreg", X[pool], y[pool], hp)
        results[k] = (sel.indices.tolist(), auc(probes.score(model, X[test]), y[test]))
    elapsed = time.perf_counter() - start
    assert results[1][0] == [0]
    assert results[16][1] >= 0.99
    assert elapsed < 60.0


@pytest.fixture(scope="module")
def default_fixture(tmp_path_factory):
    root = tmp_path_factory.mktemp("default_fixture")
    write_fixture(root, seed=0)
    return root


def test_criterion_05_label_noise_sanity(default_fixture, tmp_path):
    doc = json.loads((default_fixture / "experiment.json").read_text())
    doc["methods"] = [
        {"family": "logreg", "features": "act"},
        {"family": "logreg", "features": "sae", "sae": "oracle", "k": 16},
    ]
    doc["regimes"] = [{"kind": "noise"}]
    start = time.perf_counter()
    run_experiment(ExperimentManifest.from_json(doc, base_dir=default_fixture), out=tmp_path / "noise")
    elapsed = time.perf_counter() - start
    doc["regimes"] = [{"kind": "standard"}]
    run_experiment(ExperimentManifest.from_json(doc, base_dir=default_fixture), out=tmp_path / "std")
    noise = read_records(tmp_path / "noise")
    assert len(noise) == 22
    standard = {r.method_id: r for r in read_records(tmp_path / "std")}
    for r in noise:
        if r.param == 0.5:
            assert 0.40 <= r.auc_test <= 0.60, (r.method_id, r.auc_test)
        if r.param == 0.0:
            s = standard[r.method_id]
            assert (r.auc_val, r.auc_test, r.hyperparams) == (s.auc_val, s.auc_test, s.hyperparams)
    assert elapsed < 300.0


def _record(r, i):
    sae = r.random() < 0.5
    return EvalRecord(f"m{i}", r.choice([0.6, 0.8, 1.0, round(r.random(), 3)]), r.random(),
                      feature_source="sae" if sae else "act",
                      width=r.choice([16384, 65536, 131072]) if sae else None,
                      k=r.choice([1, 16, 128]) if sae else None)


def test_criterion_06_quiver_protocol():
    r = random.Random(6)
    for _ in range(200):
        recs = [_record(r, i) for i in range(r.randint(1, 15))]
        q = quiver_select(recs)
        best = max(x.auc_val for x in recs)
        assert q.chosen.auc_val == best
        tied = [x for x in recs if x.auc_val == best]
        assert q.tie_break_applied == (len(tied) > 1)
        if any(x.is_sae for x in tied):
            assert q.chosen.is_sae
            assert q.chosen.width == min(x.width for x in tied if x.is_sae)
            same_w = [x for x in tied if x.is_sae and x.width == q.chosen.width]
            assert q.chosen.k == max(x.k for x in same_w)
    base = EvalRecord("base", 1.0, 0.7)
    sae_wide = EvalRecord("wide", 1.0, 0.8, feature_source="sae", width=131072, k=128)
    sae_narrow = EvalRecord("narrow", 1.0, 0.9, feature_source="sae", width=16384, k=16)
    sae_narrow_big_k = EvalRecord("narrow128", 1.0, 0.6, feature_source="sae", width=16384, k=128)
    assert quiver_select([base, sae_wide]).method_id == "wide"
    assert quiver_select([base, sae_wide, sae_narrow]).method_id == "narrow"
    assert quiver_select([sae_narrow, sae_narrow_big_k, base]).method_id == "narrow128"


def test_criterion_07_gradient_checks():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((8, 4))
    y = (rng.random(8) < 0.5).astype(float)
    for depth in (1, 2, 3):
        for width in (16, 32, 64):
            params = init_params([4] + [width] * depth + [1], rng)
            _, grads = loss_and_grad(params, X, y, 1e-3)
            worst, checked, skipped = check(lambda: loss_and_grad(params, X, y, 1e-3)[0], params, grads,
                                            lambda: relu_pattern(params, X))
            assert worst < 1e-4, (depth, width, worst)
            assert skipped < 0.05 * (checked + skipped)
    Xt = rng.standard_normal((6, 5, 4))
    valid = np.ones((6, 5), bool)
    valid[1, :3] = False
    q, v, b = rng.standard_normal(4), rng.standard_normal(4), np.array([0.2])
    _, gq, gv, gb = attn_loss_and_grad(q, v, b[0], Xt, valid, y[:6], 1e-3)
    worst, _, _ = check(lambda: attn_loss_and_grad(q, v, b[0], Xt, valid, y[:6], 1e-3)[0],
                        [q, v, b], [gq, gv, np.array([gb])])
    assert worst < 1e-4


def test_criterion_08_single_token_degeneracy():
    world = generate_world(32, 64, seed=8)
    d = sample_dataset(world, 600, n_tokens=1, seed=9).dataset
    x = d.features
    a, b, c = (pool_activations(x, m) for m in ("last", "mean", "max"))
    assert a.tobytes() == b.tobytes() == c.tobytes()
    pool, test, y = d.split.pool, d.split.test, d.targets
    probe = train_attn_probe(x.take(pool), y[pool], seed=0)
    auc_attn = auc(attn_logits(probe, x.take(test)), y[test])
    lr = probes.train_logreg(a[pool], y[pool], "l2", 1.0)
    auc_lr = auc(probes.score(lr, a[test]), y[test])
    assert abs(auc_attn - auc_lr) <= 0.02


def test_criterion_09_binarization_contract():
    rng = np.random.default_rng(9)
    z = rng.exponential(1.0, (20, 6, 30))
    z[0, 0, 0] = 1.0
    z[0, :, 1] = 1.0
    pooled = pool_latents(z, np.full(20, 6), "max")
    out = binarize(pooled, 1.0)
    assert set(np.unique(out)) <= {0.0, 1.0}
    assert pooled[0, 1] == 1.0 and out[0, 1] == 0.0
    np.testing.assert_array_equal(out, (pooled > 1.0).astype(float))


def test_criterion_10_format_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    for i in range(100):
        n, t, d = (int(v) for v in rng.integers(1, 9, 3))
        data = (rng.standard_normal((n, t, d)) * 10.0 ** rng.integers(-3, 4)).astype(np.float32)
        x = ActivationTensor(data, rng.integers(1, t + 1, n))
        p = tmp_path / f"{i}.spba"
        write_tensor(x, p)
        y = read_tensor(p)
        assert y.data.tobytes() == data.tobytes()
        assert y.token_mask.tolist() == x.token_mask.tolist()
    raw = (tmp_path / "0.spba").read_bytes()
    bad = {"magic": (b"SPBX" + raw[4:], BadMagicError),
           "version": (raw[:4] + struct.pack("<I", 9) + raw[8:], VersionMismatchError),
           "truncated": (raw[:-2], TruncatedPayloadError),
           "header": (raw[:20], TruncatedPayloadError)}
    for name, (blob, err) in bad.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(err):
            read_tensor(tmp_path / name)


def test_criterion_11_diagnostics():
    rng = np.random.default_rng(11)
    X, y = blobs(120, 4, rng, gap=6.0)
    noisy = y.copy()
    noisy[42] = 1 - noisy[42]
    model = probes.train_logreg(X, noisy, "l2", 1.0)
    assert mine_disagreements(model, X, noisy, 5)[0].index == 42
    tokens = rng.standard_normal((3000, 4))
    ids = rng.integers(0, 50, 3000)
    rows = top_activating_tokens(model, tokens, ids, min_occurrences=1)
    s = probes.score(model, tokens)
    groups = defaultdict(list)
    for i, t in enumerate(ids):
        groups[int(t)].append(s[i])
    assert {r.token_id for r in rows} == set(groups)
    for r in rows:
        assert abs(r.mean_activation - sum(groups[r.token_id]) / len(groups[r.token_id])) <= 1e-10


def test_criterion_12_determinism(tmp_path):
    root = tmp_path / "fx"
    write_fixture(root, seed=12, n=240, n_ood=60, d_model=16, w_true=32, n_tokens=3)
    doc = {
        "datasets": ["dataset.json"],
        "saes": [{"id": "oracle", "path": "oracle.spsw", "width": 32, "l0": 1.1}],
        "methods": [
            {"family": "logreg"}, {"family": "pca"}, {"family": "knn"}, {"family": "gbt"},
            {"family": "mlp"}, {"family": "attention"}, {"family": "logreg", "pooling": "concat_pca"},
            {"family": "logreg", "features": "sae", "sae": "oracle", "k": 8, "pooling": "max"},
            {"family": "logreg", "features": "sae", "sae": "oracle", "k": 8, "pooling": "max", "binarize": 0.5},
        ],
        "regimes": [{"kind": "scarcity", "values": [20]}, {"kind": "imbalance", "values": [0.2]},
                    {"kind": "noise", "values": [0.1]}, {"kind": "shift"}],
        "seed": 12,
    }
    m = ExperimentManifest.from_json(doc, base_dir=root)
    first = run_experiment(m, out=tmp_path / "a")
    run_experiment(m, out=tmp_path / "b", workers=2)
    assert first["failed"] == 0
    a = {(r.method_id, r.regime, r.param): r for r in read_records(tmp_path / "a")}
    b = {(r.method_id, r.regime, r.param): r for r in read_records(tmp_path / "b")}
    assert a.keys() == b.keys() and len(a) == 36
    for key in a:
        assert abs(a[key].auc_val - b[key].auc_val) <= 1e-10
        assert abs(a[key].auc_test - b[key].auc_test) <= 1e-10
