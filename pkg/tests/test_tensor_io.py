import struct

import numpy as np
import pytest

from sparseprobe.tensor_io import (
    ActivationTensor,
    BadMagicError,
    DatasetManifest,
    ShapeMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
    concat_tensors,
    default_split,
    load_dataset,
    pool_tokens,
    read_labels,
    read_tensor,
    write_labels,
    write_tensor,
)


def test_file_size_for_tiny_tensor(tmp_path):
    p = tmp_path / "t.spba"
    write_tensor(ActivationTensor(np.zeros((1, 1, 2), np.float32)), p)
    # 32-byte header + 4 mask bytes + 8 payload bytes
    assert p.stat().st_size == 44


def test_round_trip_bit_exact(tmp_path, rng):
    data = rng.standard_normal((5, 3, 4)).astype(np.float32)
    x = ActivationTensor(data, np.array([3, 1, 2, 3, 1]))
    write_tensor(x, tmp_path / "x.spba")
    y = read_tensor(tmp_path / "x.spba")
    assert y == x
    assert y.data.tobytes() == data.tobytes()


def test_nan_rejected():
    with pytest.raises(ValueError):
        ActivationTensor(np.array([[[np.nan, 0.0]]], np.float32))


def test_mask_range_checked():
    with pytest.raises(ValueError):
        ActivationTensor(np.zeros((2, 3, 1), np.float32), np.array([0, 3]))
    with pytest.raises(ValueError):
        ActivationTensor(np.zeros((2, 3, 1), np.float32), np.array([1, 4]))


def test_tensor_is_read_only(rng):
    x = ActivationTensor(rng.standard_normal((2, 1, 3)).astype(np.float32))
    with pytest.raises(ValueError):
        x.data[0, 0, 0] = 1.0


def test_corrupted_headers(tmp_path):
    p = tmp_path / "x.spba"
    write_tensor(ActivationTensor(np.ones((2, 2, 2), np.float32)), p)
    raw = p.read_bytes()
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        read_tensor(tmp_path / "magic")
    (tmp_path / "ver").write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(VersionMismatchError):
        read_tensor(tmp_path / "ver")
    (tmp_path / "short").write_bytes(raw[:-1])
    with pytest.raises(TruncatedPayloadError):
        read_tensor(tmp_path / "short")
    (tmp_path / "head").write_bytes(raw[:10])
    with pytest.raises(TruncatedPayloadError):
        read_tensor(tmp_path / "head")


def test_padding_layout_and_last_token():
    data = np.arange(12, dtype=np.float32).reshape(2, 3, 2)
    x = ActivationTensor(data, np.array([1, 3]))
    assert x.valid_mask().tolist() == [[False, False, True], [True, True, True]]
    np.testing.assert_array_equal(x.last_token(), data[:, -1])


def test_pool_tokens_matches_loop(rng):
    v = rng.standard_normal((6, 5, 3))
    mask = rng.integers(1, 6, size=6)
    for mode, fn in (("mean", np.mean), ("max", np.max)):
        got = pool_tokens(v, mask, mode)
        for i in range(6):
            for j in range(3):
                assert got[i, j] == pytest.approx(fn(v[i, 5 - mask[i]:, j]), abs=1e-12)
    np.testing.assert_array_equal(pool_tokens(v, mask, "last"), v[:, -1])


def test_single_token_pool_modes_identical(rng):
    v = rng.standard_normal((4, 1, 3))
    mask = np.ones(4, int)
    a, b, c = (pool_tokens(v, mask, m) for m in ("last", "mean", "max"))
    assert a.tobytes() == b.tobytes() == c.tobytes()


def test_concat_pads_shorter_front():
    a = ActivationTensor(np.ones((1, 2, 1), np.float32))
    b = ActivationTensor(np.full((1, 3, 1), 2, np.float32), np.array([2]))
    c = concat_tensors(a, b)
    assert c.shape == (2, 3, 1)
    assert c.token_mask.tolist() == [2, 2]
    assert c.data[0, :, 0].tolist() == [0, 1, 1]


def test_default_split_deterministic_and_sized():
    y = np.arange(1000) % 2
    s1, s2 = default_split(y, 7), default_split(y, 7)
    assert s1 == s2
    assert len(s1.test) >= 100
    allidx = np.concatenate([s1.train, s1.val, s1.test])
    assert sorted(allidx.tolist()) == list(range(1000))


def test_small_dataset_split_keeps_training_data():
    y = np.array([0, 1] * 10)
    s = default_split(y, 0)
    assert len(s.pool) >= 2
    assert set(y[s.test]) == {0, 1}


def test_labels_file_and_manifest(tmp_path, rng):
    x = ActivationTensor(rng.standard_normal((30, 1, 4)).astype(np.float32))
    y = np.arange(30) % 2
    write_tensor(x, tmp_path / "a.spba")
    write_labels(y, tmp_path / "y.txt")
    assert read_labels(tmp_path / "y.txt").tolist() == y.tolist()
    m = DatasetManifest("d", "a.spba", "y.txt", seed=3)
    m.save(tmp_path / "m.json")
    loaded = DatasetManifest.load(tmp_path / "m.json")
    data = load_dataset(loaded)
    assert data.n_examples == 30 and data.dataset_id == "d"


def test_bad_targets_rejected(tmp_path, rng):
    write_tensor(ActivationTensor(rng.standard_normal((3, 1, 2)).astype(np.float32)), tmp_path / "a.spba")
    write_labels([0, 1, 2], tmp_path / "y.txt")
    with pytest.raises(ValueError):
        load_dataset(DatasetManifest("d", str(tmp_path / "a.spba"), str(tmp_path / "y.txt")))
    write_labels([0, 1], tmp_path / "y.txt")
    with pytest.raises(ShapeMismatchError):
        load_dataset(DatasetManifest("d", str(tmp_path / "a.spba"), str(tmp_path / "y.txt")))


def test_missing_file_rejected(tmp_path):
    with pytest.raises(FileNotFoundError):
        DatasetManifest("d", str(tmp_path / "nope"), str(tmp_path / "nope2")).validate()
