"""Activation containers, the SPBA binary format and dataset manifests.

SPBA layout (all integers little-endian)::

    b"SPBA"                     4 bytes
    version        u32          4 bytes   (== 1)
    n_examples     u64          8 bytes
    n_tokens       u64          8 bytes
    d_model        u64          8 bytes
    token_mask     u32 x n_examples
    payload        f32 x (n_examples * n_tokens * d_model), row-major

Pad tokens sit at the front of the token axis; ``token_mask[i]`` counts the
valid trailing tokens of example ``i``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._util import stratified_order

MAGIC = b"SPBA"
VERSION = 1
_HEADER = struct.Struct("<4sIQQQ")
HEADER_SIZE = _HEADER.size  # 32


class TensorFormatError(ValueError):
    """Base class for malformed SPBA files."""


class BadMagicError(TensorFormatError):
    pass


class VersionMismatchError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class ShapeMismatchError(ValueError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ActivationTensor:
    """Activations of shape ``(n_examples, n_tokens, d_model)``.

    ``token_mask`` holds the number of valid (trailing) tokens per example.
    When omitted every token is valid.
    """

    data: np.ndarray
    token_mask: np.ndarray | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim == 2:
            data = data[:, None, :]
        if data.ndim != 3:
            raise ValueError(f"activations must be 2-D or 3-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("activations contain non-finite values")
        n, t, _ = data.shape
        if self.token_mask is None:
            mask = np.full(n, t, dtype=np.uint32)
        else:
            mask = np.array(self.token_mask, dtype=np.int64, copy=True)
            if mask.shape != (n,):
                raise ValueError(f"token_mask must have shape ({n},), got {mask.shape}")
            if n and (mask.min() < 1 or mask.max() > t):
                raise ValueError(f"token_mask entries must lie in [1, {t}]")
            mask = mask.astype(np.uint32)
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "token_mask", _readonly(mask))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_examples(self) -> int:
        return self.data.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.data.shape[1]

    @property
    def d_model(self) -> int:
        return self.data.shape[2]

    def valid_mask(self) -> np.ndarray:
        """Boolean ``(n_examples, n_tokens)`` array, True on non-pad tokens."""
        t = self.n_tokens
        return np.arange(t)[None, :] >= (t - self.token_mask.astype(np.int64))[:, None]

    def last_token(self) -> np.ndarray:
        return np.asarray(self.data[:, -1, :], dtype=np.float64)

    def take(self, indices) -> "ActivationTensor":
        indices = np.asarray(indices, dtype=np.int64)
        return ActivationTensor(self.data[indices], self.token_mask[indices])

    def __eq__(self, other):
        if not isinstance(other, ActivationTensor):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and np.array_equal(self.token_mask, other.token_mask)
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None


def concat_tensors(a: ActivationTensor, b: ActivationTensor) -> ActivationTensor:
    if a.d_model != b.d_model:
        raise ShapeMismatchError(f"d_model mismatch: {a.d_model} vs {b.d_model}")
    t = max(a.n_tokens, b.n_tokens)

    def pad(x: ActivationTensor) -> np.ndarray:
        if x.n_tokens == t:
            return np.asarray(x.data)
        out = np.zeros((x.n_examples, t, x.d_model), dtype=np.float32)
        out[:, t - x.n_tokens :, :] = x.data
        return out

    return ActivationTensor(
        np.concatenate([pad(a), pad(b)]),
        np.concatenate([a.token_mask, b.token_mask]),
    )


def pool_tokens(values: np.ndarray, token_mask: np.ndarray, mode: str) -> np.ndarray:
    """Pool a ``(n, T, F)`` array over valid trailing tokens.

    ``mode`` is one of ``"last"``, ``"mean"`` or ``"max"``.
    """
    values = np.asarray(values)
    if values.ndim == 2:
        values = values[:, None, :]
    n, t, _ = values.shape
    mask = np.asarray(token_mask, dtype=np.int64)
    if mask.shape != (n,):
        raise ValueError(f"token_mask must have shape ({n},)")
    if n and mask.min() < 1:
        raise ValueError("cannot pool an example with zero valid tokens")
    if n and mask.max() > t:
        raise ValueError(f"token_mask exceeds token axis length {t}")
    if mode == "last":
        return values[:, -1, :].copy()
    valid = np.arange(t)[None, :] >= (t - mask)[:, None]
    if mode == "mean":
        summed = np.where(valid[:, :, None], values, 0).sum(axis=1, dtype=np.float64)
        return (summed / mask[:, None]).astype(np.result_type(values.dtype, np.float64))
    if mode == "max":
        fill = -np.inf if np.issubdtype(values.dtype, np.floating) else np.iinfo(values.dtype).min
        return np.where(valid[:, :, None], values, fill).max(axis=1)
    raise ValueError(f"unknown pooling mode {mode!r}")


# --------------------------------------------------------------------------- I/O


def write_tensor(tensor: ActivationTensor, path) -> None:
    data = np.asarray(tensor.data)
    if not np.all(np.isfinite(data)):
        raise ValueError("refusing to write non-finite activations")
    n, t, d = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n, t, d))
        fh.write(np.asarray(tensor.token_mask, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_tensor(path) -> ActivationTensor:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayloadError(f"{path}: truncated header")
    _, version, n, t, d = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")
    mask_end = HEADER_SIZE + 4 * n
    expected = mask_end + 4 * n * t * d
    if len(raw) < expected:
        raise TruncatedPayloadError(
            f"{path}: truncated payload ({len(raw)} bytes, expected {expected})"
        )
    if len(raw) > expected:
        raise ShapeMismatchError(f"{path}: {len(raw) - expected} trailing bytes")
    mask = np.frombuffer(raw, dtype="<u4", count=n, offset=HEADER_SIZE)
    data = np.frombuffer(raw, dtype="<f4", count=n * t * d, offset=mask_end)
    return ActivationTensor(data.reshape(n, t, d), mask)


def write_labels(values, path) -> None:
    """Write an integer vector (targets or token ids), one value per line."""
    values = np.asarray(values, dtype=np.int64)
    Path(path).write_text("".join(f"{v}\n" for v in values))


def read_labels(path) -> np.ndarray:
    text = Path(path).read_text().split()
    return np.array([int(v) for v in text], dtype=np.int64)


# ---------------------------------------------------------------------- datasets


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            arr = np.array(getattr(self, name), dtype=np.int64).reshape(-1)
            object.__setattr__(self, name, _readonly(arr))

    @property
    def pool(self) -> np.ndarray:
        """Training pool: train followed by validation indices."""
        return np.concatenate([self.train, self.val])

    def __eq__(self, other):
        if not isinstance(other, Split):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("train", "val", "test")
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Features (activations or a 2-D latent matrix), binary targets and a split."""

    features: ActivationTensor | np.ndarray
    targets: np.ndarray
    split: Split
    dataset_id: str = "dataset"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        targets = np.array(self.targets, dtype=np.int64).reshape(-1)
        if not np.isin(targets, (0, 1)).all():
            raise ValueError("targets must contain only 0 and 1")
        feats = self.features
        if not isinstance(feats, ActivationTensor):
            feats = np.array(feats, dtype=np.float64)
            if feats.ndim != 2:
                raise ValueError("non-tensor features must be a 2-D matrix")
            if not np.all(np.isfinite(feats)):
                raise ValueError("features contain non-finite values")
            object.__setattr__(self, "features", _readonly(feats))
        n = len(feats) if not isinstance(feats, ActivationTensor) else feats.n_examples
        if n != len(targets):
            raise ShapeMismatchError(f"{n} feature rows but {len(targets)} targets")
        object.__setattr__(self, "targets", _readonly(targets))
        s = self.split
        everything = np.concatenate([s.train, s.val, s.test])
        if everything.size and (everything.min() < 0 or everything.max() >= n):
            raise ValueError("split indices out of bounds")
        if len(np.unique(everything)) != len(everything):
            raise ValueError("split index lists must be disjoint")
        if len(s.test) < 1:
            raise ValueError("test split must be non-empty")

    @property
    def n_examples(self) -> int:
        return len(self.targets)

    def with_(self, **changes) -> "LabeledDataset":
        kw = dict(
            features=self.features,
            targets=self.targets,
            split=self.split,
            dataset_id=self.dataset_id,
            meta=dict(self.meta),
        )
        kw.update(changes)
        return LabeledDataset(**kw)


def default_split(
    targets,
    seed: int,
    *,
    test_fraction: float = 0.2,
    min_test: int = 100,
    val_fraction: float = 0.2,
) -> Split:
    """Seeded stratified split: test set first, then 20% of the rest as validation.

    The test set holds ``max(min_test, round(test_fraction * n))`` examples; it is
    shrunk only when fewer than two examples would remain for training.
    """
    targets = np.asarray(targets)
    n = len(targets)
    if n < 3:
        raise ValueError("need at least 3 examples to split")
    rng = np.random.default_rng(seed)
    n_test = min(max(min_test, int(round(test_fraction * n))), n - 2)
    order = stratified_order(targets, rng)
    test = np.sort(order[:n_test])
    pool = order[n_test:]
    pool_order = pool[stratified_order(targets[pool], rng)]
    n_val = int(round(val_fraction * len(pool)))
    return Split(train=np.sort(pool_order[n_val:]), val=np.sort(pool_order[:n_val]), test=test)


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    activations: str
    targets: str
    ood_activations: str | None = None
    ood_targets: str | None = None
    seed: int = 0

    def resolve(self, base_dir) -> "DatasetManifest":
        def fix(p):
            if p is None or os.path.isabs(p):
                return p
            return str(Path(base_dir) / p)

        return DatasetManifest(
            self.dataset_id,
            fix(self.activations),
            fix(self.targets),
            fix(self.ood_activations),
            fix(self.ood_targets),
            self.seed,
        )

    def validate(self) -> None:
        for p in (self.activations, self.targets, self.ood_activations, self.ood_targets):
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(p)
        if (self.ood_activations is None) != (self.ood_targets is None):
            raise ValueError("OOD activations and targets must be given together")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    def to_json(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "activations": self.activations,
            "targets": self.targets,
            "ood_activations": self.ood_activations,
            "ood_targets": self.ood_targets,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, doc: dict, base_dir=None) -> "DatasetManifest":
        m = cls(
            dataset_id=str(doc["dataset_id"]),
            activations=doc["activations"],
            targets=doc["targets"],
            ood_activations=doc.get("ood_activations"),
            ood_targets=doc.get("ood_targets"),
            seed=int(doc.get("seed", 0)),
        )
        return m.resolve(base_dir) if base_dir is not None else m

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        return cls.from_json(json.loads(path.read_text()), base_dir=path.parent)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def load_dataset(manifest: DatasetManifest) -> LabeledDataset:
    manifest.validate()
    acts = read_tensor(manifest.activations)
    targets = read_labels(manifest.targets)
    if acts.n_examples != len(targets):
        raise ShapeMismatchError(
            f"{manifest.dataset_id}: {acts.n_examples} activations but {len(targets)} targets"
        )
    if not np.isin(targets, (0, 1)).all():
        raise ValueError(f"{manifest.dataset_id}: targets must contain only 0 and 1")
    split = default_split(targets, manifest.seed)
    return LabeledDataset(acts, targets, split, dataset_id=manifest.dataset_id)


def load_ood(manifest: DatasetManifest) -> tuple[ActivationTensor, np.ndarray] | None:
    if manifest.ood_activations is None:
        return None
    acts = read_tensor(manifest.ood_activations)
    targets = read_labels(manifest.ood_targets)
    if acts.n_examples != len(targets):
        raise ShapeMismatchError(
            f"{manifest.dataset_id}: OOD set has {acts.n_examples} activations "
            f"but {len(targets)} targets"
        )
    return acts, targets
