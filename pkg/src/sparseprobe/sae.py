"""SAE encoder inference, mean-difference latent selection, pooling, binarization.

SPSW weight file layout (little-endian)::

    b"SPSW", version u32 (== 1), d_model u64, width u64, kind u8,
    activation params: theta f32 x width (JumpReLU) | k_active u32 (TopK, BatchTopK),
    w_enc f32 x (d_model * width) row-major, b_enc f32 x width
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor_io import (
    ActivationTensor,
    BadMagicError,
    TruncatedPayloadError,
    VersionMismatchError,
    pool_tokens,
)

KINDS = ("relu", "jumprelu", "topk", "batchtopk")
_KIND_TAG = {k: i for i, k in enumerate(KINDS)}
SAE_MAGIC = b"SPSW"
SAE_VERSION = 1
_SAE_HEADER = struct.Struct("<4sIQQB")


@dataclass(frozen=True, eq=False)
class SAEWeights:
    w_enc: np.ndarray  # (d_model, width)
    b_enc: np.ndarray  # (width,)
    kind: str = "relu"
    theta: np.ndarray | None = None
    k_active: int | None = None
    l0: float | None = None
    name: str = "sae"

    def __post_init__(self):
        w = np.array(self.w_enc, dtype=np.float32)
        b = np.array(self.b_enc, dtype=np.float32).reshape(-1)
        if w.ndim != 2 or w.shape[1] != b.shape[0]:
            raise ValueError(f"w_enc {w.shape} and b_enc {b.shape} disagree on width")
        if self.kind not in KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        theta = None
        if self.kind == "jumprelu":
            if self.theta is None:
                raise ValueError("JumpReLU requires theta")
            theta = np.array(self.theta, dtype=np.float32).reshape(-1)
            if theta.shape != b.shape:
                raise ValueError("theta length must equal width")
            if np.any(theta < 0):
                raise ValueError("JumpReLU thresholds must be >= 0")
        if self.kind in ("topk", "batchtopk"):
            if self.k_active is None or not 1 <= int(self.k_active) <= w.shape[1]:
                raise ValueError(f"k_active must lie in [1, {w.shape[1]}]")
            object.__setattr__(self, "k_active", int(self.k_active))
        for a in (w, b):
            a.setflags(write=False)
        object.__setattr__(self, "w_enc", w)
        object.__setattr__(self, "b_enc", b)
        object.__setattr__(self, "theta", theta)

    @property
    def d_model(self) -> int:
        return self.w_enc.shape[0]

    @property
    def width(self) -> int:
        return self.w_enc.shape[1]


def write_sae(sae: SAEWeights, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_SAE_HEADER.pack(SAE_MAGIC, SAE_VERSION, sae.d_model, sae.width, _KIND_TAG[sae.kind]))
        if sae.kind == "jumprelu":
            fh.write(sae.theta.astype("<f4").tobytes())
        elif sae.kind in ("topk", "batchtopk"):
            fh.write(struct.pack("<I", sae.k_active))
        fh.write(np.ascontiguousarray(sae.w_enc, dtype="<f4").tobytes())
        fh.write(sae.b_enc.astype("<f4").tobytes())


def read_sae(path, *, l0: float | None = None, name: str | None = None) -> SAEWeights:
    raw = Path(path).read_bytes()
    if raw[:4] != SAE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < _SAE_HEADER.size:
        raise TruncatedPayloadError(f"{path}: truncated header")
    _, version, d, width, tag = _SAE_HEADER.unpack_from(raw)
    if version != SAE_VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {SAE_VERSION}")
    if tag >= len(KINDS):
        raise ValueError(f"{path}: unknown activation tag {tag}")
    kind = KINDS[tag]
    off = _SAE_HEADER.size
    theta = k_active = None
    need = off + (4 * width if kind == "jumprelu" else 4 if kind != "relu" else 0)
    need += 4 * d * width + 4 * width
    if len(raw) < need:
        raise TruncatedPayloadError(f"{path}: truncated payload")
    if kind == "jumprelu":
        theta = np.frombuffer(raw, "<f4", width, off)
        off += 4 * width
    elif kind != "relu":
        (k_active,) = struct.unpack_from("<I", raw, off)
        off += 4
    w = np.frombuffer(raw, "<f4", d * width, off).reshape(d, width)
    off += 4 * d * width
    b = np.frombuffer(raw, "<f4", width, off)
    return SAEWeights(w, b, kind, theta, k_active, l0=l0, name=name or Path(path).stem)


def _topk_rows(z: np.ndarray, k: int) -> np.ndarray:
    # stable sort on -z keeps the lower latent index first among equal values
    order = np.argsort(-z, axis=1, kind="stable")[:, :k]
    keep = np.zeros_like(z, dtype=bool)
    np.put_along_axis(keep, order, True, axis=1)
    return np.where(keep & (z > 0), z, 0.0)


def _batch_topk(z: np.ndarray, k: int) -> np.ndarray:
    n_rows = z.shape[0]
    if n_rows <= 1:
        return _topk_rows(z, k)
    budget = min(k * n_rows, z.size)
    flat = z.reshape(-1)
    order = np.argsort(-flat, kind="stable")[:budget]
    keep = np.zeros(flat.shape, dtype=bool)
    keep[order] = True
    return np.where(keep & (flat > 0), flat, 0.0).reshape(z.shape)


def encode(x, sae: SAEWeights) -> np.ndarray:
    """Encode activations into SAE latents.

    ``x`` may be an :class:`ActivationTensor` or a plain array of shape
    ``(n, d_model)`` or ``(n, T, d_model)``. A 2-D input, or a tensor with a
    single token, yields an ``(n, width)`` matrix; multi-token input yields
    ``(n, T, width)``. BatchTopK treats every valid token of the batch as one row
    of the batch; pad tokens are encoded with the per-example TopK rule so they
    never consume batch budget.
    """
    mask = None
    if isinstance(x, ActivationTensor):
        mask = x.valid_mask()
        arr = np.asarray(x.data, dtype=np.float64)
        if arr.shape[1] == 1:
            arr, mask = arr[:, 0, :], None
    else:
        arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != sae.d_model:
        raise ValueError(f"activation dim {arr.shape[-1]} != SAE d_model {sae.d_model}")
    lead = arr.shape[:-1]
    rows = arr.reshape(-1, sae.d_model)
    pre = rows @ sae.w_enc.astype(np.float64) + sae.b_enc.astype(np.float64)
    if sae.kind == "relu":
        out = np.maximum(pre, 0.0)
    elif sae.kind == "jumprelu":
        out = np.where(pre > sae.theta.astype(np.float64), pre, 0.0)
        out = np.maximum(out, 0.0)
    elif sae.kind == "topk":
        out = _topk_rows(pre, sae.k_active)
    else:
        if mask is None:
            out = _batch_topk(pre, sae.k_active)
        else:
            flat_mask = mask.reshape(-1)
            out = _topk_rows(pre, sae.k_active)
            out[flat_mask] = _batch_topk(pre[flat_mask], sae.k_active)
    return out.reshape(*lead, sae.width)


@dataclass(frozen=True)
class LatentSelection:
    """Selected latent indices with their mean-difference scores."""

    indices: np.ndarray
    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).reshape(-1)
        sc = np.array(self.scores, dtype=np.float64).reshape(-1)
        if idx.shape != sc.shape:
            raise ValueError("indices and scores must have equal length")
        if len(np.unique(idx)) != len(idx):
            raise ValueError("selected indices must be distinct")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "scores", sc)

    def __len__(self):
        return len(self.indices)


def mean_difference(z, targets) -> np.ndarray:
    """Absolute gap between class-conditional latent means (float64)."""
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(targets).astype(bool)
    if t.all() or not t.any():
        raise ValueError("both classes must be present to rank latents")
    return np.abs(z[t].mean(axis=0) - z[~t].mean(axis=0))


def select_top_k(z_train, targets, k: int) -> LatentSelection:
    """Pick the ``k`` latents whose class means differ most in absolute value.

    Ties in the statistic go to the lower latent index.
    """
    z_train = np.asarray(z_train)
    width = z_train.shape[1]
    if not 1 <= k <= width:
        raise ValueError(f"k={k} must lie in [1, {width}]")
    gap = mean_difference(z_train, targets)
    order = np.argsort(-gap, kind="stable")[:k]
    return LatentSelection(order, gap[order])


def pool_latents(z_per_token, token_mask, mode: str = "max") -> np.ndarray:
    return pool_tokens(z_per_token, token_mask, mode)


def binarize(z, threshold: float = 1.0) -> np.ndarray:
    """1 where the latent value is strictly greater than ``threshold``, else 0."""
    return (np.asarray(z) > threshold).astype(np.float64)


def prune_by_rank(selection: LatentSelection, rank_order, keep: int) -> LatentSelection:
    """Keep the first ``keep`` latents of ``selection`` under an external ranking.

    ``rank_order`` lists the selection's latent indices, most relevant first.
    """
    rank_order = np.asarray(rank_order, dtype=np.int64).reshape(-1)
    if sorted(rank_order.tolist()) != sorted(selection.indices.tolist()):
        raise ValueError("rank_order must be a permutation of the selected indices")
    if not 1 <= keep <= len(selection):
        raise ValueError(f"keep={keep} must lie in [1, {len(selection)}]")
    lookup = dict(zip(selection.indices.tolist(), selection.scores.tolist()))
    kept = rank_order[:keep]
    return LatentSelection(kept, [lookup[i] for i in kept.tolist()])
