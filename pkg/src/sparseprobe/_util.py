"""Small shared helpers: seed derivation, stratified orderings, stable sigmoid."""

from __future__ import annotations

import base64
import hashlib
import json

import numpy as np


def derive_seed(*parts) -> int:
    """Derive a 63-bit seed from arbitrary JSON-serialisable parts.

    The seed is the first 8 bytes (big-endian) of SHA-256 over the canonical
    JSON encoding of ``parts``, with the top bit cleared.
    """
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=str)
    digest = hashlib.sha256(blob.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


def content_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def stratified_order(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Return a permutation of ``range(len(labels))`` with classes interleaved.

    Each class is shuffled independently, then the classes are merged so that
    every prefix of the result holds each class in (close to) its overall
    proportion. Dealing the result round-robin gives stratified folds, and
    cutting a prefix gives a stratified hold-out.
    """
    labels = np.asarray(labels)
    n = len(labels)
    pos = np.empty(n, dtype=np.float64)
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(len(members))]
        pos[members] = (np.arange(len(members)) + 0.5) / len(members)
    # Ties between classes at identical quantiles break by a random key.
    tie = rng.random(n)
    return np.lexsort((tie, pos))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_loss_from_logits(logits, y) -> float:
    """Mean binary cross-entropy computed from logits (numerically stable)."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "dtype": a.dtype.str,
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()
