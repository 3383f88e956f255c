"""Synthetic activations with a known sparse feature dictionary and an oracle SAE.

Each token's activation is ``sum_i fire_i * mag_i * dictionary_i + noise``.
Feature ``i`` fires with probability ``firing_prob[i]``; magnitudes are uniform
on ``[mag_low, mag_high]`` (mean 1 by default). The target is read off the last
token: either one designated feature fires, or either of two features fires.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sae import SAEWeights, write_sae
from .tensor_io import (
    ActivationTensor,
    DatasetManifest,
    LabeledDataset,
    default_split,
    write_labels,
    write_tensor,
)

DEFAULT_FIRING = 0.02
TARGET_FIRING = 0.5
DECORRELATION_STEPS = 300
TARGET_COHERENCE = 0.25
CALIBRATION_SIZE = 8192
MAX_CALIBRATION_ERROR = 0.01


@dataclass(frozen=True, eq=False)
class FeatureWorld:
    dictionary: np.ndarray  # (w_true, d_model), unit rows
    firing_prob: np.ndarray
    mag_low: float = 0.75
    mag_high: float = 1.25
    target_features: tuple = (0,)  # one index, or two for an OR rule
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        D = np.asarray(self.dictionary, dtype=np.float64)
        if not np.allclose(np.linalg.norm(D, axis=1), 1.0, atol=1e-6):
            raise ValueError("dictionary rows must be unit norm")
        p = np.asarray(self.firing_prob, dtype=np.float64)
        if p.shape != (D.shape[0],) or np.any(p <= 0) or np.any(p >= 1):
            raise ValueError("firing probabilities must lie in (0, 1), one per feature")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 < self.mag_low <= self.mag_high:
            raise ValueError("magnitudes must be positive")
        if not 1 <= len(self.target_features) <= 2:
            raise ValueError("target rule uses one feature or an OR of two")
        object.__setattr__(self, "dictionary", D)
        object.__setattr__(self, "firing_prob", p)
        object.__setattr__(self, "target_features", tuple(int(i) for i in self.target_features))

    @property
    def w_true(self) -> int:
        return self.dictionary.shape[0]

    @property
    def d_model(self) -> int:
        return self.dictionary.shape[1]


def _decorrelate(D: np.ndarray, steps: int) -> np.ndarray:
    # Gradient steps on the quartic frame potential sum_{i!=j} <d_i, d_j>^4.
    for _ in range(steps):
        G = D @ D.T
        np.fill_diagonal(G, 0.0)
        D = D - (G**3) @ D
        D /= np.linalg.norm(D, axis=1, keepdims=True)
    return D


def random_dictionary(w_true: int, d_model: int, rng) -> np.ndarray:
    """Unit-norm directions: orthonormal when ``w_true <= d_model``, else low-coherence."""
    if w_true <= d_model:
        q, _ = np.linalg.qr(rng.standard_normal((d_model, w_true)))
        return q.T.copy()
    D = rng.standard_normal((w_true, d_model))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    return _decorrelate(D, DECORRELATION_STEPS)


def generate_world(
    d_model: int = 64,
    w_true: int = 256,
    seed: int = 0,
    *,
    noise_sigma: float = 0.05,
    target_features=(0,),
    firing_prob: float = DEFAULT_FIRING,
    target_firing: float = TARGET_FIRING,
    target_coherence: float = TARGET_COHERENCE,
) -> FeatureWorld:
    """Seeded feature world.

    ``target_coherence`` scales every other feature's component along each
    target direction (1.0 leaves the dictionary untouched). Shrinking it keeps
    the target readable by a matched filter when ``w_true`` exceeds ``d_model``.
    """
    if w_true < 2 or d_model < 2:
        raise ValueError("need w_true >= 2 and d_model >= 2")
    rng = np.random.default_rng(seed)
    D = random_dictionary(w_true, d_model, rng)
    target_features = tuple(target_features)
    if target_coherence != 1.0:
        for t in target_features:
            others = np.setdiff1d(np.arange(w_true), [t])
            D[others] -= (1.0 - target_coherence) * np.outer(D[others] @ D[t], D[t])
            D[others] /= np.linalg.norm(D[others], axis=1, keepdims=True)
    p = np.full(w_true, firing_prob)
    # An OR of two features fires with probability target_firing overall.
    per = target_firing if len(target_features) == 1 else 1 - np.sqrt(1 - target_firing)
    p[list(target_features)] = per
    return FeatureWorld(D, p, target_features=target_features, noise_sigma=noise_sigma, seed=seed)


@dataclass
class SampledFixture:
    dataset: LabeledDataset
    firings: np.ndarray  # (n, n_tokens, w_true) bool
    magnitudes: np.ndarray = field(repr=False)


def sample_firings(world: FeatureWorld, shape, rng) -> tuple[np.ndarray, np.ndarray]:
    fire = rng.random((*shape, world.w_true)) < world.firing_prob
    mags = rng.uniform(world.mag_low, world.mag_high, size=(*shape, world.w_true))
    return fire, np.where(fire, mags, 0.0)


def sample_dataset(
    world: FeatureWorld,
    n: int,
    n_tokens: int = 1,
    seed: int = 0,
    *,
    min_tokens: int | None = None,
    dataset_id: str = "synthetic",
) -> SampledFixture:
    """Draw ``n`` labelled examples.

    With ``min_tokens`` the number of valid tokens per example is drawn
    uniformly from ``[min_tokens, n_tokens]`` and the front is zero padded.
    """
    if n < 4:
        raise ValueError("need at least 4 examples")
    rng = np.random.default_rng(seed)
    fire, mags = sample_firings(world, (n, n_tokens), rng)
    acts = mags @ world.dictionary
    if world.noise_sigma > 0:
        acts = acts + rng.normal(0.0, world.noise_sigma, size=acts.shape)
    if min_tokens is None:
        mask = np.full(n, n_tokens)
    else:
        mask = rng.integers(min_tokens, n_tokens + 1, size=n)
        pad = np.arange(n_tokens)[None, :] < (n_tokens - mask)[:, None]
        acts[pad] = 0.0
        fire[pad] = False
        mags[pad] = 0.0
    targets = fire[:, -1, list(world.target_features)].any(axis=1).astype(np.int64)
    if targets.min() == targets.max():
        raise ValueError("sampled targets are single-class; increase n")
    tensor = ActivationTensor(acts.astype(np.float32), mask)
    split = default_split(targets, seed)
    return SampledFixture(LabeledDataset(tensor, targets, split, dataset_id=dataset_id), fire, mags)


@dataclass
class OracleCalibration:
    sae: SAEWeights
    error_rates: np.ndarray  # per latent, on the calibration sample
    failed: np.ndarray  # latents whose error exceeds the tolerance


def _best_threshold(z: np.ndarray, fired: np.ndarray) -> tuple[float, float]:
    """Threshold minimising disagreement between ``z > theta`` and ``fired``."""
    order = np.argsort(z, kind="stable")
    zs, fs = z[order], fired[order]
    n = len(z)
    # Cutting after position i (theta in [zs[i], zs[i+1])) predicts positive for i+1..n-1.
    fn = np.concatenate([[0], np.cumsum(fs)])  # fired at or below the cut
    fp = (n - np.arange(n + 1)) - (fs.sum() - fn)  # not fired above the cut
    errors = fn + fp
    distinct = np.concatenate([[True], zs[1:] > zs[:-1], [True]])
    errors = np.where(distinct, errors, n + 1)
    cut = int(np.argmin(errors))
    if cut == 0:
        theta = zs[0] - 1e-6
    elif cut == n:
        theta = zs[-1]
    else:
        theta = 0.5 * (zs[cut - 1] + zs[cut])
    return max(float(theta), 1e-6), errors[cut] / n


def calibrate_oracle(world: FeatureWorld, n_calibration: int = CALIBRATION_SIZE, seed: int = 12345,
                     tolerance: float = MAX_CALIBRATION_ERROR) -> OracleCalibration:
    """Build the oracle JumpReLU SAE and report per-latent calibration error."""
    rng = np.random.default_rng(seed)
    fire, mags = sample_firings(world, (n_calibration,), rng)
    x = mags @ world.dictionary
    if world.noise_sigma > 0:
        x = x + rng.normal(0.0, world.noise_sigma, size=x.shape)
    z = x @ world.dictionary.T
    theta = np.empty(world.w_true)
    errors = np.empty(world.w_true)
    for i in range(world.w_true):
        theta[i], _ = _best_threshold(z[:, i], fire[:, i])
        errors[i] = np.mean((z[:, i] > theta[i]) != fire[:, i])
    sae = SAEWeights(
        world.dictionary.T,
        np.zeros(world.w_true),
        kind="jumprelu",
        theta=theta,
        l0=float(world.firing_prob.sum()),
        name=f"oracle-{world.seed}",
    )
    return OracleCalibration(sae, errors, np.flatnonzero(errors > tolerance))


def oracle_sae(world: FeatureWorld, **kwargs) -> SAEWeights:
    cal = calibrate_oracle(world, **kwargs)
    if len(cal.failed):
        worst = cal.failed[np.argsort(-cal.error_rates[cal.failed])][:5]
        detail = ", ".join(f"{i}: {cal.error_rates[i]:.3f}" for i in worst)
        warnings.warn(
            f"{len(cal.failed)} oracle latents exceed {MAX_CALIBRATION_ERROR:.0%} calibration error ({detail})",
            stacklevel=2,
        )
    return cal.sae


def sample_shifted(world: FeatureWorld, n: int, seed: int = 0, *, offset: float = 0.5,
                   n_tokens: int = 1) -> tuple[ActivationTensor, np.ndarray]:
    """Covariate-shifted draw: every token moves by one fixed random offset.

    The offset direction is drawn orthogonal to the target features, so the
    labelling rule is unchanged while the input distribution moves.
    """
    rng = np.random.default_rng(seed)
    fire, mags = sample_firings(world, (n, n_tokens), rng)
    acts = mags @ world.dictionary
    if world.noise_sigma > 0:
        acts = acts + rng.normal(0.0, world.noise_sigma, size=acts.shape)
    u = rng.standard_normal(world.d_model)
    t = world.dictionary[list(world.target_features)]
    q, _ = np.linalg.qr(t.T)
    u -= q @ (q.T @ u)
    acts = acts + offset * u / np.linalg.norm(u)
    targets = fire[:, -1, list(world.target_features)].any(axis=1).astype(np.int64)
    return ActivationTensor(acts.astype(np.float32)), targets


def write_fixture(out_dir, *, seed: int = 0, n: int = 1024, n_ood: int = 300, d_model: int = 64,
                  w_true: int = 256, noise_sigma: float = 0.05, n_tokens: int = 1,
                  dataset_id: str = "synthetic") -> dict:
    """Write a fixture in the on-disk formats the harness reads.

    Produces ``activations.spba``, ``targets.txt``, ``ood_*`` files, ``oracle.spsw``,
    ``dataset.json`` and a sample ``experiment.json``; returns the paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = generate_world(d_model, w_true, seed, noise_sigma=noise_sigma)
    fx = sample_dataset(world, n, n_tokens, seed=seed + 1, dataset_id=dataset_id)
    write_tensor(fx.dataset.features, out / "activations.spba")
    write_labels(fx.dataset.targets, out / "targets.txt")
    paths = {"activations": out / "activations.spba", "targets": out / "targets.txt"}
    ood = {}
    if n_ood:
        x_ood, y_ood = sample_shifted(world, n_ood, seed + 2, n_tokens=n_tokens)
        write_tensor(x_ood, out / "ood_activations.spba")
        write_labels(y_ood, out / "ood_targets.txt")
        ood = {"ood_activations": "ood_activations.spba", "ood_targets": "ood_targets.txt"}
        paths.update(ood_activations=out / "ood_activations.spba", ood_targets=out / "ood_targets.txt")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cal = calibrate_oracle(world)
    write_sae(cal.sae, out / "oracle.spsw")
    DatasetManifest(dataset_id, "activations.spba", "targets.txt", ood.get("ood_activations"),
                    ood.get("ood_targets"), seed).save(out / "dataset.json")
    experiment = {
        "datasets": ["dataset.json"],
        "saes": [{"id": "oracle", "path": "oracle.spsw", "width": w_true, "l0": float(world.firing_prob.sum())}],
        "methods": [
            {"family": "logreg", "features": "act", "pooling": "last"},
            {"family": "logreg", "features": "sae", "sae": "oracle", "k": [1, 16], "pooling": "last"},
        ],
        "regimes": [{"kind": "standard", "values": [None]}],
        "seed": seed,
        "output": "results",
    }
    (out / "experiment.json").write_text(json.dumps(experiment, indent=2) + "\n")
    paths.update(sae=out / "oracle.spsw", dataset=out / "dataset.json", experiment=out / "experiment.json")
    return {k: str(v) for k, v in paths.items()}
