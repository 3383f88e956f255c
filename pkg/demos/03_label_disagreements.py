"""Flip a few labels, then recover them by ranking the probe's disagreements.

A probe trained on noisy labels is still mostly right, so the examples it is
most confident are mislabelled should be the ones we flipped.

    python3 demos/03_label_disagreements.py
"""

from sparseprobe import RegimeSpec, apply_regime, probes
from sparseprobe.diagnostics import mine_disagreements
from sparseprobe.synth import generate_world, sample_dataset

world = generate_world(d_model=64, w_true=256, seed=3, noise_sigma=0.05, target_features=(0,))
clean = sample_dataset(world, 800, seed=4).dataset
noisy = apply_regime(clean, RegimeSpec("noise", 0.05, seed=7))
flipped = set(noisy.meta["flipped"])
print(f"flipped {len(flipped)} of {len(noisy.split.pool)} training labels")

pool = noisy.split.pool
X = noisy.features.last_token()
model = probes.train("logreg", X[pool], noisy.targets[pool], {"reg": "l2", "c": 1.0})

top = mine_disagreements(model, X, noisy.targets, top_n=len(flipped), indices=pool)
hits = sum(r.index in flipped for r in top)
print(f"{hits} of the top {len(top)} disagreements are flipped labels")
for r in top[:8]:
    mark = "flipped" if r.index in flipped else ""
    print(f"  example {r.index:4d}  label {r.label}  confidence {r.confidence:.3f}  {mark}")
print(f"picking at random would find about {len(top) * len(flipped) / len(pool):.1f}")
