"""Walk through one synthetic fixture: encode with the oracle SAE, pick latents, probe.

The synthetic world plants a known target feature, so the single best latent
should be the target itself and a one-latent probe should be nearly perfect.

    python3 demos/01_fixture_walkthrough.py
"""

import warnings

from sparseprobe import auc, encode, make_cv_plan, probes, select_hyperparams, select_top_k
from sparseprobe.synth import calibrate_oracle, generate_world, sample_dataset

world = generate_world(d_model=64, w_true=256, seed=0, noise_sigma=0.05, target_features=(0,))
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    cal = calibrate_oracle(world)
print(f"oracle SAE: {cal.sae.width} latents, {len(cal.failed)} above 1% calibration error")

data = sample_dataset(world, 1024, seed=1).dataset
X = data.features.last_token()
y = data.targets
pool, test = data.split.pool, data.split.test
z = encode(data.features, cal.sae)
if z.ndim == 3:
    z = z[:, -1, :]

plan = make_cv_plan(len(pool), 0, y[pool])


def fit_and_report(name, feats, reg):
    grid = probes.default_grid("logreg", len(pool), feats.shape[1], reg=reg)
    hp, val_auc = select_hyperparams("logreg", grid, feats[pool], y[pool], plan)
    model = probes.train("logreg", feats[pool], y[pool], hp)
    test_auc = auc(probes.score(model, feats[test]), y[test])
    print(f"{name:>16}: C={hp['c']:g}  val AUC {val_auc:.4f}  test AUC {test_auc:.4f}")


fit_and_report("activations", X, "l2")
for k in (1, 4, 16):
    sel = select_top_k(z[pool], y[pool], k)
    if k == 1:
        print(f"best single latent: {sel.indices[0]} (planted target is 0)")
    fit_and_report(f"top-{k} latents", z[:, sel.indices], "l1")
