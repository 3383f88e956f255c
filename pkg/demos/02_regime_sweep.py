"""Run a small scarcity and label-noise sweep through the harness, then read the quivers.

Writes a fixture and results under a temporary directory and prints, per
regime point, which method the validation-AUC quiver picked.

    python3 demos/02_regime_sweep.py [out_dir]
"""

import json
import logging
import sys
import tempfile
from pathlib import Path

from sparseprobe import harness
from sparseprobe.synth import write_fixture

# Tiny scarcity points leave some leave-two-out folds single-class; that is expected.
logging.getLogger("sparseprobe").setLevel(logging.ERROR)

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="sweep_"))
write_fixture(root, seed=0, n=512, n_ood=200)

doc = json.loads((root / "experiment.json").read_text())
doc["methods"] = [
    {"family": "logreg", "features": "act", "pooling": "last"},
    {"family": "knn", "features": "act", "pooling": "last"},
    {"family": "logreg", "features": "sae", "sae": "oracle", "k": [1, 16], "pooling": "last"},
]
doc["regimes"] = [
    {"kind": "scarcity", "values": [8, 32, 128]},
    {"kind": "noise", "values": [0.0, 0.2, 0.4]},
    {"kind": "shift", "values": [None]},
]
(root / "experiment.json").write_text(json.dumps(doc, indent=2))

manifest = harness.ExperimentManifest.load(root / "experiment.json")
stats = harness.run_experiment(manifest, workers=2)
print(f"tasks: {stats}")

results = Path(manifest.output)
for row in harness.write_quivers(results):
    print(f"{row['regime']:>9} {str(row['param']):>5}  {row['quiver']:<14} -> "
          f"{row['method_id']:<32} test AUC {row['auc_test']:.3f}")

tables = harness.report(results)
print("report tables:", ", ".join(sorted(tables)))
print(f"everything is under {root}")
