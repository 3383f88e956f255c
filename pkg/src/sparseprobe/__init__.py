"""Sparse probing toolkit: SAE latent probes versus activation baselines.

Modules
-------
tensor_io     activation containers, SPBA files, dataset manifests
sae           SAE encoding, mean-difference latent selection, pooling, binarization
probes        logistic / PCA / KNN / boosted-tree / MLP probes and their grids
metrics       AUC, cross-validation plans, hyperparameter selection
regimes       scarcity, imbalance, label noise, covariate shift, quiver selection
multitoken    attention-pooled probe and multi-token feature builders
synth         synthetic feature worlds with an oracle SAE
diagnostics   disagreement mining and top-activating-token tables
harness       manifest-driven experiment runner and reports
"""

from .metrics import EvalRecord, auc, make_cv_plan, select_hyperparams
from .regimes import RegimeSpec, apply_regime, quiver_select
from .sae import SAEWeights, binarize, encode, pool_latents, select_top_k
from .tensor_io import ActivationTensor, DatasetManifest, LabeledDataset, load_dataset, read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "ActivationTensor",
    "DatasetManifest",
    "EvalRecord",
    "LabeledDataset",
    "RegimeSpec",
    "SAEWeights",
    "apply_regime",
    "auc",
    "binarize",
    "encode",
    "load_dataset",
    "make_cv_plan",
    "pool_latents",
    "quiver_select",
    "read_tensor",
    "select_hyperparams",
    "select_top_k",
    "write_tensor",
]
