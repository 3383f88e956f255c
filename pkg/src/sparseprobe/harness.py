"""Batch experiment runner: manifests in, EvalRecords and quiver summaries out.

Results directory layout::

    results.csv     one row per finished (dataset, regime point, method) task
    index.json      task hash -> status, for idempotent re-runs
    failures.jsonl  one JSON object per failed task
    quivers.csv     quiver choices per (dataset, regime point, quiver)
    report/         summary tables written by :func:`report`

Seeds: the regime transform of a dataset uses
``derive_seed(global_seed, dataset_id, "regime", kind, value)`` and every probe
fit uses ``derive_seed(global_seed, dataset_id, method_id)``, so the
label-noise point 0.0 reproduces the standard run exactly.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import probes
from ._util import content_hash, derive_seed
from .metrics import (
    EvalRecord,
    auc,
    evaluate_candidate,
    holdout_plan,
    make_cv_plan,
    select_hyperparams,
)
from .multitoken import fit_token_pca, pool_activations, train_attn_probe, attn_logits
from .regimes import RegimeSpec, apply_regime, default_grid, head_to_head, quiver_select
from .sae import binarize, encode, pool_latents, read_sae, select_top_k
from .tensor_io import ActivationTensor, DatasetManifest, load_dataset, load_ood

log = logging.getLogger(__name__)

DEFAULT_K = (1, 16, 128)
POOLINGS = ("last", "mean", "max", "concat_pca")
QUIVERS = ("baselines", "baselines+sae")
RESULT_COLUMNS = [
    "dataset_id", "regime", "param", "method_id", "k", "width", "l0", "pooling",
    "auc_val", "auc_test", "seed",
    "family", "feature_source", "hyperparams", "manifest_hash", "task_hash",
]
ATTENTION_GRID = tuple(
    {"learning_rate": lr, "weight_decay": wd} for lr in (1e-3, 1e-2) for wd in (1e-4, 1e-2)
)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class MethodSpec:
    family: str
    features: str = "act"  # "act" | "sae"
    pooling: str = "last"
    sae: str | None = None
    k: int | None = None
    binarize: float | None = None

    @property
    def method_id(self) -> str:
        parts = [self.family, self.features]
        if self.features == "sae":
            parts += [str(self.sae), f"k{self.k}"]
        parts.append(self.pooling)
        if self.binarize is not None:
            parts.append(f"bin{self.binarize:g}")
        return "/".join(parts)

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("family", "features", "pooling", "sae", "k", "binarize")}


@dataclass(frozen=True)
class SAEEntry:
    sae_id: str
    path: str
    width: int
    l0: float | None = None


@dataclass
class ExperimentManifest:
    datasets: list
    saes: dict
    methods: list
    regimes: list  # [(kind, [values])]
    seed: int = 0
    output: str = "results"
    source: dict = field(default_factory=dict, repr=False)

    @property
    def manifest_hash(self) -> str:
        return content_hash(self.source)[:16]

    @classmethod
    def from_json(cls, doc: dict, base_dir=".") -> "ExperimentManifest":
        base = Path(base_dir)
        datasets = []
        for entry in doc.get("datasets", []):
            if isinstance(entry, str):
                datasets.append(DatasetManifest.load(base / entry))
            else:
                datasets.append(DatasetManifest.from_json(entry, base_dir=base))
        saes = {}
        for entry in doc.get("saes", []):
            p = Path(entry["path"])
            p = p if p.is_absolute() else base / p
            saes[entry["id"]] = SAEEntry(entry["id"], str(p), int(entry["width"]), entry.get("l0"))
        default_k = tuple(doc.get("k_values", DEFAULT_K))
        methods = []
        for entry in doc.get("methods", []):
            feats = entry.get("features", "act")
            ks = entry.get("k", default_k) if feats == "sae" else [None]
            ks = [ks] if isinstance(ks, int) else ks
            for k in ks:
                methods.append(
                    MethodSpec(
                        family=entry["family"],
                        features=feats,
                        pooling=entry.get("pooling", "last"),
                        sae=entry.get("sae"),
                        k=None if k is None else int(k),
                        binarize=entry.get("binarize"),
                    )
                )
        regimes = []
        for entry in doc.get("regimes", []):
            kind = entry["kind"]
            values = entry.get("values")
            regimes.append((kind, list(values) if values is not None else default_grid(kind)))
        m = cls(datasets, saes, methods, regimes, int(doc.get("seed", 0)),
                str(base / doc.get("output", "results")), doc)
        m.validate()
        return m

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        path = Path(path)
        return cls.from_json(json.loads(path.read_text()), base_dir=path.parent)

    def validate(self) -> None:
        if not self.methods:
            raise ManifestError("method roster is empty")
        if not self.datasets:
            raise ManifestError("no datasets listed")
        for d in self.datasets:
            d.validate()
        for s in self.saes.values():
            if not Path(s.path).exists():
                raise ManifestError(f"SAE weights not found: {s.path}")
        for m in self.methods:
            if m.family not in probes.FAMILIES + ("attention",):
                raise ManifestError(f"unknown family {m.family!r}")
            if m.pooling not in POOLINGS:
                raise ManifestError(f"unknown pooling {m.pooling!r}")
            if m.features == "sae":
                if m.sae not in self.saes:
                    raise ManifestError(f"method {m.method_id} references unknown SAE {m.sae!r}")
                if m.k is None or m.k < 1:
                    raise ManifestError(f"method {m.method_id} needs k >= 1")
                if m.pooling == "concat_pca" or m.family == "attention":
                    raise ManifestError(f"{m.method_id}: SAE features support last/mean/max pooling only")
            elif m.features != "act":
                raise ManifestError(f"unknown feature source {m.features!r}")
        for kind, _ in self.regimes:
            if kind not in ("standard", "scarcity", "imbalance", "noise", "shift"):
                raise ManifestError(f"unknown regime {kind!r}")

    def regime_points(self, only: str | None = None) -> list:
        regimes = self.regimes or [("standard", [None])]
        if only is not None:
            regimes = [r for r in regimes if r[0] == only] or [(only, default_grid(only))]
        return [(kind, v) for kind, values in regimes for v in values]


@functools.lru_cache(maxsize=64)
def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class Task:
    dataset: DatasetManifest
    regime: str
    param: float | None
    method: MethodSpec
    sae: SAEEntry | None
    seed: int
    manifest_hash: str

    @property
    def key(self) -> dict:
        ds = self.dataset
        files = [p for p in (ds.activations, ds.targets, ds.ood_activations, ds.ood_targets) if p]
        return {
            "dataset": {"id": ds.dataset_id, "seed": ds.seed, "files": [_file_digest(p) for p in files]},
            "regime": self.regime,
            "param": self.param,
            "method": self.method.to_json(),
            "sae": None if self.sae is None else [_file_digest(self.sae.path), self.sae.width, self.sae.l0],
            "seed": self.seed,
        }

    @property
    def task_hash(self) -> str:
        return content_hash(self.key)


# ------------------------------------------------------------------ per-task work


@functools.lru_cache(maxsize=8)
def _load(ds: DatasetManifest):
    return load_dataset(ds), load_ood(ds)


@functools.lru_cache(maxsize=8)
def _sae(path: str, l0, name):
    return read_sae(path, l0=l0, name=name)


def _regime_data(task: Task):
    data, ood = _load(task.dataset)
    value = task.param
    if task.regime == "shift":
        if ood is None:
            raise ValueError(f"{task.dataset.dataset_id}: covariate shift needs OOD files")
    seed = derive_seed(task.seed, task.dataset.dataset_id, "regime", task.regime, value)
    spec = RegimeSpec(task.regime, value, seed, ood=ood if task.regime == "shift" else None)
    return apply_regime(data, spec)


def _validation_plan(pool_targets, n_train: int, n_val: int, seed: int):
    n = n_train + n_val
    if n > 128 and n_val > 0:
        return holdout_plan(np.arange(n_train), np.arange(n_train, n))
    return make_cv_plan(n, seed, pool_targets)


def _features(task: Task, data, pool):
    """Feature matrix for every example, with SAE selection fit on the training pool."""
    m = task.method
    x = data.features
    if not isinstance(x, ActivationTensor):
        x = ActivationTensor(np.asarray(x))
    if m.features == "act":
        if m.pooling == "concat_pca":
            return fit_token_pca(x, 20, rows=pool).transform(x)
        return pool_activations(x, m.pooling)
    sae = _sae(task.sae.path, task.sae.l0, task.sae.sae_id)
    z = encode(x, sae)
    if z.ndim == 3:
        z = pool_latents(z, x.token_mask, m.pooling)
    if m.binarize is not None:
        z = binarize(z, m.binarize)
    sel = select_top_k(z[pool], data.targets[pool], min(m.k, z.shape[1]))
    return z[:, sel.indices]


def _attention_task(task: Task, data, pool, plan, fit_seed):
    x = data.features if isinstance(data.features, ActivationTensor) else ActivationTensor(data.features)
    xp = x.take(pool)
    yp = data.targets[pool]

    def fit(xs, ys, hp, seed):
        probe = train_attn_probe(xs, ys, hp, seed=seed)
        return lambda xv: attn_logits(probe, xv)

    best, best_val = None, -np.inf
    for hp in ATTENTION_GRID:
        try:
            val = evaluate_candidate("attention", hp, xp, yp, plan, fit_seed, fit=fit)
        except ValueError:
            continue
        if val > best_val:
            best, best_val = hp, val
    if best is None:
        raise ValueError("attention probe: every candidate failed")
    probe = train_attn_probe(xp, yp, best, seed=fit_seed)
    test = data.split.test
    return dict(best), best_val, auc(attn_logits(probe, x.take(test)), data.targets[test])


def run_task(task: Task) -> dict:
    """Execute one task; returns a result row (or raises)."""
    m = task.method
    data = _regime_data(task)
    split = data.split
    pool = split.pool
    y = data.targets
    fit_seed = derive_seed(task.seed, task.dataset.dataset_id, m.method_id)
    plan = _validation_plan(y[pool], len(split.train), len(split.val), fit_seed)
    if m.family == "attention":
        hp, auc_val, auc_test = _attention_task(task, data, pool, plan, fit_seed)
    else:
        X = _features(task, data, pool)
        n_fit = min(len(tr) for tr, _ in plan.folds)
        reg = "l1" if m.features == "sae" else "l2"
        grid = probes.default_grid(m.family, n_fit, X.shape[1], seed=fit_seed, reg=reg)
        hp, auc_val = select_hyperparams(m.family, grid, X[pool], y[pool], plan, fit_seed)
        model = probes.train(m.family, X[pool], y[pool], hp, seed=fit_seed)
        test = split.test
        auc_test = auc(probes.score(model, X[test]), y[test])
    rec = EvalRecord(
        method_id=m.method_id,
        auc_val=auc_val,
        auc_test=auc_test,
        family=m.family,
        feature_source=m.features,
        pooling=m.pooling,
        k=m.k,
        width=None if task.sae is None else task.sae.width,
        l0=None if task.sae is None else task.sae.l0,
        hyperparams=hp,
        seed=task.seed,
        dataset_id=task.dataset.dataset_id,
        regime=task.regime,
        param=task.param,
        manifest_hash=task.manifest_hash,
    )
    row = record_to_row(rec)
    row["task_hash"] = task.task_hash
    return row


def _safe_run(task: Task):
    try:
        return task.task_hash, run_task(task), None
    except Exception as exc:  # recorded per task; the sweep continues
        return task.task_hash, None, f"{type(exc).__name__}: {exc}"


# ------------------------------------------------------------------- persistence


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True)
    return str(v)


def record_to_row(rec: EvalRecord) -> dict:
    d = rec.to_dict()
    return {c: d.get(c) for c in RESULT_COLUMNS if c != "task_hash"}


def _parse_opt(v, cast):
    return None if v in ("", None) else cast(v)


def row_to_record(row: dict) -> EvalRecord:
    return EvalRecord(
        method_id=row["method_id"],
        auc_val=float(row["auc_val"]),
        auc_test=float(row["auc_test"]),
        family=row["family"],
        feature_source=row["feature_source"],
        pooling=row["pooling"],
        k=_parse_opt(row["k"], int),
        width=_parse_opt(row["width"], int),
        l0=_parse_opt(row["l0"], float),
        hyperparams=json.loads(row["hyperparams"]) if row.get("hyperparams") else {},
        seed=int(row["seed"]),
        dataset_id=row["dataset_id"],
        regime=row["regime"],
        param=_parse_opt(row["param"], float),
        manifest_hash=row.get("manifest_hash", ""),
    )


def read_records(results_dir) -> list[EvalRecord]:
    path = Path(results_dir) / "results.csv"
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return [row_to_record(r) for r in csv.DictReader(fh)]


def _append_rows(path: Path, rows: list[dict]) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c)) for c in RESULT_COLUMNS})


def build_tasks(manifest: ExperimentManifest, seed: int | None = None, only_regime: str | None = None) -> list[Task]:
    seed = manifest.seed if seed is None else seed
    tasks = []
    for ds in manifest.datasets:
        for kind, value in manifest.regime_points(only_regime):
            for m in manifest.methods:
                sae = manifest.saes.get(m.sae) if m.features == "sae" else None
                tasks.append(Task(ds, kind, value, m, sae, seed, manifest.manifest_hash))
    return tasks


def run_experiment(manifest: ExperimentManifest, *, out=None, seed: int | None = None,
                   workers: int = 1, only_regime: str | None = None) -> dict:
    """Run every pending task, then refresh ``quivers.csv``. Returns run statistics."""
    out = Path(out or manifest.output)
    out.mkdir(parents=True, exist_ok=True)
    index_path = out / "index.json"
    index = json.loads(index_path.read_text()) if index_path.exists() else {}
    tasks = build_tasks(manifest, seed, only_regime)
    pending = [t for t in tasks if t.task_hash not in index]
    log.info("%d tasks, %d pending", len(tasks), len(pending))
    if workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_safe_run, pending))
    else:
        outcomes = [_safe_run(t) for t in pending]
    rows, failures = [], []
    for (h, row, err), task in zip(outcomes, pending):
        if err is None:
            rows.append(row)
            index[h] = {"status": "done", "method_id": task.method.method_id}
        else:
            failures.append({"task_hash": h, "dataset_id": task.dataset.dataset_id,
                             "regime": task.regime, "param": task.param,
                             "method_id": task.method.method_id, "error": err})
            index[h] = {"status": "failed", "method_id": task.method.method_id}
            log.warning("task %s failed: %s", task.method.method_id, err)
    _append_rows(out / "results.csv", rows)
    if failures:
        with open(out / "failures.jsonl", "a") as fh:
            for f in failures:
                fh.write(json.dumps(f) + "\n")
    index_path.write_text(json.dumps(index, indent=1, sort_keys=True))
    quivers = write_quivers(out)
    return {"tasks": len(tasks), "computed": len(pending), "failed": len(failures),
            "quiver_results": len(quivers)}


# ---------------------------------------------------------------------- quivers


def _group_key(rec: EvalRecord):
    return (rec.dataset_id, rec.regime, rec.param)


def compute_quivers(records: list[EvalRecord]) -> list[dict]:
    groups: dict = {}
    for rec in records:
        groups.setdefault(_group_key(rec), []).append(rec)
    rows = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], -math.inf if k[2] is None else k[2])):
        recs = sorted(groups[key], key=lambda r: r.method_id)
        for name in QUIVERS:
            members = [r for r in recs if name == "baselines+sae" or not r.is_sae]
            if not members:
                continue
            q = quiver_select(members)
            rows.append({
                "dataset_id": key[0], "regime": key[1], "param": key[2], "quiver": name,
                "method_id": q.method_id, "is_sae": q.chosen.is_sae, "auc_val": q.chosen.auc_val,
                "auc_test": q.auc_test, "tie_break_applied": q.tie_break_applied,
            })
    return rows


QUIVER_COLUMNS = ["dataset_id", "regime", "param", "quiver", "method_id", "is_sae",
                  "auc_val", "auc_test", "tie_break_applied"]


def write_quivers(results_dir) -> list[dict]:
    rows = compute_quivers(read_records(results_dir))
    _write_csv(Path(results_dir) / "quivers.csv", QUIVER_COLUMNS, rows)
    return rows


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c)) for c in columns})


# ----------------------------------------------------------------------- report


def mean_ci(values) -> tuple[float, float, float]:
    """Mean with a 95% normal-approximation interval (zero width for one value)."""
    v = np.asarray(values, dtype=np.float64)
    mean = float(v.mean())
    if len(v) < 2:
        return mean, mean, mean
    half = 1.96 * float(v.std(ddof=1)) / math.sqrt(len(v))
    return mean, mean - half, mean + half


def _point_sort(k):
    return (k[0], -math.inf if k[1] is None else k[1])


def report(results_dir) -> dict:
    """Write summary CSVs under ``results_dir/report`` and return them as row lists."""
    results_dir = Path(results_dir)
    records = read_records(results_dir)
    if not records:
        raise ValueError(f"no EvalRecords in {results_dir}")
    out = results_dir / "report"
    out.mkdir(exist_ok=True)

    by_method: dict = {}
    for r in records:
        by_method.setdefault((r.regime, r.param, r.method_id), []).append(r.auc_test)
    method_rows = []
    for (regime, param, mid) in sorted(by_method, key=lambda k: (*_point_sort(k[:2]), k[2])):
        vals = by_method[(regime, param, mid)]
        mean, lo, hi = mean_ci(vals)
        method_rows.append({"regime": regime, "param": param, "method_id": mid,
                            "n_datasets": len(vals), "mean_auc_test": mean, "ci_low": lo, "ci_high": hi})

    quivers = compute_quivers(records)
    per_point: dict = {}
    for q in quivers:
        per_point.setdefault((q["regime"], q["param"], q["dataset_id"]), {})[q["quiver"]] = q
    deltas: dict = {}
    for (regime, param, _), qs in per_point.items():
        if "baselines+sae" not in qs:
            continue
        with_sae = qs["baselines+sae"]
        base = qs.get("baselines", with_sae)
        d = deltas.setdefault((regime, param), {"with": [], "base": [], "delta": [], "sae": 0})
        d["with"].append(with_sae["auc_test"])
        d["base"].append(base["auc_test"])
        d["delta"].append(with_sae["auc_test"] - base["auc_test"])
        d["sae"] += int(bool(with_sae["is_sae"]))
    delta_rows, chosen_rows = [], []
    for key in sorted(deltas, key=_point_sort):
        d = deltas[key]
        m_w, _, _ = mean_ci(d["with"])
        m_b, _, _ = mean_ci(d["base"])
        m_d, lo, hi = mean_ci(d["delta"])
        delta_rows.append({"regime": key[0], "param": key[1], "n_datasets": len(d["delta"]),
                           "mean_auc_with_sae": m_w, "mean_auc_baselines": m_b,
                           "mean_delta": m_d, "ci_low": lo, "ci_high": hi})
        chosen_rows.append({"regime": key[0], "param": key[1], "n_datasets": len(d["delta"]),
                            "sae_chosen": d["sae"]})

    long_rows = [{"dataset_id": r.dataset_id, "regime": r.regime, "param": r.param,
                  "method_id": r.method_id, "auc_val": r.auc_val, "auc_test": r.auc_test}
                 for r in sorted(records, key=lambda r: (r.dataset_id, *_point_sort((r.regime, r.param)), r.method_id))]
    method_ids = sorted({r.method_id for r in records})
    matrix: dict = {}
    for r in records:
        matrix.setdefault((r.dataset_id, r.regime, r.param), {})[r.method_id] = r.auc_test
    matrix_rows = [{"dataset_id": k[0], "regime": k[1], "param": k[2], **v}
                   for k, v in sorted(matrix.items(), key=lambda kv: (kv[0][0], *_point_sort(kv[0][1:])))]

    h2h_rows = []
    for key, recs in _groups(records).items():
        if key[1] not in ("noise", "shift"):
            continue
        baselines = [r for r in recs if r.method_id.startswith("logreg/act/")]
        for b in baselines:
            for s in (r for r in recs if r.is_sae):
                h2h_rows.append({"dataset_id": key[0], "regime": key[1], "param": key[2],
                                 "sae_method": s.method_id, "baseline_method": b.method_id,
                                 "sae_minus_baseline": head_to_head(s, b)})

    _write_csv(out / "method_means.csv", ["regime", "param", "method_id", "n_datasets",
                                          "mean_auc_test", "ci_low", "ci_high"], method_rows)
    _write_csv(out / "quiver_deltas.csv", ["regime", "param", "n_datasets", "mean_auc_with_sae",
                                           "mean_auc_baselines", "mean_delta", "ci_low", "ci_high"], delta_rows)
    _write_csv(out / "sae_chosen.csv", ["regime", "param", "n_datasets", "sae_chosen"], chosen_rows)
    _write_csv(out / "per_dataset.csv", ["dataset_id", "regime", "param", "method_id",
                                         "auc_val", "auc_test"], long_rows)
    _write_csv(out / "per_dataset_matrix.csv", ["dataset_id", "regime", "param", *method_ids], matrix_rows)
    _write_csv(out / "head_to_head.csv", ["dataset_id", "regime", "param", "sae_method",
                                          "baseline_method", "sae_minus_baseline"], h2h_rows)
    return {"method_means": method_rows, "quiver_deltas": delta_rows, "sae_chosen": chosen_rows,
            "per_dataset": long_rows, "per_dataset_matrix": matrix_rows, "head_to_head": h2h_rows}


def _groups(records):
    groups: dict = {}
    for r in records:
        groups.setdefault(_group_key(r), []).append(r)
    return groups
