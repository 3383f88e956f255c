"""Command line entry points for fixtures, encoding, sweeps, quivers, reports and diagnostics."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, harness, probes, synth
from .metrics import make_cv_plan, select_hyperparams
from .regimes import KINDS
from .sae import encode, read_sae, select_top_k
from .tensor_io import ActivationTensor, DatasetManifest, load_dataset, read_labels, read_tensor, write_tensor

log = logging.getLogger("sparseprobe")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def cmd_gen_fixture(args) -> int:
    paths = synth.write_fixture(args.out, seed=args.seed or 0, n=args.n, n_ood=args.n_ood,
                                d_model=args.d_model, w_true=args.w_true,
                                noise_sigma=args.noise_sigma, n_tokens=args.tokens)
    print(json.dumps(paths, indent=2))
    return 0


def cmd_encode(args) -> int:
    sae = read_sae(args.sae)
    x = read_tensor(args.activations)
    z = encode(x, sae)
    if z.ndim == 2:
        z = z[:, None, :]
    out = Path(args.out)
    write_tensor(ActivationTensor(z.astype(np.float32), x.token_mask), out)
    print(f"wrote {z.shape[0]}x{z.shape[1]}x{z.shape[2]} latents to {out}")
    if args.targets:
        y = read_labels(args.targets)
        last = z[:, -1, :]
        sel = select_top_k(last, y, min(args.k, last.shape[1]))
        doc = {"indices": sel.indices.tolist(), "scores": sel.scores.tolist()}
        out.with_suffix(".topk.json").write_text(json.dumps(doc, indent=1) + "\n")
        print(f"top-{len(sel)} latents: {sel.indices[:10].tolist()}")
    return 0


def cmd_run(args) -> int:
    manifest = harness.ExperimentManifest.load(args.manifest)
    stats = harness.run_experiment(manifest, out=args.out, seed=args.seed, workers=args.workers,
                                   only_regime=args.regime)
    print(json.dumps(stats))
    return 1 if stats["failed"] and stats["failed"] == stats["computed"] else 0


def _results_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    if args.manifest:
        return Path(harness.ExperimentManifest.load(args.manifest).output)
    raise SystemExit("need --out or --manifest")


def cmd_quiver(args) -> int:
    rows = harness.write_quivers(_results_dir(args))
    for r in rows:
        if args.regime and r["regime"] != args.regime:
            continue
        print(f"{r['dataset_id']}\t{r['regime']}\t{r['param']}\t{r['quiver']}\t"
              f"{r['method_id']}\tval={r['auc_val']:.4f}\ttest={r['auc_test']:.4f}")
    return 0


def cmd_report(args) -> int:
    tables = harness.report(_results_dir(args))
    for name, rows in tables.items():
        print(f"{name}: {len(rows)} rows")
    return 0


def cmd_diagnose(args) -> int:
    ds = DatasetManifest.load(args.manifest)
    data = load_dataset(ds)
    X = data.features.last_token()
    y = data.targets
    pool = data.split.pool
    grid = probes.default_grid("logreg", len(pool), X.shape[1], reg="l2")
    plan = make_cv_plan(len(pool), args.seed or 0, y[pool])
    hp, _ = select_hyperparams("logreg", grid, X[pool], y[pool], plan, args.seed or 0)
    model = probes.train("logreg", X[pool], y[pool], hp)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    rows = diagnostics.mine_disagreements(model, X, y, args.top)
    with open(out / "disagreements.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label", "confidence"])
        for r in rows:
            w.writerow([r.index, r.label, repr(r.confidence)])
    for r in rows:
        print(f"{r.index}\tlabel={r.label}\tconfidence={r.confidence:.4f}")
    if args.token_ids:
        ids = read_labels(args.token_ids)
        table = diagnostics.top_activating_tokens(model, data.features, ids, args.min_occurrences)
        diagnostics.write_token_table(table, out / "top_tokens.csv")
        print(f"{len(table)} token ids written to {out / 'top_tokens.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparseprobe", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, manifest=True):
        if manifest:
            sp.add_argument("--manifest", type=Path)
        sp.add_argument("--seed", type=_u64)
        sp.add_argument("--out", type=Path)
        return sp

    g = common(sub.add_parser("gen-fixture", help="write a synthetic fixture with an oracle SAE"), manifest=False)
    g.add_argument("--n", type=int, default=1024)
    g.add_argument("--n-ood", type=int, default=300)
    g.add_argument("--d-model", type=int, default=64)
    g.add_argument("--w-true", type=int, default=256)
    g.add_argument("--noise-sigma", type=float, default=0.05)
    g.add_argument("--tokens", type=int, default=1)
    g.set_defaults(func=cmd_gen_fixture)

    e = common(sub.add_parser("encode", help="encode activations with SAE weights"), manifest=False)
    e.add_argument("--sae", type=Path, required=True)
    e.add_argument("--activations", type=Path, required=True)
    e.add_argument("--targets", type=Path, help="also write the top-k mean-difference latents")
    e.add_argument("--k", type=int, default=16)
    e.set_defaults(func=cmd_encode)

    r = common(sub.add_parser("run", help="run an experiment manifest"))
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--regime", choices=KINDS)
    r.set_defaults(func=cmd_run)

    q = common(sub.add_parser("quiver", help="recompute quiver selections of a results directory"))
    q.add_argument("--regime", choices=KINDS)
    q.set_defaults(func=cmd_quiver)

    rep = common(sub.add_parser("report", help="write summary tables for a results directory"))
    rep.set_defaults(func=cmd_report)

    d = common(sub.add_parser("diagnose", help="mine label disagreements for a dataset manifest"))
    d.add_argument("--top", type=int, default=20)
    d.add_argument("--token-ids", type=Path, help="token id per valid token, one per line")
    d.add_argument("--min-occurrences", type=int, default=10)
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("run", "diagnose") and args.manifest is None:
        print(f"{args.command}: --manifest is required", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
