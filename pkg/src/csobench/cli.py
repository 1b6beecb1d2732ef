"""Command-line front end: ``csobench simulate | evaluate | sweep | report``."""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import CSO, LABEL_NAMES, harness
from .io import Config, dataset_from_cutouts, default_out_root, load_dataset, write_dataset
from .preprocess import normalize_batch
from .sim import simulate_dataset

log = logging.getLogger("csobench")

FULL_SCALE = (6977, 4977)
DESK_SCALE = (2000, 2000)

SWEEP_PARAMS = {
    "gp": {
        "k": "gp.k_neighbors",
        "nu": "gp.nu",
        "length_scale": "gp.length_scale",
        "nugget": "gp.nugget",
        "n_components": "pca.n_components",
    },
    "logreg": {"n_components": "pca.n_components", "max_iter": "logreg.max_iter", "folds": "logreg.folds"},
    "cnn": {"epochs": "cnn.epochs", "batch_size": "cnn.batch_size", "learning_rate": "cnn.learning_rate"},
}


def covariate_summary(dataset):
    out = {
        "n_single": int(np.sum(dataset.labels != CSO)),
        "n_cso": int(np.sum(dataset.labels == CSO)),
    }
    for cov in harness.COVARIATES:
        v = harness.covariate_values(dataset, cov)
        v = v[dataset.labels == CSO] if harness.CSO_ONLY[cov] else v
        if v.size:
            out[cov] = {
                "min": float(v.min()),
                "max": float(v.max()),
                "mean": float(v.mean()),
                "std": float(v.std()),
            }
    return out


def _load_config(args):
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    return cfg


def cmd_simulate(args):
    cfg = _load_config(args)
    sim_cfg = cfg.sim_config()
    n_single, n_cso = FULL_SCALE if args.full_scale else DESK_SCALE
    n_single = args.n_single if args.n_single is not None else n_single
    n_cso = args.n_cso if args.n_cso is not None else n_cso
    out = Path(args.out) if args.out else default_out_root() / "dataset"
    ds = dataset_from_cutouts(simulate_dataset(sim_cfg, n_single, n_cso, args.seed), sim_cfg)
    manifest = write_dataset(out, ds, force=args.force)
    summary = covariate_summary(ds)
    print(f"wrote {len(ds)} cutouts to {out} (sha256 {manifest['pixels_sha256'][:16]}...)")
    print(json.dumps(summary, indent=1, sort_keys=True))
    return 0


def _apply_model_flags(cfg, args):
    mapping = {
        "nu": "gp.nu",
        "length_scale": "gp.length_scale",
        "k": "gp.k_neighbors",
        "nugget": "gp.nugget",
        "ambiguity_threshold": "gp.ambiguity_threshold",
        "max_iter": "logreg.max_iter",
        "epochs": "cnn.epochs",
        "batch_size": "cnn.batch_size",
        "n_components": "pca.n_components",
    }
    for attr, key in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "lambda_grid", None):
        cfg["logreg.lambda_grid"] = args.lambda_grid
    if getattr(args, "desk_config", False):
        cfg["cnn.desk"] = True
    return cfg


def _kinds(model):
    return list(harness.MODEL_KINDS) if model == "all" else [model]


def evaluate(dataset, kinds, runs, cnn_runs, seed, cfg, outdir=None, plots=False):
    """Run every model kind and, if ``outdir`` is given, write artifacts there."""
    normed = normalize_batch(dataset.pixels)
    results = {}
    progress = None
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        progress = open(outdir / "runs.jsonl", "w")
    try:
        for kind in kinds:
            n = cnn_runs if kind == "cnn" else runs

            def on_run(res):
                if progress is not None:
                    rec = {"model": res.model, "run": res.run, "seed": res.seed, "accuracy": res.accuracy, "n_test": int(res.true.size)}
                    rec.update({k: v for k, v in res.extra.items() if isinstance(v, (int, float))})
                    progress.write(json.dumps(rec, sort_keys=True) + "\n")
                    progress.flush()

            try:
                results[kind] = harness.run_experiment(kind, dataset, n, seed, cfg, on_run=on_run, normed=normed)
            except Exception as exc:
                if progress is not None:
                    progress.write(json.dumps({"model": kind, "error": repr(exc)}) + "\n")
                raise
    finally:
        if progress is not None:
            progress.close()
    if outdir is not None:
        (outdir / "config.txt").write_text(cfg.to_text())
        harness.write_artifacts(outdir, results, dataset, cfg["harness.n_bins"], plots=plots)
    return results


def _run_counts(args, cfg):
    runs = args.runs if args.runs is not None else cfg["harness.runs"]
    cnn_runs = args.cnn_runs if args.cnn_runs is not None else min(runs, cfg["harness.cnn_runs"])
    return runs, cnn_runs


def cmd_evaluate(args):
    cfg = _apply_model_flags(_load_config(args), args)
    dataset = load_dataset(args.dataset)
    runs, cnn_runs = _run_counts(args, cfg)
    out = Path(args.out) if args.out else default_out_root() / "results"
    results = evaluate(dataset, _kinds(args.model), runs, cnn_runs, args.seed, cfg, out, plots=args.plots)
    for kind, res in results.items():
        mean, std = harness.summarize(res)
        print(f"{kind:7s} runs={len(res):3d} accuracy {mean:.4f} +/- {std:.4f}")
    return 0


def sweep(dataset, model, param, grid, runs, seed, cfg):
    """Mean/std overall accuracy per grid value; best = highest mean, ties -> smaller value."""
    valid = SWEEP_PARAMS.get(model)
    if valid is None:
        raise ValueError(f"unknown model {model!r}; expected one of {sorted(SWEEP_PARAMS)}")
    if param not in valid:
        raise ValueError(f"invalid parameter {param!r} for {model}; valid names: {', '.join(sorted(valid))}")
    normed = normalize_batch(dataset.pixels)
    rows = []
    for value in grid:
        c = Config(dict(cfg))
        c[valid[param]] = value
        res = harness.run_experiment(model, dataset, runs, seed, c, normed=normed)
        mean, std = harness.summarize(res)
        rows.append({"value": value, "acc_mean": mean, "acc_std": std})
    best = max(range(len(rows)), key=lambda i: (rows[i]["acc_mean"], -rows[i]["value"]))
    for i, r in enumerate(rows):
        r["best"] = i == best
    return rows


def cmd_sweep(args):
    cfg = _apply_model_flags(_load_config(args), args)
    dataset = load_dataset(args.dataset)
    grid = [float(x) for x in args.grid.split(",") if x.strip()]
    try:
        rows = sweep(dataset, args.model, args.param, grid, args.runs, args.seed, cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        harness.write_csv(
            out / "sweep.csv",
            ("model", "param", "value", "runs", "acc_mean", "acc_std", "best"),
            [(args.model, args.param, r["value"], args.runs, r["acc_mean"], r["acc_std"], int(r["best"])) for r in rows],
        )
    for r in rows:
        mark = " *" if r["best"] else ""
        print(f"{args.param}={r['value']:g}: {r['acc_mean']:.4f} +/- {r['acc_std']:.4f}{mark}")
    return 0


def read_results(path):
    """Rebuild RunResult objects from a results.csv file."""
    by_key = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["model"], int(row["run"]))
            by_key.setdefault(key, []).append((int(row["item_id"]), int(row["true"]), int(row["pred"])))
    out = {}
    for (model, run), items in sorted(by_key.items()):
        a = np.array(items, dtype=np.int64)
        out.setdefault(model, []).append(harness.RunResult(model, run, 0, a[:, 0], a[:, 1], a[:, 2]))
    return out


def cmd_report(args):
    dataset = load_dataset(args.dataset)
    results = read_results(Path(args.results) / "results.csv")
    cfg = Config.load(Path(args.results) / "config.txt") if (Path(args.results) / "config.txt").exists() else Config()
    n_bins = cfg["harness.n_bins"]
    if args.plots:
        harness.write_artifacts(args.results, results, dataset, n_bins, plots=True)
    for model, res in results.items():
        mean, std = harness.summarize(res)
        counts, rates = harness.mean_confusion(res)
        print(f"== {model}: {len(res)} runs, accuracy {mean:.4f} +/- {std:.4f}")
        print(f"   confusion (rows true {LABEL_NAMES}, cols predicted):")
        for i in range(2):
            print(f"   {LABEL_NAMES[i]:7s} " + "  ".join(f"{counts[i, j]:8.1f} ({rates[i, j]:.3f})" for j in range(2)))
        for cov in harness.COVARIATES:
            ba = harness.binned_accuracy(res, dataset, cov, n_bins)
            cells = " ".join(f"{x:.2f}:{a:.3f}" for x, a in zip(ba.x_mean, ba.acc_mean))
            print(f"   {cov:12s} {cells}")
    return 0


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def build_parser():
    p = argparse.ArgumentParser(prog="csobench", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a cutout dataset")
    s.add_argument("--n-single", type=int)
    s.add_argument("--n-cso", type=int)
    s.add_argument("--full-scale", action="store_true", help=f"default counts {FULL_SCALE} instead of {DESK_SCALE}")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_simulate)

    def model_flags(q):
        q.add_argument("--config")
        q.add_argument("--nu", type=float)
        q.add_argument("--length-scale", type=float)
        q.add_argument("--k", type=int)
        q.add_argument("--nugget", type=float)
        q.add_argument("--ambiguity-threshold", type=float)
        q.add_argument("--n-components", type=int)
        q.add_argument("--lambda-grid", type=_floats)
        q.add_argument("--max-iter", type=int)
        q.add_argument("--epochs", type=int)
        q.add_argument("--batch-size", type=int)
        q.add_argument("--desk-config", action="store_true", help="reduced CNN (16/8 channels, 128/64/32 dense)")

    e = sub.add_parser("evaluate", help="repeated train/test evaluation")
    e.add_argument("--model", choices=(*harness.MODEL_KINDS, "all"), default="all")
    e.add_argument("--dataset", required=True)
    e.add_argument("--runs", type=int)
    e.add_argument("--cnn-runs", type=int)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.add_argument("--plots", action="store_true", help="also write curves_<covariate>.svg")
    model_flags(e)
    e.set_defaults(func=cmd_evaluate)

    w = sub.add_parser("sweep", help="grid sweep of one hyperparameter")
    w.add_argument("--model", required=True, choices=harness.MODEL_KINDS)
    w.add_argument("--param", required=True)
    w.add_argument("--grid", required=True, help="comma-separated values")
    w.add_argument("--runs", type=int, default=5)
    w.add_argument("--dataset", required=True)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out")
    model_flags(w)
    w.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="summarize an evaluate output directory")
    r.add_argument("--results", required=True)
    r.add_argument("--dataset", required=True)
    r.add_argument("--plots", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FileExistsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
