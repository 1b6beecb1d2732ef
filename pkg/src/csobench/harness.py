"""Repeated train/test evaluation, equal-count binning and confusion matrices."""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import CSO, SINGLE, cnn, gp, logreg
from .io import Config
from .kernels import MaternKernel
from .preprocess import fit_pca, normalize_batch, project, split
from .seeding import child_rng, derive_seed

log = logging.getLogger(__name__)

MODEL_KINDS = ("gp", "logreg", "cnn")
COVARIATES = ("separation", "delta_mag", "primary_mag")
# Curves over separation and delta_mag only make sense for true CSOs.
CSO_ONLY = {"separation": True, "delta_mag": True, "primary_mag": False}
RESULT_COLUMNS = ("model", "run", "item_id", "true", "pred", "separation_arcsec", "delta_mag", "primary_mag")


@dataclass
class RunResult:
    model: str
    run: int
    seed: int
    item_ids: np.ndarray
    true: np.ndarray
    pred: np.ndarray
    scores: np.ndarray = None  # probability-like CSO score per item
    variance: np.ndarray = None  # GP posterior variance
    ambiguous: np.ndarray = None
    extra: dict = field(default_factory=dict)

    @property
    def accuracy(self):
        return float(np.mean(self.true == self.pred))


@dataclass
class Bins:
    edges: list  # (lo, hi) per bin
    assignment: np.ndarray  # bin index per value, aligned with the input order
    x_mean: np.ndarray
    counts: np.ndarray


@dataclass
class BinnedAccuracy:
    covariate: str
    model: str
    bin_lo: np.ndarray
    bin_hi: np.ndarray
    x_mean: np.ndarray
    acc_mean: np.ndarray
    acc_std: np.ndarray
    n: np.ndarray
    per_run: np.ndarray  # (runs, bins), NaN where a run had no test items in the bin
    per_run_correct: np.ndarray
    per_run_total: np.ndarray


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [true, pred], index 0 = single, 1 = CSO

    @property
    def rates(self):
        tot = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, tot, out=np.full(self.counts.shape, np.nan), where=tot > 0)

    @property
    def false_positive_rate(self):
        return float(self.rates[SINGLE, CSO])

    @property
    def false_negative_rate(self):
        return float(self.rates[CSO, SINGLE])


def equal_count_bins(values, n_bins=12):
    """Partition sorted values into contiguous bins of size floor(n/k) or ceil(n/k).

    The first ``n % k`` bins take the extra item; ties keep their stable sort order.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < n_bins:
        raise ValueError(f"need at least {n_bins} values for {n_bins} bins, got {n}")
    order = np.argsort(values, kind="stable")
    base, rem = divmod(n, n_bins)
    sizes = np.full(n_bins, base)
    sizes[:rem] += 1
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = np.repeat(np.arange(n_bins), sizes)
    sv = values[order]
    stops = np.cumsum(sizes)
    starts = stops - sizes
    edges = [(float(sv[a]), float(sv[b - 1])) for a, b in zip(starts, stops)]
    x_mean = np.array([sv[a:b].mean() for a, b in zip(starts, stops)])
    return Bins(edges=edges, assignment=assignment, x_mean=x_mean, counts=sizes)


def covariate_values(dataset, covariate):
    return {"separation": dataset.separation, "delta_mag": dataset.delta_mag, "primary_mag": dataset.primary_mag}[
        covariate
    ]


def dataset_bins(dataset, covariate, n_bins=12):
    """Bins fixed once from the full dataset; returns (bins, item_id -> bin lookup)."""
    vals = covariate_values(dataset, covariate)
    mask = dataset.labels == CSO if CSO_ONLY[covariate] else np.ones(len(dataset), dtype=bool)
    bins = equal_count_bins(vals[mask], n_bins)
    lookup = dict(zip(dataset.item_ids[mask].tolist(), bins.assignment.tolist()))
    return bins, lookup


def binned_accuracy(results, dataset, covariate, n_bins=12):
    """Per-bin accuracy across runs for one model's results."""
    bins, lookup = dataset_bins(dataset, covariate, n_bins)
    correct = np.zeros((len(results), n_bins))
    total = np.zeros((len(results), n_bins))
    for r, res in enumerate(results):
        for iid, t, p in zip(res.item_ids.tolist(), res.true, res.pred):
            b = lookup.get(iid)
            if b is None:
                continue
            total[r, b] += 1
            correct[r, b] += t == p
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(total > 0, correct / np.maximum(total, 1), np.nan)
    mean = np.array([np.nan if np.all(np.isnan(c)) else np.nanmean(c) for c in acc.T])
    std = np.array([np.nan if np.all(np.isnan(c)) else np.nanstd(c) for c in acc.T])
    return BinnedAccuracy(
        covariate=covariate,
        model=results[0].model if results else "",
        bin_lo=np.array([e[0] for e in bins.edges]),
        bin_hi=np.array([e[1] for e in bins.edges]),
        x_mean=bins.x_mean,
        acc_mean=mean,
        acc_std=std,
        n=bins.counts,
        per_run=acc,
        per_run_correct=correct,
        per_run_total=total,
    )


def confusion(true, pred):
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.size == 0:
        raise ValueError("confusion matrix needs at least one result")
    counts = np.zeros((2, 2), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    return ConfusionMatrix(counts)


def mean_confusion(results):
    """Run-averaged counts and run-averaged row-normalized rates."""
    mats = [confusion(r.true, r.pred) for r in results]
    counts = np.mean([m.counts for m in mats], axis=0)
    rates = np.mean([m.rates for m in mats], axis=0)
    return counts, rates


# --------------------------------------------------------------------------
# Models


def _pca_features(normed, train_idx, test_idx, cfg):
    model = fit_pca(normed[train_idx], cfg["pca.n_components"])
    return project(model, normed[train_idx]), project(model, normed[test_idx])


def fit_predict(kind, dataset, normed, train_idx, test_idx, cfg, seed):
    """Train one model on ``train_idx`` and predict ``test_idx``; returns (pred, scores, variance, ambiguous, extra)."""
    y = dataset.labels
    if kind == "gp":
        Xtr, Xte = _pca_features(normed, train_idx, test_idx, cfg)
        kern = MaternKernel(cfg["gp.nu"], cfg["gp.length_scale"], cfg["gp.variance"])
        model = gp.fit(
            Xtr,
            y[train_idx],
            k_neighbors=min(cfg["gp.k_neighbors"], len(train_idx)),
            kernel=kern,
            nugget=cfg["gp.nugget"],
            ambiguity_threshold=cfg["gp.ambiguity_threshold"],
        )
        preds = gp.classify_batch(Xte, model)
        means = np.array([p.mean for p in preds]).reshape(-1, 2)
        return (
            np.array([p.label for p in preds], dtype=np.int64),
            means[:, CSO],
            np.array([p.variance for p in preds]),
            np.array([p.ambiguous for p in preds]),
            {},
        )
    if kind == "logreg":
        Xtr, Xte = _pca_features(normed, train_idx, test_idx, cfg)
        plan = logreg.CvPlan(
            folds=cfg["logreg.folds"],
            lambda_grid=cfg["logreg.lambda_grid"],
            max_iter=cfg["logreg.max_iter"],
            tol=cfg["logreg.tol"],
        )
        lam, model = logreg.cross_validate(Xtr, y[train_idx], plan, np.random.default_rng(seed))
        p = logreg.predict_proba(model, Xte)
        return (p >= 0.5).astype(np.int64), p, None, None, {"lambda": lam}
    if kind == "cnn":
        size = dataset.pixels.shape[1]
        images = normed.reshape(-1, size, size, 1)
        layers = cnn.DESK_LAYERS if cfg["cnn.desk"] else cnn.DEFAULT_LAYERS
        model = cnn.CnnModel(layers, (size, size, 1), seed=derive_seed(seed, "init"))
        params = [v for _, _, v in model.parameters()]
        adam = cnn.Adam(params, lr=cfg["cnn.learning_rate"])
        hist = cnn.train(
            model,
            images[train_idx],
            y[train_idx],
            epochs=cfg["cnn.epochs"],
            batch_size=cfg["cnn.batch_size"],
            adam=adam,
            rng=np.random.default_rng(derive_seed(seed, "train")),
        )
        probs = model.predict_proba(images[test_idx])
        return np.argmax(probs, axis=1), probs[:, CSO], None, None, {"final_loss": hist[-1] if hist else None}
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def run_splits(dataset, n_runs, root_seed, train_fraction=0.8):
    """Per-run (train, test) index arrays, derived from the root seed only."""
    out = []
    for run in range(n_runs):
        tr, te = split(len(dataset), train_fraction, child_rng(root_seed, f"split/{run}"))
        out.append((tr, te))
    return out


def _canonical(dataset, idx):
    # Order by item id so results do not depend on the dataset's storage order.
    idx = np.asarray(idx)
    return idx[np.argsort(dataset.item_ids[idx], kind="stable")]


def run_experiment(kind, dataset, n_runs, root_seed, cfg=None, splits=None, on_run=None, normed=None):
    """Train/evaluate ``kind`` on ``n_runs`` fresh 80/20 splits of ``dataset``.

    ``splits`` overrides the seed-derived splits; ``on_run`` is called with
    each finished RunResult so callers can persist partial progress.
    """
    cfg = cfg if cfg is not None else Config()
    if splits is None:
        splits = run_splits(dataset, n_runs, root_seed, cfg["harness.train_fraction"])
    if normed is None:
        normed = normalize_batch(dataset.pixels)
    results = []
    for run, (tr, te) in enumerate(splits[:n_runs]):
        tr, te = _canonical(dataset, tr), _canonical(dataset, te)
        seed = derive_seed(root_seed, f"{kind}/{run}")
        pred, scores, var, amb, extra = fit_predict(kind, dataset, normed, tr, te, cfg, seed)
        res = RunResult(kind, run, seed, dataset.item_ids[te], dataset.labels[te], pred, scores, var, amb, extra)
        log.info("%s run %d: accuracy %.4f", kind, run, res.accuracy)
        results.append(res)
        if on_run is not None:
            on_run(res)
    return results


def summarize(results):
    acc = np.array([r.accuracy for r in results])
    return float(acc.mean()), float(acc.std())


# --------------------------------------------------------------------------
# Artifacts


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def result_rows(res, dataset):
    pos = {iid: i for i, iid in enumerate(dataset.item_ids.tolist())}
    for iid, t, p in zip(res.item_ids.tolist(), res.true.tolist(), res.pred.tolist()):
        i = pos[iid]
        yield (res.model, res.run, iid, t, p, dataset.separation[i], dataset.delta_mag[i], dataset.primary_mag[i])


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_artifacts(outdir, results_by_model, dataset, n_bins=12, plots=False):
    """Write results/bins/confusion/summary CSVs (and optional SVG curves); returns the bin tables."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = [row for results in results_by_model.values() for res in results for row in result_rows(res, dataset)]
    write_csv(outdir / "results.csv", RESULT_COLUMNS, rows)

    score_rows = []
    for results in results_by_model.values():
        for res in results:
            for i, iid in enumerate(res.item_ids.tolist()):
                score_rows.append(
                    (
                        res.model,
                        res.run,
                        iid,
                        None if res.scores is None else res.scores[i],
                        None if res.variance is None else res.variance[i],
                        None if res.ambiguous is None else int(res.ambiguous[i]),
                    )
                )
    write_csv(outdir / "scores.csv", ("model", "run", "item_id", "score_cso", "variance", "ambiguous"), score_rows)

    tables = {}
    for cov in COVARIATES:
        bin_rows = []
        for model, results in results_by_model.items():
            ba = binned_accuracy(results, dataset, cov, n_bins)
            tables[(model, cov)] = ba
            for b in range(n_bins):
                bin_rows.append((model, ba.bin_lo[b], ba.bin_hi[b], ba.x_mean[b], ba.acc_mean[b], ba.acc_std[b], ba.n[b]))
        write_csv(outdir / f"bins_{cov}.csv", ("model", "bin_lo", "bin_hi", "x_mean", "acc_mean", "acc_std", "n"), bin_rows)

    conf_rows, summary_rows = [], []
    for model, results in results_by_model.items():
        counts, rates = mean_confusion(results)
        fpr = rates[SINGLE, CSO]
        fnr = rates[CSO, SINGLE]
        conf_rows.append((model, *counts.ravel(), *rates.ravel(), fpr, fnr))
        mean, std = summarize(results)
        summary_rows.append((model, len(results), mean, std))
    write_csv(
        outdir / "confusion.csv",
        (
            "model",
            "single_single",
            "single_cso",
            "cso_single",
            "cso_cso",
            "rate_single_single",
            "rate_single_cso",
            "rate_cso_single",
            "rate_cso_cso",
            "false_positive_rate",
            "false_negative_rate",
        ),
        conf_rows,
    )
    write_csv(outdir / "summary.csv", ("model", "runs", "acc_mean", "acc_std"), summary_rows)
    if plots:
        plot_curves(outdir, tables)
    return tables


def plot_curves(outdir, tables):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "csobench"
    labels = {"separation": "Angular separation [arcsec]", "delta_mag": "Magnitude difference", "primary_mag": "Primary magnitude"}
    for cov in COVARIATES:
        fig, ax = plt.subplots(figsize=(6, 4))
        for (model, c), ba in sorted(tables.items()):
            if c == cov:
                ax.errorbar(ba.x_mean, ba.acc_mean, yerr=ba.acc_std, marker="o", capsize=3, label=model)
        ax.set_xlabel(labels[cov])
        ax.set_ylabel("Accuracy")
        ax.legend()
        fig.tight_layout()
        fig.savefig(Path(outdir) / f"curves_{cov}.svg", metadata={"Date": None})
        plt.close(fig)
