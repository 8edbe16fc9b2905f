"""Metrics, cross-validation, classical baselines and benchmark reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .data import Dataset, SplitSpec, apply_normalization, fit_normalization, minmax_scale, split_dataset
from .errors import ConfigError, DimensionError
from .metrics import male, price_metrics, rmse  # noqa: F401  (re-exported)
from .spatial import idw_from_distances, knn_euclidean, knn_geodesic
from .training import FittedModel, TrainConfig, fit_model

OLS_JITTER = 1e-8


@dataclass
class MetricReport:
    dataset: str
    model: str
    mode: str
    male_best: float
    rmse_best: float
    male_avg: float | None = None
    rmse_avg: float | None = None
    n_folds: int = 1
    seed: int = 0
    fold_male: list[float] = field(default_factory=list)
    fold_rmse: list[float] = field(default_factory=list)

    CSV_COLUMNS = ("dataset", "model", "mode", "male_best", "male_avg", "rmse_best", "rmse_avg")

    def to_dict(self):
        return asdict(self)


# -- baselines -------------------------------------------------------------

def _design(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(len(X)), X])


def ols_fit(X, y) -> np.ndarray:
    """Least-squares coefficients [intercept, w...] from the normal equations.

    Singular or badly conditioned systems get OLS_JITTER on the diagonal.
    """
    A = _design(X)
    if A.shape[0] == 0:
        raise ConfigError("OLS needs at least one training row")
    y = np.asarray(y, dtype=np.float64)
    G = A.T @ A
    rhs = A.T @ y
    if np.linalg.cond(G) < 1e12:
        try:
            return scipy.linalg.cho_solve(scipy.linalg.cho_factor(G), rhs)
        except np.linalg.LinAlgError:
            pass
    return scipy.linalg.solve(G + OLS_JITTER * np.eye(G.shape[0]), rhs, assume_a="sym")


def baseline_ols(X_train, y_train, X_test) -> np.ndarray:
    coef = ols_fit(X_train, y_train)
    Xt = _design(X_test)
    if Xt.shape[1] != len(coef):
        raise DimensionError(f"test matrix has {Xt.shape[1] - 1} columns, model was fit on {len(coef) - 1}")
    return Xt @ coef


def baseline_knn(X_train, y_train, X_test, k: int = 10) -> np.ndarray:
    """Mean target of the k Euclidean-nearest training rows (ties by row order)."""
    X_train = np.asarray(X_train, dtype=np.float64)
    if k < 1 or k > len(X_train):
        raise ConfigError(f"k={k} is out of range for {len(X_train)} training rows")
    X_test = np.asarray(X_test, dtype=np.float64)
    if X_test.shape[1] != X_train.shape[1]:
        raise DimensionError(f"test has {X_test.shape[1]} columns, train has {X_train.shape[1]}")
    rows = np.arange(len(X_train))
    # queries never share ids with training rows here
    idx, _ = knn_euclidean(X_test, np.full(len(X_test), -1), X_train, rows, k)
    return np.asarray(y_train, dtype=np.float64)[idx].mean(axis=1)


def baseline_idw(train: Dataset, test: Dataset, k: int, power: float = 2.0) -> np.ndarray:
    """IDW over the k geodesically nearest training houses."""
    if k > len(train):
        raise ConfigError(f"IDW with k={k} needs at least {k} training records")
    idx, dist = knn_geodesic(test.lat, test.lon, test.ids, train.lat, train.lon, train.ids, k)
    return idw_from_distances(dist, train.price[idx], power)


# -- cross-validation ------------------------------------------------------

def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    if k < 2:
        raise ConfigError(f"k-fold needs k >= 2, got {k}")
    if k > n:
        raise ConfigError(f"cannot split {n} records into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def kfold_cv(ds: Dataset, k: int, trainer, seed: int = 0, model: str = "model", mode: str = "raw") -> MetricReport:
    """*trainer(train, test)* returns predictions for *test*, in the
    dataset's training price scale. Any neighbor structures must be built
    inside the trainer from its *train* argument."""
    folds = kfold_indices(len(ds), k, seed)
    log_scaled = ds.descriptor.price_is_log_scaled
    fm, fr = [], []
    all_idx = np.arange(len(ds))
    for f in folds:
        train_idx = np.setdiff1d(all_idx, f, assume_unique=True)
        tr, te = ds.subset(train_idx), ds.subset(np.sort(f))
        m, r = price_metrics(trainer(tr, te), te.price, log_scaled)
        fm.append(m)
        fr.append(r)
    return MetricReport(ds.descriptor.name, model, mode, float(np.min(fm)), float(np.min(fr)),
                        float(np.mean(fm)), float(np.mean(fr)), k, seed, fm, fr)


# -- feature views used by the baselines ------------------------------------

class RawFeatures:
    """Min-max scaled features and coordinates, fitted on each trainer's train part."""

    def __call__(self, train: Dataset, test: Dataset):
        stats = fit_normalization(train)
        lo, hi = train.coords.min(axis=0), train.coords.max(axis=0)
        rows = lambda d: np.column_stack([apply_normalization(d, stats).features,  # noqa: E731
                                          minmax_scale(d.coords, lo, hi)])
        return rows(train), rows(test)


class EmbeddingFeatures:
    def __init__(self, ids, vectors):
        self.pos = {int(i): r for r, i in enumerate(ids)}
        self.vectors = vectors

    def __call__(self, train: Dataset, test: Dataset):
        take = lambda d: self.vectors[[self.pos[int(i)] for i in d.ids]]  # noqa: E731
        return take(train), take(test)


def ols_trainer(features):
    def run(train, test):
        Xtr, Xte = features(train, test)
        return baseline_ols(Xtr, train.price, Xte)
    return run


def knn_trainer(features, k):
    def run(train, test):
        Xtr, Xte = features(train, test)
        return baseline_knn(Xtr, train.price, Xte, k)
    return run


def idw_trainer(k, power=2.0):
    return lambda train, test: baseline_idw(train, test, k, power)


# -- benchmark -------------------------------------------------------------

@dataclass
class BenchmarkReport:
    dataset: str
    rows: list[MetricReport]
    split: dict[str, dict]   # test-split metrics per model on the 70/20/10 split
    external_rows: list[dict] = field(default_factory=list)

    def to_dict(self):
        return {"dataset": self.dataset, "rows": [r.to_dict() for r in self.rows], "split": self.split,
                "external_rows": self.external_rows}


def _clip_positive(preds, ref_prices, log_scaled):
    # OLS/kNN can go non-positive on raw-scale data; MALE is undefined there
    if log_scaled:
        return preds
    return np.maximum(preds, 1e-3 * float(np.min(ref_prices)))


def benchmark(ds: Dataset, cfg: TrainConfig, modes=("raw", "embeddings"), k_folds: int = 10,
              seed: int = 0, knn_k: int = 10, idw_power: float = 2.0, external_rows=None,
              fitted: FittedModel | None = None, threads: int = 1, cache_dir=None) -> BenchmarkReport:
    """Attention model on the 70/20/10 split; baselines by k-fold CV over the
    full dataset on raw features and on the model's embeddings."""
    for m in modes:
        if m not in ("raw", "embeddings"):
            raise ConfigError(f"unknown benchmark mode {m!r}")
    log_scaled = ds.descriptor.price_is_log_scaled
    name = ds.descriptor.name
    train, test, val = split_dataset(ds, SplitSpec(seed=seed))
    if fitted is None:
        fitted = fit_model(train, val, cfg, threads=threads, cache_dir=cache_dir)
    ours = fitted.predict(test)
    m_ours, r_ours = price_metrics(_clip_positive(ours, train.price, log_scaled), test.price, log_scaled)
    rows = [MetricReport(name, "ours", "end-to-end", m_ours, r_ours, n_folds=1, seed=seed)]

    views = {"raw": RawFeatures()}
    if "embeddings" in modes:
        emb = fitted.embed(ds)
        views["embeddings"] = EmbeddingFeatures(emb.ids, emb.vectors)

    split = {"ours": {"male": m_ours, "rmse": r_ours}}

    def on_split(label, trainer):
        p = _clip_positive(trainer(train, test), train.price, log_scaled)
        mm, rr = price_metrics(p, test.price, log_scaled)
        split[label] = {"male": mm, "rmse": rr}

    def cv(label, mode, trainer):
        rows.append(kfold_cv(ds, k_folds, lambda tr, te: _clip_positive(trainer(tr, te), tr.price, log_scaled),
                             seed, label, mode))
        on_split(f"{label}-{mode}", trainer)

    for mode in modes:
        cv("ols", mode, ols_trainer(views[mode]))
        cv("knn", mode, knn_trainer(views[mode], knn_k))
    if "raw" in modes:
        cv("idw", "raw", idw_trainer(cfg.num_geo, idw_power))
    return BenchmarkReport(name, rows, split, list(external_rows or []))


def write_report_json(report: BenchmarkReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(report: BenchmarkReport, path) -> None:
    cols = MetricReport.CSV_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in report.rows:
            d = r.to_dict()
            w.writerow(["" if d[c] is None else d[c] for c in cols])
        for ext in report.external_rows:
            w.writerow([ext.get(c, "") for c in cols])


def load_external_rows(path) -> list[dict]:
    """Rows for models not implemented here, in the flat report CSV layout."""
    with open(path, newline="", encoding="utf-8") as fh:
        return [dict(r) for r in csv.DictReader(fh)]


# -- distance analysis -----------------------------------------------------

QUANTILE_LABELS = ("min", "q25", "median", "q75", "max")


def distance_quantiles(ds: Dataset, n: int = 60, threads: int = 1) -> dict[str, dict[str, float]]:
    """Five-number summary over houses of the mean distance to their n nearest
    neighbors: geodesic (km) and Euclidean on min-max-normalized features."""
    if n < 1 or n >= len(ds):
        raise ConfigError(f"n={n} must be in [1, {len(ds) - 1}]")
    norm = apply_normalization(ds, fit_normalization(ds))
    _, gd = knn_geodesic(ds.lat, ds.lon, ds.ids, ds.lat, ds.lon, ds.ids, n, threads)
    _, ed = knn_euclidean(norm.features, ds.ids, norm.features, ds.ids, n, threads)
    out = {}
    for kind, d in (("geodesic_km", gd), ("euclidean_normalized", ed)):
        q = np.quantile(d.mean(axis=1), [0.0, 0.25, 0.5, 0.75, 1.0])
        out[kind] = dict(zip(QUANTILE_LABELS, (float(v) for v in q)))
    return out


def write_quantiles_csv(table: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["distance", *QUANTILE_LABELS])
        for kind, q in table.items():
            w.writerow([kind, *(repr(q[k]) for k in QUANTILE_LABELS)])
