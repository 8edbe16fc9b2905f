"""Tabular house datasets: CSV ingestion, min-max scaling, splitting and a
synthetic generator with a known spatial price surface."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    EmptyDatasetError,
    ParseError,
    SchemaError,
    SplitError,
    ValidationError,
)

BASE_COLUMNS = ("id", "lat", "lon", "price")


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    feature_names: tuple[str, ...]
    price_is_log_scaled: bool = False
    currency_label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if len(self.feature_names) < 1:
            raise SchemaError("feature_names", "descriptor needs at least one feature")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise SchemaError("feature_names", "feature names must be unique")
        clash = set(self.feature_names) & set(BASE_COLUMNS)
        if clash:
            raise SchemaError(sorted(clash)[0], f"feature name collides with base column {sorted(clash)[0]!r}")

    @property
    def T(self) -> int:
        return len(self.feature_names)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "feature_names": list(self.feature_names),
            "price_is_log_scaled": self.price_is_log_scaled,
            "currency_label": self.currency_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetDescriptor":
        try:
            return cls(
                name=str(d["name"]),
                feature_names=tuple(d["feature_names"]),
                price_is_log_scaled=bool(d.get("price_is_log_scaled", False)),
                currency_label=str(d.get("currency_label", "")),
            )
        except KeyError as exc:
            raise SchemaError(exc.args[0], f"descriptor is missing {exc.args[0]!r}") from None


def load_descriptor(path) -> DatasetDescriptor:
    with open(path, encoding="utf-8") as fh:
        return DatasetDescriptor.from_dict(json.load(fh))


def save_descriptor(desc: DatasetDescriptor, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(desc.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class HouseRecord:
    id: int
    lat: float
    lon: float
    features: np.ndarray
    price: float


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class Dataset:
    """Column-oriented, immutable collection of house records."""

    def __init__(self, descriptor, ids, lat, lon, features, price, validate=True):
        self.descriptor = descriptor
        self.ids = _frozen(ids, np.int64)
        self.lat = _frozen(lat, np.float64)
        self.lon = _frozen(lon, np.float64)
        self.features = _frozen(features, np.float64).reshape(len(self.ids), descriptor.T)
        self.price = _frozen(price, np.float64)
        if validate:
            self._validate()

    def _validate(self):
        m, T = len(self.ids), self.descriptor.T
        for name in ("lat", "lon", "price"):
            if getattr(self, name).shape != (m,):
                raise SchemaError(name, f"column {name!r} has {getattr(self, name).shape[0]} rows, expected {m}")
        if self.features.shape[1] != T:
            raise SchemaError("features", f"expected {T} features, got {self.features.shape[1]}")
        uniq, counts = np.unique(self.ids, return_counts=True)
        if np.any(counts > 1):
            raise ValidationError(int(uniq[counts > 1][0]), "duplicate id")
        checks = [
            (~((self.lat >= -90) & (self.lat <= 90)), "lat outside [-90, 90]"),
            (~((self.lon >= -180) & (self.lon <= 180)), "lon outside [-180, 180]"),
            (~np.all(np.isfinite(self.features), axis=1), "non-finite feature"),
            (~np.isfinite(self.price), "non-finite price"),
        ]
        if not self.descriptor.price_is_log_scaled:
            checks.append((~(self.price > 0), "raw-scale price must be positive"))
        for bad, msg in checks:
            if np.any(bad):
                raise ValidationError(int(self.ids[np.argmax(bad)]), msg)

    def __len__(self):
        return len(self.ids)

    def __repr__(self):
        return f"Dataset({self.descriptor.name!r}, n={len(self)}, T={self.T})"

    @property
    def T(self) -> int:
        return self.descriptor.T

    @property
    def coords(self) -> np.ndarray:
        return np.column_stack([self.lat, self.lon])

    def record(self, i: int) -> HouseRecord:
        return HouseRecord(int(self.ids[i]), float(self.lat[i]), float(self.lon[i]),
                           self.features[i].copy(), float(self.price[i]))

    def records(self):
        return [self.record(i) for i in range(len(self))]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.descriptor, self.ids[idx], self.lat[idx], self.lon[idx],
                       self.features[idx], self.price[idx], validate=False)

    def replace(self, **kw) -> "Dataset":
        cols = dict(descriptor=self.descriptor, ids=self.ids, lat=self.lat, lon=self.lon,
                    features=self.features, price=self.price)
        cols.update(kw)
        return Dataset(**cols)

    def to_log_scale(self) -> "Dataset":
        """Same records with natural-log prices, flagged as log-scaled."""
        if self.descriptor.price_is_log_scaled:
            return self
        desc = DatasetDescriptor(self.descriptor.name, self.descriptor.feature_names, True,
                                 self.descriptor.currency_label)
        return self.replace(descriptor=desc, price=np.log(self.price))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.descriptor.to_dict(), sort_keys=True).encode())
        for a in (self.ids, self.lat, self.lon, self.features, self.price):
            h.update(np.ascontiguousarray(a).astype("<f8" if a.dtype.kind == "f" else "<i8").tobytes())
        return h.hexdigest()


def load_csv(path, descriptor: DatasetDescriptor) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("id", f"{path} is empty") from None
        for col in (*BASE_COLUMNS, *descriptor.feature_names):
            if col not in header:
                raise SchemaError(col)
        pos = {c: header.index(c) for c in (*BASE_COLUMNS, *descriptor.feature_names)}
        ids, lat, lon, price, feats = [], [], [], [], []
        for rowno, row in enumerate(reader, start=1):
            if not row:
                continue

            def cell(col, conv=float):
                raw = row[pos[col]] if pos[col] < len(row) else ""
                try:
                    v = conv(raw)
                except ValueError:
                    raise ParseError(rowno, col, raw) from None
                return v

            ids.append(cell("id", int))
            lat.append(cell("lat"))
            lon.append(cell("lon"))
            price.append(cell("price"))
            feats.append([cell(c) for c in descriptor.feature_names])
    return Dataset(descriptor, ids, lat, lon, np.array(feats, dtype=np.float64).reshape(len(ids), descriptor.T), price)


def _fmt(x: float, digits: int) -> str:
    return format(float(x), f".{digits}g")


def write_csv(ds: Dataset, path, digits: int = 12) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*BASE_COLUMNS, *ds.descriptor.feature_names])
        for i in range(len(ds)):
            w.writerow([int(ds.ids[i]), _fmt(ds.lat[i], digits), _fmt(ds.lon[i], digits),
                        _fmt(ds.price[i], digits), *(_fmt(v, digits) for v in ds.features[i])])


# -- normalization ---------------------------------------------------------

@dataclass(frozen=True)
class NormalizationStats:
    minimum: np.ndarray
    maximum: np.ndarray

    def __len__(self):
        return len(self.minimum)

    def to_dict(self):
        return {"min": [float(v) for v in self.minimum], "max": [float(v) for v in self.maximum]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def fit_normalization(train: Dataset) -> NormalizationStats:
    if len(train) == 0:
        raise EmptyDatasetError("cannot fit normalization on an empty dataset")
    return NormalizationStats(train.features.min(axis=0), train.features.max(axis=0))


def minmax_scale(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """(x - lo) / (hi - lo) per column; zero-width columns map to 0. No clipping."""
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


def apply_normalization(ds: Dataset, stats: NormalizationStats) -> Dataset:
    if len(stats) != ds.T:
        raise SchemaError("features", f"stats cover {len(stats)} features, dataset has {ds.T}")
    return ds.replace(features=minmax_scale(ds.features, stats.minimum, stats.maximum))


# -- splitting -------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    test_fraction: float = 0.2
    val_fraction: float = 0.1
    seed: int = 0

    def validate(self):
        fr = (self.train_fraction, self.test_fraction, self.val_fraction)
        if any(not (f > 0) for f in fr):
            raise SplitError(f"split fractions must be positive, got {fr}")
        if abs(sum(fr) - 1.0) > 1e-9:
            raise SplitError(f"split fractions must sum to 1, got {sum(fr)}")


def split_dataset(ds: Dataset, spec: SplitSpec):
    """Seeded shuffle, then (train, test, val). Test and val sizes are floored;
    the remainder goes to train."""
    spec.validate()
    n = len(ds)
    if n < 10:
        raise SplitError(f"need at least 10 records to split, got {n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_test = int(math.floor(n * spec.test_fraction + 1e-9))
    n_val = int(math.floor(n * spec.val_fraction + 1e-9))
    n_train = n - n_test - n_val
    return (ds.subset(perm[:n_train]),
            ds.subset(perm[n_train:n_train + n_test]),
            ds.subset(perm[n_train + n_test:]))


# -- synthetic data --------------------------------------------------------

SYNTH_BOX = ((47.40, 47.70), (-122.40, -122.00))


def spatial_surface(lat, lon) -> np.ndarray:
    """Smooth low-frequency field over SYNTH_BOX, roughly in [-1, 1]."""
    (la0, la1), (lo0, lo1) = SYNTH_BOX
    u = (np.asarray(lat) - la0) / (la1 - la0)
    v = (np.asarray(lon) - lo0) / (lo1 - lo0)
    return 0.6 * np.sin(2 * np.pi * u) * np.cos(2 * np.pi * v) + 0.4 * np.cos(3 * np.pi * (u + v) / 2)


def synthesize_dataset(n: int, T: int, spatial_weight: float, noise_sd: float, seed: int) -> Dataset:
    """Random houses whose log-price is spatial_weight * surface + beta.A + noise."""
    if n < 50:
        raise ConfigError(f"synthetic dataset needs n >= 50, got {n}")
    if T < 1:
        raise ConfigError(f"synthetic dataset needs T >= 1, got {T}")
    rng = np.random.default_rng(seed)
    (la0, la1), (lo0, lo1) = SYNTH_BOX
    lat = rng.uniform(la0, la1, n)
    lon = rng.uniform(lo0, lo1, n)
    feats = rng.uniform(0.0, 1.0, (n, T))
    beta = rng.normal(0.0, 0.5, T)
    eps = rng.normal(0.0, noise_sd, n) if noise_sd > 0 else np.zeros(n)
    logp = spatial_weight * spatial_surface(lat, lon) + feats @ beta + eps
    desc = DatasetDescriptor("synthetic", tuple(f"f{k + 1}" for k in range(T)), False, "units")
    return Dataset(desc, np.arange(1, n + 1), lat, lon, feats, np.exp(logp))


def concat_datasets(*parts: Dataset) -> Dataset:
    if not parts:
        raise EmptyDatasetError("nothing to concatenate")
    desc = parts[0].descriptor
    for p in parts[1:]:
        if p.descriptor.feature_names != desc.feature_names:
            raise SchemaError("features", "datasets have different feature schemas")
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return Dataset(desc, cat("ids"), cat("lat"), cat("lon"), cat("features"), cat("price"))
