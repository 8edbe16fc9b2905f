"""Mini-batch Adam training with validation early stopping."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attention import SIMILARITY_KINDS
from .data import Dataset, NormalizationStats, apply_normalization, concat_datasets, fit_normalization
from .errors import ConfigError, DimensionError, StateError
from .metrics import male, price_metrics
from .model import (
    ModelParams,
    assemble_inputs,
    batch_loss_and_grads,
    embed_dataset,
    fit_scaling,
    forward,
    init_params,
    loss_mse,
    predict_batch,
)
from .spatial import NeighborIndex, cached_neighbor_index


@dataclass(frozen=True)
class TrainConfig:
    num_geo: int = 30
    num_euc: int = 30
    num_heads: int = 8
    sigma: float = 2.0
    nodes: int = 60
    learning_rate: float = 0.008
    batch_size: int = 250
    similarity_kind: str = "gaussian"
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0
    hidden_activation: str = "elu"

    def validate(self) -> "TrainConfig":
        if not (0 < self.learning_rate < 1):
            raise ConfigError(f"learning_rate must lie in (0, 1), got {self.learning_rate}")
        for name in ("batch_size", "num_heads", "patience", "num_geo", "num_euc", "nodes", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.similarity_kind not in SIMILARITY_KINDS:
            raise ConfigError(f"similarity_kind must be one of {SIMILARITY_KINDS}, got {self.similarity_kind!r}")
        if self.similarity_kind == "gaussian" and not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


# Tuned per-dataset hyperparameters; every field can be overridden.
PRESETS = {
    "it": TrainConfig(num_geo=30, num_euc=25, num_heads=8, sigma=2.0, nodes=60, learning_rate=0.001,
                      batch_size=32, similarity_kind="identity"),
    "kc": TrainConfig(num_geo=30, num_euc=30, num_heads=8, sigma=2.0, nodes=60, learning_rate=0.008,
                      batch_size=250, similarity_kind="gaussian"),
    "poa": TrainConfig(num_geo=10, num_euc=15, num_heads=4, sigma=2.0, nodes=60, learning_rate=0.001,
                       batch_size=32, similarity_kind="identity"),
    "bj": TrainConfig(num_geo=15, num_euc=15, num_heads=4, sigma=10.0, nodes=60, learning_rate=0.001,
                      batch_size=250, similarity_kind="gaussian"),
}


# -- Adam ------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "OptimizerState":
        t = params.tensors()
        return cls({k: np.zeros_like(x) for k, x in t.items()}, {k: np.zeros_like(x) for k, x in t.items()})


def adam_step(params: ModelParams, grads, state: OptimizerState, lr: float):
    tensors = params.tensors()
    if set(grads) != set(tensors) or set(state.m) != set(tensors):
        raise DimensionError("gradient / optimizer state keys do not match the parameters")
    t = state.step + 1
    c1, c2 = 1 - state.beta1 ** t, 1 - state.beta2 ** t
    new_t, new_m, new_v = {}, {}, {}
    for k, theta in tensors.items():
        g = grads[k]
        if g.shape != theta.shape or state.m[k].shape != theta.shape:
            raise DimensionError(f"{k}: gradient {g.shape} vs parameter {theta.shape}")
        m = state.beta1 * state.m[k] + (1 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1 - state.beta2) * g * g
        new_t[k] = theta - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k], new_v[k] = m, v
    return params.with_tensors(new_t), replace(state, m=new_m, v=new_v, step=t)


# -- training loop ---------------------------------------------------------

@dataclass
class TrainingLog:
    initial_val_male: float
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    def jsonl(self, with_timing: bool = True) -> str:
        lines = []
        for e in self.epochs:
            rec = e if with_timing else {k: v for k, v in e.items() if k != "wall_ms"}
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    def digest(self) -> str:
        """sha256 of the log without wall-clock timings."""
        return hashlib.sha256(self.jsonl(with_timing=False).encode()).hexdigest()


def _monitor_metrics(batch, params, prices, log_scaled):
    preds, _ = predict_batch(batch, params)
    if not log_scaled:
        # monitor only: keep raw-scale MALE defined while the model is still poor
        preds = np.maximum(preds, 1e-3 * float(np.min(prices)))
    return price_metrics(preds, prices, log_scaled)


def train(train: Dataset, val: Dataset, index: NeighborIndex, cfg: TrainConfig, progress=None):
    """Fit a model on *train* (normalized features) with early stopping on *val*.

    *index* must have pool = *train* and entries for every train and val id.
    Returns (best params, TrainingLog).
    """
    cfg.validate()
    if index.pool_hash != train.content_hash():
        raise StateError("neighbor index pool is not the training set")
    if index.num_geo != cfg.num_geo or index.num_euc != cfg.num_euc:
        raise StateError(f"index has {index.num_geo}/{index.num_euc} neighbors, config wants "
                         f"{cfg.num_geo}/{cfg.num_euc}")
    log_scaled = train.descriptor.price_is_log_scaled
    train_rows = index.rows_for(train.ids)
    scaling = fit_scaling(train, _rows_view(index, train_rows))

    rng = np.random.default_rng(cfg.seed)
    params = init_params(train.T, cfg.num_geo, cfg.num_euc, cfg.num_heads, cfg.nodes, cfg.sigma,
                         cfg.similarity_kind, rng, scaling)
    params = replace(params, hidden_activation=cfg.hidden_activation)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])

    tb = assemble_inputs(train, train, index, scaling)
    vb = assemble_inputs(val, train, index, scaling)
    state = OptimizerState.zeros_like(params)

    init_male, _ = _monitor_metrics(vb, params, val.price, log_scaled)
    log = TrainingLog(initial_val_male=init_male)
    best_params, best_male, stale = params, np.inf, 0
    n = len(tb)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            batch = tb.take(perm[s:s + cfg.batch_size])
            loss, grads = batch_loss_and_grads(batch, params)
            total += loss * len(batch)
            params, state = adam_step(params, grads, state, cfg.learning_rate)
        val_male, val_rmse = _monitor_metrics(vb, params, val.price, log_scaled)
        rec = {"epoch": epoch, "train_loss": total / n, "val_male": val_male, "val_rmse": val_rmse,
               "wall_ms": round((time.perf_counter() - t0) * 1000.0, 3)}
        log.epochs.append(rec)
        if progress is not None:
            progress(rec)
        if val_male < best_male:
            best_male, best_params, stale = val_male, params, 0
            log.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best_params, log


def _rows_view(index: NeighborIndex, rows) -> NeighborIndex:
    return replace(index, query_ids=index.query_ids[rows], geo_idx=index.geo_idx[rows],
                   geo_dist=index.geo_dist[rows], euc_idx=index.euc_idx[rows], euc_dist=index.euc_dist[rows])


def training_loss(ds: Dataset, pool: Dataset, index: NeighborIndex, params: ModelParams) -> float:
    batch = assemble_inputs(ds, pool, index, params.scaling)
    out, _, _ = forward(batch, params)
    return float(np.mean(loss_mse(out, batch.target)))


# -- end-to-end fitting ----------------------------------------------------

@dataclass
class FittedModel:
    """A trained model bundled with what inference needs: the scaler and the
    normalized training pool its neighbor prices come from."""

    cfg: TrainConfig
    stats: NormalizationStats
    params: ModelParams
    log: TrainingLog
    pool: Dataset           # normalized training split
    pool_raw_hash: str
    threads: int = 1
    cache_dir: object = None

    def neighbor_index(self, raw: Dataset) -> tuple[Dataset, NeighborIndex]:
        ds = apply_normalization(raw, self.stats)
        idx = cached_neighbor_index(ds, self.pool, self.cfg.num_geo, self.cfg.num_euc,
                                    self.cache_dir, self.threads)
        return ds, idx

    def embed(self, raw: Dataset):
        ds, idx = self.neighbor_index(raw)
        return embed_dataset(ds, self.pool, idx, self.params)

    def predict(self, raw: Dataset) -> np.ndarray:
        return self.embed(raw).predictions


def fit_model(train_raw: Dataset, val_raw: Dataset, cfg: TrainConfig, threads=1, cache_dir=None,
              progress=None) -> FittedModel:
    """Normalize, index and train from raw splits."""
    cfg.validate()
    stats = fit_normalization(train_raw)
    tr = apply_normalization(train_raw, stats)
    va = apply_normalization(val_raw, stats)
    queries = concat_datasets(tr, va)
    index = cached_neighbor_index(queries, tr, cfg.num_geo, cfg.num_euc, cache_dir, threads)
    params, log = train(tr, va, index, cfg, progress=progress)
    return FittedModel(cfg, stats, params, log, tr, train_raw.content_hash(), threads, cache_dir)


def validation_male(fitted: FittedModel, raw: Dataset) -> float:
    return male(fitted.predict(raw), raw.price, raw.descriptor.price_is_log_scaled)
