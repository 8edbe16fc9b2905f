"""Gated-attention interpolation network.

    concat = [A_i, G_i, v_euc, v_geo]          length 3T + 7
    embedding = elu(W_hidden @ concat + b_hidden)
    output = W_out @ embedding + b_out

The network regresses a standardized target ``(y - price_mean) / price_std``
with ``y`` in the dataset's training scale (log prices for log-scaled data);
:func:`to_price_scale` maps outputs back.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import AttentionBlockParams, attention_block_backward, attention_block_forward, init_block
from .errors import ConfigError, DimensionError, StateError

ACTIVATIONS = ("elu", "relu", "linear")


@dataclass(frozen=True)
class ModelScaling:
    """Fixed input/target transforms fitted on the training split."""

    coord_min: np.ndarray
    coord_max: np.ndarray
    price_mean: float
    price_std: float
    geo_dist_scale: float

    def scale_coords(self, lat, lon):
        span = np.where(self.coord_max > self.coord_min, self.coord_max - self.coord_min, 1.0)
        return (np.column_stack([lat, lon]) - self.coord_min) / span

    def scale_price(self, y):
        return (np.asarray(y, dtype=np.float64) - self.price_mean) / self.price_std

    def to_dict(self):
        return {"coord_min": [float(v) for v in self.coord_min], "coord_max": [float(v) for v in self.coord_max],
                "price_mean": self.price_mean, "price_std": self.price_std, "geo_dist_scale": self.geo_dist_scale}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["coord_min"], dtype=np.float64), np.asarray(d["coord_max"], dtype=np.float64),
                   float(d["price_mean"]), float(d["price_std"]), float(d["geo_dist_scale"]))


def fit_scaling(train, train_index) -> ModelScaling:
    coords = train.coords
    std = float(np.std(train.price))
    scale = float(np.max(train_index.geo_dist)) if train_index.geo_dist.size else 1.0
    return ModelScaling(coords.min(axis=0), coords.max(axis=0), float(np.mean(train.price)),
                        std if std > 0 else 1.0, scale if scale > 0 else 1.0)


IDENTITY_SCALING = ModelScaling(np.zeros(2), np.ones(2), 0.0, 1.0, 1.0)


@dataclass
class ModelParams:
    geo_block: AttentionBlockParams
    euc_block: AttentionBlockParams
    W_hidden: np.ndarray  # (nodes, 3T + 7)
    b_hidden: np.ndarray  # (nodes,)
    W_out: np.ndarray     # (nodes,)
    b_out: np.ndarray     # (1,)
    scaling: ModelScaling = field(default=IDENTITY_SCALING)
    hidden_activation: str = "elu"

    def __post_init__(self):
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.hidden_activation!r}")
        nodes = self.W_hidden.shape[0]
        if nodes < 1:
            raise ConfigError("nodes must be >= 1")
        shapes = {"b_hidden": (nodes,), "W_out": (nodes,), "b_out": (1,)}
        for name, shape in shapes.items():
            if np.shape(getattr(self, name)) != shape:
                raise DimensionError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        if self.W_hidden.shape[1] != self.concat_length:
            raise DimensionError(f"W_hidden takes {self.W_hidden.shape[1]} inputs, concat has {self.concat_length}")

    @property
    def T(self) -> int:
        return (self.W_hidden.shape[1] - 7) // 3

    @property
    def nodes(self) -> int:
        return self.W_hidden.shape[0]

    @property
    def concat_length(self) -> int:
        # own A and G, Euclidean context (T + 1), geo context (T + 4)
        T = (self.W_hidden.shape[1] - 7) // 3
        return 2 + T + (T + 1) + (T + 4)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"geo.{k}": v for k, v in self.geo_block.tensors().items()}
        out.update({f"euc.{k}": v for k, v in self.euc_block.tensors().items()})
        out.update(W_hidden=self.W_hidden, b_hidden=self.b_hidden, W_out=self.W_out, b_out=self.b_out)
        return out

    def with_tensors(self, tensors: dict[str, np.ndarray]) -> "ModelParams":
        geo = {k[4:]: v for k, v in tensors.items() if k.startswith("geo.")}
        euc = {k[4:]: v for k, v in tensors.items() if k.startswith("euc.")}
        top = {k: v for k, v in tensors.items() if "." not in k}
        return replace(self, geo_block=self.geo_block.with_tensors(**geo) if geo else self.geo_block,
                       euc_block=self.euc_block.with_tensors(**euc) if euc else self.euc_block, **top)

    def signature(self) -> tuple:
        return tuple((k, v.shape) for k, v in self.tensors().items())


def init_params(T, num_geo, num_euc, num_heads, nodes, sigma, similarity_kind, rng,
                scaling: ModelScaling = IDENTITY_SCALING) -> ModelParams:
    geo = init_block("geo", num_geo, num_heads, sigma, similarity_kind, rng)
    euc = init_block("euc", num_euc, num_heads, sigma, similarity_kind, rng)
    C = 3 * T + 7
    lim_h = np.sqrt(6.0 / (C + nodes))
    lim_o = np.sqrt(6.0 / (nodes + 1))
    return ModelParams(geo, euc, rng.uniform(-lim_h, lim_h, (nodes, C)), np.zeros(nodes),
                       rng.uniform(-lim_o, lim_o, nodes), np.zeros(1), scaling)


def zero_params_like(params: ModelParams) -> ModelParams:
    return params.with_tensors({k: np.zeros_like(v) for k, v in params.tensors().items()})


# -- inputs ----------------------------------------------------------------

@dataclass
class NeighborBatch:
    """Model inputs for a set of houses, in network units."""

    ids: np.ndarray
    own_features: np.ndarray  # (B, T)
    own_coords: np.ndarray    # (B, 2)
    geo_dist: np.ndarray      # (B, num_geo), km
    geo_rows: np.ndarray      # (B, num_geo, T + 4)
    euc_dist: np.ndarray      # (B, num_euc)
    euc_rows: np.ndarray      # (B, num_euc, T + 1)
    target: np.ndarray        # (B,), standardized

    def __len__(self):
        return len(self.ids)

    def take(self, idx) -> "NeighborBatch":
        return NeighborBatch(*(getattr(self, f)[idx] for f in
                               ("ids", "own_features", "own_coords", "geo_dist", "geo_rows",
                                "euc_dist", "euc_rows", "target")))


def assemble_inputs(queries, pool, index, scaling: ModelScaling) -> NeighborBatch:
    """Gather neighbor rows for every query.

    *queries* and *pool* carry already-normalized features; *index* must have
    been built with exactly this pool.
    """
    if index.pool_hash != pool.content_hash():
        raise StateError("neighbor index was built against a different candidate pool")
    rows = index.rows_for(queries.ids)
    gi, ei = index.geo_idx[rows], index.euc_idx[rows]
    gd, ed = index.geo_dist[rows], index.euc_dist[rows]
    pool_coords = scaling.scale_coords(pool.lat, pool.lon)
    pool_price = scaling.scale_price(pool.price)
    geo_rows = np.concatenate([pool_coords[gi], pool.features[gi], (gd / scaling.geo_dist_scale)[..., None],
                               pool_price[gi][..., None]], axis=2)
    euc_rows = np.concatenate([pool.features[ei], pool_price[ei][..., None]], axis=2)
    return NeighborBatch(queries.ids.copy(), queries.features.copy(),
                         scaling.scale_coords(queries.lat, queries.lon), gd, geo_rows, ed, euc_rows,
                         scaling.scale_price(queries.price))


# -- forward / backward ----------------------------------------------------

def _act(z, kind):
    if kind == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(z, kind):
    if kind == "elu":
        return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def forward(batch: NeighborBatch, params: ModelParams):
    """Returns (outputs (B,), embeddings (B, nodes), cache)."""
    if batch.geo_dist.shape[1] != params.geo_block.n or batch.euc_dist.shape[1] != params.euc_block.n:
        raise DimensionError(f"batch has {batch.geo_dist.shape[1]}/{batch.euc_dist.shape[1]} neighbors, "
                             f"model expects {params.geo_block.n}/{params.euc_block.n}")
    if batch.own_features.shape[1] != params.T:
        raise DimensionError(f"batch has {batch.own_features.shape[1]} features, model expects {params.T}")
    v_geo, geo_cache = attention_block_forward(batch.geo_dist, batch.geo_rows, params.geo_block)
    v_euc, euc_cache = attention_block_forward(batch.euc_dist, batch.euc_rows, params.euc_block)
    concat = np.concatenate([batch.own_features, batch.own_coords, v_euc, v_geo], axis=1)
    z = concat @ params.W_hidden.T + params.b_hidden
    emb = _act(z, params.hidden_activation)
    out = emb @ params.W_out + params.b_out[0]
    cache = {"geo": geo_cache, "euc": euc_cache, "concat": concat, "z": z, "emb": emb,
             "signature": params.signature(), "T": params.T}
    return out, emb, cache


def backward(cache, d_out, params: ModelParams) -> dict[str, np.ndarray]:
    """Gradients of sum_b d_out[b] * output[b] for every tensor in params."""
    if cache.get("signature") != params.signature():
        raise StateError("forward cache does not belong to these parameters")
    d_out = np.asarray(d_out, dtype=np.float64).reshape(-1)
    if d_out.shape[0] != cache["emb"].shape[0]:
        raise StateError(f"upstream gradient has {d_out.shape[0]} rows, cache has {cache['emb'].shape[0]}")
    emb, z, concat, T = cache["emb"], cache["z"], cache["concat"], cache["T"]
    grads = {"W_out": emb.T @ d_out, "b_out": np.array([d_out.sum()])}
    dz = (d_out[:, None] * params.W_out[None, :]) * _act_grad(z, params.hidden_activation)
    grads["W_hidden"] = dz.T @ concat
    grads["b_hidden"] = dz.sum(axis=0)
    dconcat = dz @ params.W_hidden
    o = 2 + T
    dv_euc, dv_geo = dconcat[:, o:o + T + 1], dconcat[:, o + T + 1:]
    for prefix, dv, block in (("geo", dv_geo, params.geo_block), ("euc", dv_euc, params.euc_block)):
        for k, g in attention_block_backward(dv, cache[prefix], block).items():
            grads[f"{prefix}.{k}"] = g
    return grads


def loss_mse(pred, target):
    """Squared error per sample; the batch loss is its mean."""
    return (np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)) ** 2


def batch_loss_and_grads(batch: NeighborBatch, params: ModelParams):
    out, _, cache = forward(batch, params)
    loss = float(np.mean(loss_mse(out, batch.target)))
    d_out = 2.0 * (out - batch.target) / len(batch)
    return loss, backward(cache, d_out, params)


def gradient_check(params: ModelParams, sample: NeighborBatch, epsilon: float = 1e-5, names=None) -> float:
    """Max relative error between analytic and central-difference gradients
    of the squared-error loss on *sample*, over the tensors in *names*
    (default: all)."""
    if not (1e-7 <= epsilon <= 1e-3):
        raise ConfigError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    _, analytic = batch_loss_and_grads(sample, params)
    tensors = {k: v.astype(np.float64).copy() for k, v in params.tensors().items()}
    names = list(tensors) if names is None else list(names)

    def loss_at(name, theta):
        p = params.with_tensors({name: theta})
        out, _, _ = forward(sample, p)
        return float(np.mean(loss_mse(out, sample.target)))

    worst = 0.0
    for name in names:
        theta = tensors[name]
        for i in range(theta.size):
            orig = theta.flat[i]
            theta.flat[i] = orig + epsilon
            f_plus = loss_at(name, theta)
            theta.flat[i] = orig - epsilon
            f_minus = loss_at(name, theta)
            theta.flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * epsilon)
            a = analytic[name].flat[i]
            worst = max(worst, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
    return worst


# -- prediction and embeddings --------------------------------------------

def to_price_scale(outputs, scaling: ModelScaling) -> np.ndarray:
    """Network outputs -> prices in the dataset's training scale."""
    return np.asarray(outputs) * scaling.price_std + scaling.price_mean


def predict_batch(batch: NeighborBatch, params: ModelParams, chunk: int = 2048):
    outs, embs = [], []
    for s in range(0, len(batch), chunk):
        o, e, _ = forward(batch.take(slice(s, s + chunk)), params)
        outs.append(o)
        embs.append(e)
    if not outs:
        return np.empty(0), np.empty((0, params.nodes))
    return to_price_scale(np.concatenate(outs), params.scaling), np.concatenate(embs)


@dataclass(frozen=True)
class HouseEmbedding:
    house_id: int
    vector: np.ndarray


@dataclass(frozen=True)
class EmbeddingSet:
    ids: np.ndarray
    vectors: np.ndarray      # (m, nodes)
    predictions: np.ndarray  # (m,), training price scale

    def __len__(self):
        return len(self.ids)

    def as_records(self) -> list[HouseEmbedding]:
        return [HouseEmbedding(int(i), v) for i, v in zip(self.ids, self.vectors)]


def embed_dataset(ds, pool, index, params: ModelParams) -> EmbeddingSet:
    """Embedding and prediction for every record of *ds* (normalized features)."""
    batch = assemble_inputs(ds, pool, index, params.scaling)
    preds, embs = predict_batch(batch, params)
    return EmbeddingSet(ds.ids.copy(), embs, preds)


def write_embeddings_csv(emb: EmbeddingSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *(f"e_{k + 1}" for k in range(emb.vectors.shape[1]))])
        for i, v in zip(emb.ids, emb.vectors):
            w.writerow([int(i), *(repr(float(x)) for x in v)])


def tiny_instance(seed, T=4, n=5, num_heads=2, nodes=8, similarity_kind="gaussian", jitter=0.1):
    """Random small model plus one house sample at realistic input scales
    (features/coords in [0, 1], standardized prices), for gradient checks."""
    rng = np.random.default_rng(seed)
    params = init_params(T, n, n, num_heads, nodes, 2.0, similarity_kind, rng)
    params = params.with_tensors({k: v + rng.normal(0.0, jitter, v.shape) for k, v in params.tensors().items()})
    geo_rows = np.concatenate([rng.uniform(0, 1, (1, n, T + 3)), rng.normal(0, 1, (1, n, 1))], axis=2)
    euc_rows = np.concatenate([rng.uniform(0, 1, (1, n, T)), rng.normal(0, 1, (1, n, 1))], axis=2)
    sample = NeighborBatch(np.array([1]), rng.uniform(0, 1, (1, T)), rng.uniform(0, 1, (1, 2)),
                           np.sort(rng.uniform(0, 2, (1, n))), geo_rows,
                           np.sort(rng.uniform(0, 1, (1, n))), euc_rows, rng.normal(0, 1, 1))
    return params, sample
