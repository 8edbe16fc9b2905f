"""Versioned ``.gam`` model artifacts.

A JSON header (format version, creation time, dataset hash, config echo,
training-log digest) followed by every parameter tensor as little-endian
doubles; see :mod:`gated_interp._container` for the byte layout. Loading
parses data only, nothing is executed.
"""

from __future__ import annotations

import datetime as _dt
import os
import warnings
from dataclasses import dataclass

import numpy as np

from ._container import read_container, write_container
from .attention import AttentionBlockParams
from .data import NormalizationStats
from .errors import DatasetHashWarning, DimensionError, FormatError, VersionError
from .model import ModelParams, ModelScaling
from .training import TrainConfig

MAGIC = b"GAMODEL1"
FORMAT_VERSION = 1


@dataclass
class ModelArtifact:
    dataset_hash: str
    config: TrainConfig
    stats: NormalizationStats
    params: ModelParams
    log_digest: str = ""
    format_version: int = FORMAT_VERSION
    created_at: str = ""


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp for reproducible artifacts
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
            else _dt.datetime.now(_dt.timezone.utc))
    return when.replace(microsecond=0).isoformat()


def save_model(artifact: ModelArtifact, path) -> None:
    p = artifact.params
    s = p.scaling
    header = {
        "format_version": FORMAT_VERSION,
        "created_at": artifact.created_at or _timestamp(),
        "dataset_hash": artifact.dataset_hash,
        "config": artifact.config.to_dict(),
        "training_log_digest": artifact.log_digest,
        "model": {"T": p.T, "nodes": p.nodes, "num_heads": p.geo_block.num_heads,
                  "num_geo": p.geo_block.n, "num_euc": p.euc_block.n,
                  "sigma": p.geo_block.sigma, "similarity_kind": p.geo_block.similarity_kind,
                  "hidden_activation": p.hidden_activation},
    }
    arrays = dict(p.tensors())
    arrays.update({
        "norm.min": artifact.stats.minimum, "norm.max": artifact.stats.maximum,
        "scaling.coord_min": s.coord_min, "scaling.coord_max": s.coord_max,
        "scaling.scalars": np.array([s.price_mean, s.price_std, s.geo_dist_scale]),
    })
    write_container(path, MAGIC, header, arrays)


def load_model(path) -> ModelArtifact:
    header, arr = read_container(path, MAGIC)
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(version, FORMAT_VERSION)
    try:
        meta = header["model"]
        cfg = TrainConfig.from_dict(header["config"])
    except KeyError as exc:
        raise FormatError(f"{path}: header lacks {exc.args[0]!r}") from None

    required = ["W_hidden", "b_hidden", "W_out", "b_out", "norm.min", "norm.max",
                "scaling.coord_min", "scaling.coord_max", "scaling.scalars"]
    required += [f"{b}.{t}" for b in ("geo", "euc") for t in AttentionBlockParams.TENSORS]
    missing = [k for k in required if k not in arr]
    if missing:
        raise FormatError(f"{path}: no parameter payload ({len(missing)} tensors missing, e.g. {missing[0]!r})")

    try:
        blocks = {}
        for b in ("geo", "euc"):
            blocks[b] = AttentionBlockParams(b, sigma=float(meta["sigma"]), similarity_kind=meta["similarity_kind"],
                                             **{t: arr[f"{b}.{t}"] for t in AttentionBlockParams.TENSORS})
        sc = arr["scaling.scalars"]
        scaling = ModelScaling(arr["scaling.coord_min"], arr["scaling.coord_max"], float(sc[0]), float(sc[1]),
                               float(sc[2]))
        params = ModelParams(blocks["geo"], blocks["euc"], arr["W_hidden"], arr["b_hidden"], arr["W_out"],
                             arr["b_out"], scaling, meta.get("hidden_activation", "elu"))
        stats = NormalizationStats(arr["norm.min"], arr["norm.max"])
    except (DimensionError, IndexError, KeyError, ValueError) as exc:
        raise FormatError(f"{path}: inconsistent model payload ({exc})") from None
    if len(stats) != params.T or params.nodes != meta["nodes"] or blocks["geo"].n != meta["num_geo"] \
            or blocks["euc"].n != meta["num_euc"]:
        raise FormatError(f"{path}: tensor shapes disagree with the header")
    return ModelArtifact(header["dataset_hash"], cfg, stats, params, header.get("training_log_digest", ""),
                         version, header.get("created_at", ""))


def check_dataset_hash(artifact: ModelArtifact, dataset_hash: str) -> bool:
    """Warn (DatasetHashWarning) and return False on a training-data mismatch."""
    if artifact.dataset_hash != dataset_hash:
        warnings.warn(f"model was trained on dataset {artifact.dataset_hash[:12]}..., "
                      f"got {dataset_hash[:12]}...", DatasetHashWarning, stacklevel=2)
        return False
    return True
