"""Distances, similarity kernels, exact k-nearest-neighbor index and IDW."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._container import read_container, write_container
from .errors import ConfigError, DimensionError, StateError, ValidationError, VersionError

EARTH_RADIUS_KM = 6371.0088
INDEX_MAGIC = b"GINDEX01"
INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90 <= self.lat <= 90) or not (-180 <= self.lon <= 180):
            raise ValidationError(None, f"coordinates out of range: ({self.lat}, {self.lon})")


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; broadcasts over array arguments."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def geodesic_distance(a: GeoPoint, b: GeoPoint) -> float:
    return float(haversine_km(a.lat, a.lon, b.lat, b.lon))


def euclidean_distance(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"feature vectors differ in length: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _check_sigma(sigma):
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")


def gaussian_kernel(d, sigma):
    _check_sigma(sigma)
    return np.exp(-np.square(d) / (2.0 * sigma ** 2))


def geo_similarity(geo_dist, sigma):
    # Distance enters linearly with rate sigma^2 / 2, as in the model definition.
    _check_sigma(sigma)
    return np.exp(-np.asarray(geo_dist, dtype=np.float64) * (sigma ** 2 / 2.0))


def identity_similarity(d):
    """Pass-through similarity: the distance itself feeds the attention layer."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValidationError(None, "distance must be non-negative")
    return d if d.ndim else float(d)


# -- neighbor index --------------------------------------------------------

@dataclass(frozen=True)
class NeighborList:
    target_id: int
    neighbor_ids: np.ndarray
    distances: np.ndarray
    kind: str  # "geodesic" | "structural"

    def __len__(self):
        return len(self.neighbor_ids)


@dataclass(frozen=True)
class NeighborIndex:
    """Per-query neighbor positions (into the pool) and distances.

    Row ``r`` belongs to ``query_ids[r]``; ``geo_idx[r]`` / ``euc_idx[r]`` hold
    pool row positions sorted by (distance, neighbor id).
    """

    query_ids: np.ndarray
    pool_ids: np.ndarray
    geo_idx: np.ndarray
    geo_dist: np.ndarray
    euc_idx: np.ndarray
    euc_dist: np.ndarray
    query_hash: str
    pool_hash: str

    @property
    def num_geo(self) -> int:
        return self.geo_idx.shape[1]

    @property
    def num_euc(self) -> int:
        return self.euc_idx.shape[1]

    @property
    def candidate_pool_id(self) -> str:
        return self.pool_hash

    def row_of(self, house_id: int) -> int:
        rows = getattr(self, "_rows", None)
        if rows is None:
            rows = {int(q): r for r, q in enumerate(self.query_ids)}
            object.__setattr__(self, "_rows", rows)
        try:
            return rows[int(house_id)]
        except KeyError:
            raise StateError(f"house {house_id} has no entry in the neighbor index") from None

    def entry(self, house_id: int) -> tuple[NeighborList, NeighborList]:
        r = self.row_of(house_id)
        return (NeighborList(int(house_id), self.pool_ids[self.geo_idx[r]], self.geo_dist[r], "geodesic"),
                NeighborList(int(house_id), self.pool_ids[self.euc_idx[r]], self.euc_dist[r], "structural"))

    def rows_for(self, ids) -> np.ndarray:
        return np.array([self.row_of(i) for i in ids], dtype=np.int64)


def k_smallest(D, k, tie_ids):
    """Column positions of the k smallest entries per row of D, ties broken
    by ascending ``tie_ids[column]``. Returns (positions, distances)."""
    kth = np.partition(D, k - 1, axis=1)[:, k - 1]
    out_idx = np.empty((D.shape[0], k), dtype=np.int64)
    for r in range(D.shape[0]):
        cand = np.flatnonzero(D[r] <= kth[r])
        order = np.lexsort((tie_ids[cand], D[r, cand]))[:k]
        out_idx[r] = cand[order]
    return out_idx, np.take_along_axis(D, out_idx, axis=1)


def _run_chunks(fn, n_queries, step, threads):
    slices = [slice(s, min(s + step, n_queries)) for s in range(0, n_queries, step)]
    if threads > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(fn, slices))
    else:
        parts = [fn(sl) for sl in slices]
    return parts


def _stack(parts, k):
    if not parts:
        return np.empty((0, k), np.int64), np.empty((0, k))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def knn_geodesic(q_lat, q_lon, q_ids, p_lat, p_lon, p_ids, k, threads=1):
    """k geodesically nearest pool rows per query, excluding equal ids."""
    q_lat, q_lon, q_ids = np.asarray(q_lat), np.asarray(q_lon), np.asarray(q_ids)

    def work(sl):
        D = haversine_km(q_lat[sl, None], q_lon[sl, None], p_lat[None, :], p_lon[None, :])
        D[q_ids[sl, None] == p_ids[None, :]] = np.inf
        return k_smallest(D, k, p_ids)

    return _stack(_run_chunks(work, len(q_ids), 512, threads), k)


def knn_euclidean(q_feat, q_ids, p_feat, p_ids, k, threads=1):
    """k Euclidean-nearest pool rows per query, excluding equal ids."""
    q_feat, p_feat = np.asarray(q_feat, dtype=np.float64), np.asarray(p_feat, dtype=np.float64)
    q_ids = np.asarray(q_ids)
    # keep each chunk's difference tensor around 4M doubles
    step = max(1, min(512, 4_000_000 // max(1, p_feat.shape[0] * p_feat.shape[1])))

    def work(sl):
        D = np.sqrt(np.sum((q_feat[sl, None, :] - p_feat[None, :, :]) ** 2, axis=2))
        D[q_ids[sl, None] == p_ids[None, :]] = np.inf
        return k_smallest(D, k, p_ids)

    return _stack(_run_chunks(work, len(q_ids), step, threads), k)


def build_neighbor_index(queries, pool, num_geo: int, num_euc: int, threads: int = 1) -> NeighborIndex:
    """Exact brute-force neighbor lists of every query against *pool*.

    A query that also appears in the pool (same id) is never its own neighbor.
    """
    if num_geo < 1 or num_euc < 1:
        raise ConfigError("neighbor counts must be >= 1")
    if len(pool) <= max(num_geo, num_euc):
        raise ConfigError(f"pool of {len(pool)} records is too small for {max(num_geo, num_euc)} neighbors")
    if queries.T != pool.T:
        raise DimensionError(f"queries have {queries.T} features, pool has {pool.T}")
    gi, gd = knn_geodesic(queries.lat, queries.lon, queries.ids, pool.lat, pool.lon, pool.ids, num_geo, threads)
    ei, ed = knn_euclidean(queries.features, queries.ids, pool.features, pool.ids, num_euc, threads)
    return NeighborIndex(queries.ids.copy(), pool.ids.copy(), gi, gd, ei, ed,
                         queries.content_hash(), pool.content_hash())


def save_index(index: NeighborIndex, path) -> None:
    header = {"format_version": INDEX_FORMAT_VERSION, "dataset_hash": index.query_hash,
              "pool_hash": index.pool_hash, "num_geo": index.num_geo, "num_euc": index.num_euc}
    write_container(path, INDEX_MAGIC, header, {
        "query_ids": index.query_ids, "pool_ids": index.pool_ids,
        "geo_idx": index.geo_idx, "geo_dist": index.geo_dist,
        "euc_idx": index.euc_idx, "euc_dist": index.euc_dist})


def load_index(path, dataset_hash=None, pool_hash=None) -> NeighborIndex:
    header, arr = read_container(path, INDEX_MAGIC)
    if header.get("format_version") != INDEX_FORMAT_VERSION:
        raise VersionError(header.get("format_version"), INDEX_FORMAT_VERSION)
    if dataset_hash is not None and header["dataset_hash"] != dataset_hash:
        raise StateError("index cache was built for a different query dataset")
    if pool_hash is not None and header["pool_hash"] != pool_hash:
        raise StateError("index cache was built against a different candidate pool")
    return NeighborIndex(arr["query_ids"], arr["pool_ids"], arr["geo_idx"], arr["geo_dist"],
                         arr["euc_idx"], arr["euc_dist"], header["dataset_hash"], header["pool_hash"])


def cached_neighbor_index(queries, pool, num_geo, num_euc, cache_dir=None, threads=1) -> NeighborIndex:
    """build_neighbor_index memoized on disk by (query hash, pool hash, counts)."""
    if cache_dir is None:
        return build_neighbor_index(queries, pool, num_geo, num_euc, threads)
    qh, ph = queries.content_hash(), pool.content_hash()
    path = Path(cache_dir) / f"nbr_{qh[:16]}_{ph[:16]}_{num_geo}_{num_euc}.gidx"
    if path.exists():
        idx = load_index(path, qh, ph)
        if idx.num_geo == num_geo and idx.num_euc == num_euc:
            return idx
    idx = build_neighbor_index(queries, pool, num_geo, num_euc, threads)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_index(idx, path)
    return idx


# -- inverse distance weighting -------------------------------------------

def idw_from_distances(distances, prices, power: float = 2.0):
    """Weighted mean with weights 1/d**power along the last axis.

    Rows with a zero distance return the price of the first exact hit.
    """
    d = np.asarray(distances, dtype=np.float64)
    y = np.asarray(prices, dtype=np.float64)
    if d.shape[-1] == 0:
        raise ConfigError("IDW needs at least one neighbor")
    if not power > 0:
        raise ConfigError(f"IDW power must be positive, got {power}")
    hit = d == 0
    with np.errstate(divide="ignore"):
        w = np.where(hit, 0.0, 1.0 / np.where(hit, 1.0, d) ** power)
    est = np.sum(w * y, axis=-1) / np.where(np.any(~hit, axis=-1), np.sum(w, axis=-1), 1.0)
    any_hit = np.any(hit, axis=-1)
    first = np.take_along_axis(y, np.argmax(hit, axis=-1)[..., None], axis=-1)[..., 0]
    return np.where(any_hit, first, est)


def idw_interpolate(target: GeoPoint, neighbors, power: float = 2.0) -> float:
    if not neighbors:
        raise ConfigError("IDW needs at least one neighbor")
    d = [geodesic_distance(target, p) for p, _ in neighbors]
    return float(idw_from_distances(d, [y for _, y in neighbors], power))


def idw_predict(index: NeighborIndex, pool_prices, power: float = 2.0) -> np.ndarray:
    """IDW estimate for every query row of *index* from its geo neighbors."""
    y = np.asarray(pool_prices, dtype=np.float64)[index.geo_idx]
    return idw_from_distances(index.geo_dist, y, power)

