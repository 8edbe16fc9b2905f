"""Multi-head gated attention over a house's neighbors.

One block serves one mechanism (``"geo"`` or ``"euc"``). All heads read the
same similarity vector L built from the neighbor distances; head h computes

    H = W_sim[h] @ L + b_sim[h]
    a = softmax(H)
    g = sigmoid(W_gate[h] @ a + b_gate[h])
    a' = g * a
    v_h = sum_j a'_j * rows_j

and the heads are mixed with softmax(gate_weight + gate_bias).

Every compute function accepts a leading batch axis; the single-house helpers
are thin wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .spatial import geo_similarity, identity_similarity

SIMILARITY_KINDS = ("identity", "gaussian")
MECHANISMS = ("geo", "euc")


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(x):
    # two-branch form never overflows exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class HeadParams:
    W_sim: np.ndarray
    b_sim: np.ndarray
    W_gate: np.ndarray
    b_gate: np.ndarray


@dataclass(frozen=True)
class AggregationGates:
    gate_weight: np.ndarray
    gate_bias: np.ndarray


@dataclass(frozen=True)
class ContextVector:
    values: np.ndarray
    mechanism: str

    def __len__(self):
        return len(self.values)


@dataclass
class AttentionBlockParams:
    """Stacked per-head parameters; ``heads``/``agg`` give per-head views."""

    mechanism: str
    W_sim: np.ndarray     # (heads, n, n)
    b_sim: np.ndarray     # (heads, n)
    W_gate: np.ndarray    # (heads, n, n)
    b_gate: np.ndarray    # (heads, n)
    gate_weight: np.ndarray  # (heads,)
    gate_bias: np.ndarray    # (heads,)
    sigma: float = 2.0
    similarity_kind: str = "gaussian"

    TENSORS = ("W_sim", "b_sim", "W_gate", "b_gate", "gate_weight", "gate_bias")

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"unknown mechanism {self.mechanism!r}")
        if self.similarity_kind not in SIMILARITY_KINDS:
            raise ConfigError(f"unknown similarity kind {self.similarity_kind!r}")
        if self.similarity_kind == "gaussian" and not self.sigma > 0:
            raise ConfigError(f"gaussian similarity needs sigma > 0, got {self.sigma}")
        h, n = self.num_heads, self.n
        if h < 1:
            raise ConfigError("num_heads must be >= 1")
        expected = {"W_sim": (h, n, n), "b_sim": (h, n), "W_gate": (h, n, n), "b_gate": (h, n),
                    "gate_weight": (h,), "gate_bias": (h,)}
        for name, shape in expected.items():
            if np.shape(getattr(self, name)) != shape:
                raise DimensionError(f"{self.mechanism}.{name} has shape {np.shape(getattr(self, name))}, expected {shape}")

    @property
    def num_heads(self) -> int:
        return self.W_sim.shape[0]

    @property
    def n(self) -> int:
        return self.W_sim.shape[1]

    @property
    def heads(self) -> list[HeadParams]:
        return [HeadParams(self.W_sim[h], self.b_sim[h], self.W_gate[h], self.b_gate[h])
                for h in range(self.num_heads)]

    @property
    def agg(self) -> AggregationGates:
        return AggregationGates(self.gate_weight, self.gate_bias)

    def tensors(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.TENSORS}

    def with_tensors(self, **arrays) -> "AttentionBlockParams":
        t = self.tensors()
        t.update(arrays)
        return AttentionBlockParams(self.mechanism, sigma=self.sigma, similarity_kind=self.similarity_kind, **t)


def init_block(mechanism, n, num_heads, sigma, similarity_kind, rng) -> AttentionBlockParams:
    lim = np.sqrt(1.0 / n)
    return AttentionBlockParams(
        mechanism,
        W_sim=rng.uniform(-lim, lim, (num_heads, n, n)),
        b_sim=np.zeros((num_heads, n)),
        W_gate=rng.uniform(-lim, lim, (num_heads, n, n)),
        b_gate=np.zeros((num_heads, n)),
        gate_weight=np.zeros(num_heads),
        gate_bias=np.zeros(num_heads),
        sigma=sigma,
        similarity_kind=similarity_kind,
    )


def similarity_vector(distances, block: AttentionBlockParams) -> np.ndarray:
    """Distances -> similarity scores L fed to every head of the block.

    "gaussian" applies exp(-d * sigma^2 / 2) to the distances of either
    mechanism; "identity" passes them through unchanged.
    """
    d = np.asarray(distances, dtype=np.float64)
    if np.any(d < 0):
        raise ConfigError("distances must be non-negative")
    if block.similarity_kind == "gaussian":
        return geo_similarity(d, block.sigma)
    return identity_similarity(d)


def _heads_forward(L, block):
    # L: (B, n) -> H, a, g, a_prime: (B, heads, n)
    H = np.einsum("bj,hkj->bhk", L, block.W_sim) + block.b_sim[None]
    a = softmax(H, axis=-1)
    g = sigmoid(np.einsum("bhj,hkj->bhk", a, block.W_gate) + block.b_gate[None])
    return H, a, g, g * a


def head_attention(L, head: HeadParams) -> np.ndarray:
    L = np.asarray(L, dtype=np.float64)
    n = head.W_sim.shape[0]
    if L.shape != (n,) or head.W_sim.shape != (n, n) or head.W_gate.shape != (n, n):
        raise DimensionError(f"similarity vector of shape {L.shape} does not fit head of size {n}")
    a = softmax(head.W_sim @ L + head.b_sim)
    g = sigmoid(head.W_gate @ a + head.b_gate)
    return g * a


def _context(rows, a_prime, width, mechanism):
    rows = np.asarray(rows, dtype=np.float64)
    a_prime = np.asarray(a_prime, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != width or rows.shape[0] != a_prime.shape[0]:
        raise DimensionError(f"{rows.shape[0] if rows.ndim else 0} neighbor rows vs {a_prime.shape[0]} weights")
    return ContextVector(a_prime @ rows, mechanism)


def geo_context(coords, features, delta_d, prices, a_prime) -> ContextVector:
    """Weighted sum of [G_j + A_j + delta_d_j + y_j] (concatenations), length T + 4."""
    rows = np.column_stack([np.asarray(coords, dtype=np.float64).reshape(-1, 2),
                            np.atleast_2d(np.asarray(features, dtype=np.float64)),
                            np.asarray(delta_d, dtype=np.float64), np.asarray(prices, dtype=np.float64)])
    return _context(rows, a_prime, rows.shape[1], "geo")


def euc_context(features, prices, a_prime) -> ContextVector:
    """Weighted sum of [A_j + y_j], length T + 1."""
    rows = np.column_stack([np.atleast_2d(np.asarray(features, dtype=np.float64)),
                            np.asarray(prices, dtype=np.float64)])
    return _context(rows, a_prime, rows.shape[1], "euc")


def head_mixing_weights(agg: AggregationGates) -> np.ndarray:
    return softmax(np.asarray(agg.gate_weight) + np.asarray(agg.gate_bias))


def aggregate_heads(head_vectors, agg: AggregationGates) -> ContextVector:
    if len(head_vectors) == 0:
        raise ConfigError("no head vectors to aggregate")
    lengths = {len(v) for v in head_vectors}
    if len(lengths) != 1:
        raise DimensionError(f"head vectors have mixed lengths {sorted(lengths)}")
    if len(head_vectors) != len(agg.gate_weight):
        raise DimensionError(f"{len(head_vectors)} head vectors but {len(agg.gate_weight)} gates")
    p = head_mixing_weights(agg)
    V = np.stack([v.values for v in head_vectors])
    return ContextVector(p @ V, head_vectors[0].mechanism)


def attention_block_forward(distances, rows, block: AttentionBlockParams):
    """Forward pass of one block over a batch.

    distances: (B, n) neighbor distances; rows: (B, n, d) neighbor
    concatenation rows. Returns the aggregated context (B, d) and a cache
    for :func:`attention_block_backward`.
    """
    distances = np.asarray(distances, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    if distances.ndim != 2 or distances.shape[1] != block.n:
        raise DimensionError(f"{block.mechanism} block expects {block.n} neighbors, got shape {distances.shape}")
    if rows.shape[:2] != distances.shape:
        raise DimensionError(f"rows {rows.shape} do not match distances {distances.shape}")
    L = similarity_vector(distances, block)
    H, a, g, a_prime = _heads_forward(L, block)
    V = np.einsum("bhn,bnd->bhd", a_prime, rows)
    gate_norm = softmax(block.gate_weight + block.gate_bias)
    out = np.einsum("h,bhd->bd", gate_norm, V)
    cache = {"L": L, "H": H, "a": a, "g": g, "a_prime": a_prime, "V": V,
             "gate_norm": gate_norm, "rows": rows, "mechanism": block.mechanism}
    return out, cache


def attention_block_backward(dout, cache, block: AttentionBlockParams) -> dict[str, np.ndarray]:
    """Parameter gradients of sum_b dout[b] . out[b]."""
    p, V, rows = cache["gate_norm"], cache["V"], cache["rows"]
    a, g, L = cache["a"], cache["g"], cache["L"]

    # head mixing softmax
    dp = np.einsum("bd,bhd->h", dout, V)
    dz = p * (dp - np.dot(p, dp))
    dV = p[None, :, None] * dout[:, None, :]

    # context sum and gating: a' = g * a, g = sigmoid(W_gate a + b_gate)
    da_prime = np.einsum("bhd,bnd->bhn", dV, rows)
    du = da_prime * a * g * (1.0 - g)
    dW_gate = np.einsum("bhk,bhj->hkj", du, a)
    db_gate = du.sum(axis=0)
    da = da_prime * g + np.einsum("bhk,hkj->bhj", du, block.W_gate)

    # attention softmax, H = W_sim L + b_sim
    dH = a * (da - np.sum(a * da, axis=-1, keepdims=True))
    dW_sim = np.einsum("bhk,bj->hkj", dH, L)
    db_sim = dH.sum(axis=0)
    return {"W_sim": dW_sim, "b_sim": db_sim, "W_gate": dW_gate, "b_gate": db_gate,
            "gate_weight": dz, "gate_bias": dz.copy()}
