import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gated_interp import attention as A
from gated_interp.errors import ConfigError, DimensionError


def block(n, heads=1, kind="gaussian", sigma=2.0, mech="geo", rng=None, zero=False):
    rng = rng or np.random.default_rng(0)
    b = A.init_block(mech, n, heads, sigma, kind, rng)
    if zero:
        b = b.with_tensors(**{k: np.zeros_like(v) for k, v in b.tensors().items()})
    return b


def test_softmax_stable_on_large_inputs():
    p = A.softmax(np.array([1000.0, 1000.0, -1000.0]))
    np.testing.assert_allclose(p, [0.5, 0.5, 0.0])
    assert np.all(np.isfinite(A.sigmoid(np.array([-800.0, 800.0]))))


def test_similarity_vector_cases():
    assert np.all(A.similarity_vector(np.zeros(4), block(4)) == 1.0)
    np.testing.assert_array_equal(A.similarity_vector([1.0, 2.0, 3.0], block(3, kind="identity")), [1, 2, 3])
    np.testing.assert_allclose(A.similarity_vector([0.0, 1.0], block(2)), [1.0, math.exp(-2.0)], atol=1e-15)


def test_head_attention_cases():
    n = 4
    h = A.HeadParams(np.zeros((n, n)), np.zeros(n), np.zeros((n, n)), np.zeros(n))
    np.testing.assert_allclose(A.head_attention(np.arange(n, dtype=float), h), np.full(n, 0.125))
    h2 = A.HeadParams(np.eye(2), np.zeros(2), np.zeros((2, 2)), np.zeros(2))
    a_prime = A.head_attention([0.0, math.log(3.0)], h2)
    np.testing.assert_allclose(2 * a_prime, [0.25, 0.75], atol=1e-15)
    with pytest.raises(DimensionError):
        A.head_attention(np.zeros(3), h2)


def test_geo_context_cases():
    T = 2
    c = A.geo_context([[0.1, 0.2]], [[1.0, 2.0]], [0.5], [9.0], [1.0])
    np.testing.assert_array_equal(c.values, [0.1, 0.2, 1.0, 2.0, 0.5, 9.0])
    z = A.geo_context(np.ones((3, 2)), np.ones((3, T)), np.ones(3), np.ones(3), np.zeros(3))
    assert len(z) == T + 4 and np.all(z.values == 0)
    two = A.geo_context(np.zeros((2, 2)), np.zeros((2, T)), np.zeros(2), [10.0, 20.0], [0.5, 0.5])
    assert two.values[-1] == 15.0
    with pytest.raises(DimensionError):
        A.geo_context(np.zeros((2, 2)), np.zeros((2, T)), np.zeros(2), [10.0, 20.0], [1.0])


def test_euc_context_cases():
    c = A.euc_context([[1.0, 2.0, 3.0]], [7.0], [1.0])
    np.testing.assert_array_equal(c.values, [1.0, 2.0, 3.0, 7.0])
    assert np.all(A.euc_context(np.ones((2, 3)), np.ones(2), np.zeros(2)).values == 0)
    shared = np.array([0.2, 0.4])
    c = A.euc_context(np.vstack([shared, shared]), [10.0, 30.0], [0.3, 0.3])
    np.testing.assert_allclose(c.values, [0.6 * 0.2, 0.6 * 0.4, 0.3 * 10 + 0.3 * 30], atol=1e-15)


def test_aggregate_heads_cases():
    v = A.ContextVector(np.array([1.0, 2.0]), "euc")
    one = A.aggregate_heads([v], A.AggregationGates(np.array([0.7]), np.array([-3.0])))
    np.testing.assert_array_equal(one.values, v.values)
    vs = [A.ContextVector(np.array([float(k), 2.0 * k]), "euc") for k in range(4)]
    mean = A.aggregate_heads(vs, A.AggregationGates(np.full(4, 0.3), np.full(4, 0.1)))
    np.testing.assert_allclose(mean.values, [1.5, 3.0], atol=1e-15)
    w = A.head_mixing_weights(A.AggregationGates(np.array([math.log(3.0), 0.0]), np.zeros(2)))
    np.testing.assert_allclose(w, [0.75, 0.25], atol=1e-15)
    with pytest.raises(ConfigError):
        A.aggregate_heads([], A.AggregationGates(np.zeros(0), np.zeros(0)))
    with pytest.raises(DimensionError):
        A.aggregate_heads([v, A.ContextVector(np.zeros(3), "euc")], A.AggregationGates(np.zeros(2), np.zeros(2)))


def test_block_forward_zero_params_one_head():
    b = block(2, heads=1, zero=True)
    rows = np.array([[[1.0, 2.0, 3.0], [5.0, 6.0, 7.0]]])
    out, cache = A.attention_block_forward(np.array([[0.3, 0.9]]), rows, b)
    np.testing.assert_allclose(out[0], 0.5 * rows[0].mean(axis=0), atol=1e-15)
    assert cache["a"].shape == (1, 1, 2)


def test_block_forward_deterministic_and_head_caches():
    rng = np.random.default_rng(4)
    b = block(5, heads=8, rng=rng)
    d, rows = rng.uniform(0, 2, (3, 5)), rng.normal(size=(3, 5, 7))
    o1, c1 = A.attention_block_forward(d, rows, b)
    o2, _ = A.attention_block_forward(d, rows, b)
    assert o1.tobytes() == o2.tobytes()
    for key in ("H", "a", "g", "a_prime"):
        assert c1[key].shape == (3, 8, 5)
    assert c1["gate_norm"].shape == (8,)


def test_block_shape_errors():
    b = block(3)
    with pytest.raises(DimensionError):
        A.attention_block_forward(np.zeros((1, 4)), np.zeros((1, 4, 2)), b)
    with pytest.raises(ConfigError):
        A.attention_block_forward(-np.ones((1, 3)), np.zeros((1, 3, 2)), b)


def test_block_invariants_sigma_required():
    with pytest.raises(ConfigError):
        A.init_block("geo", 3, 2, 0.0, "gaussian", np.random.default_rng(0))
    with pytest.raises(ConfigError):
        A.init_block("geo", 3, 0, 1.0, "gaussian", np.random.default_rng(0))


def _random_case(seed):
    rng = np.random.default_rng(seed)
    n, heads, T = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 6))
    kind = ("identity", "gaussian")[seed % 2]
    b = A.init_block(("geo", "euc")[seed % 3 == 0], n, heads, float(rng.uniform(0.5, 4)), kind, rng)
    scale = float(rng.choice([0.1, 1.0, 5.0]))
    b = b.with_tensors(**{k: v + rng.normal(0, scale, v.shape) for k, v in b.tensors().items()})
    width = T + 4 if b.mechanism == "geo" else T + 1
    d = rng.uniform(0, 3, (2, n))
    rows = rng.normal(size=(2, n, width))
    return b, d, rows, width


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=300, deadline=None)
def test_attention_invariants(seed):
    b, d, rows, width = _random_case(seed)
    out, c = A.attention_block_forward(d, rows, b)
    assert np.all(np.abs(c["a"].sum(axis=-1) - 1) <= 1e-9)
    assert np.all((c["g"] > 0) & (c["g"] < 1))
    assert np.all((c["a_prime"] > 0) & (c["a_prime"] < c["a"]))
    assert np.all(c["gate_norm"] >= 0) and abs(c["gate_norm"].sum() - 1) <= 1e-9
    assert out.shape == (2, width)
    for k in ("L", "H", "a", "g", "a_prime", "V"):
        assert np.all(np.isfinite(c[k]))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_neighbor_permutation_equivariance(seed):
    b, d, rows, _ = _random_case(seed)
    perm = np.random.default_rng(seed + 1).permutation(b.n)
    pb = b.with_tensors(W_sim=b.W_sim[:, perm][:, :, perm], b_sim=b.b_sim[:, perm],
                        W_gate=b.W_gate[:, perm][:, :, perm], b_gate=b.b_gate[:, perm])
    o1, _ = A.attention_block_forward(d, rows, b)
    o2, _ = A.attention_block_forward(d[:, perm], rows[:, perm], pb)
    np.testing.assert_allclose(o1, o2, rtol=1e-12, atol=1e-12)


def test_batched_head_matches_single_head_path():
    rng = np.random.default_rng(2)
    b = block(4, heads=3, rng=rng)
    d, rows = rng.uniform(0, 2, (1, 4)), rng.normal(size=(1, 4, 5))
    out, _ = A.attention_block_forward(d, rows, b)
    L = A.similarity_vector(d[0], b)
    vecs = [A.ContextVector(A.head_attention(L, h) @ rows[0], "geo") for h in b.heads]
    np.testing.assert_allclose(out[0], A.aggregate_heads(vecs, b.agg).values, rtol=1e-13)


@pytest.mark.parametrize("kind", ["identity", "gaussian"])
def test_block_backward_matches_central_differences(kind):
    rng = np.random.default_rng(7)
    b = block(4, heads=3, kind=kind, rng=rng)
    b = b.with_tensors(**{k: v + rng.normal(0, 0.3, v.shape) for k, v in b.tensors().items()})
    d, rows = rng.uniform(0, 2, (2, 4)), rng.normal(size=(2, 4, 5))
    dout = rng.normal(size=(2, 5))
    _, cache = A.attention_block_forward(d, rows, b)
    grads = A.attention_block_backward(dout, cache, b)
    eps = 1e-6
    for name in A.AttentionBlockParams.TENSORS:
        theta = getattr(b, name).copy()
        num = np.zeros_like(theta)
        for i in range(theta.size):
            for sgn in (1, -1):
                t = theta.copy()
                t.flat[i] += sgn * eps
                o, _ = A.attention_block_forward(d, rows, b.with_tensors(**{name: t}))
                num.flat[i] += sgn * np.sum(o * dout) / (2 * eps)
        np.testing.assert_allclose(grads[name], num, rtol=1e-5, atol=1e-8)
