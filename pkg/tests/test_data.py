import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gated_interp import data as D
from gated_interp.errors import (
    ConfigError, EmptyDatasetError, ParseError, SchemaError, SplitError, ValidationError,
)

from conftest import make_dataset


def _desc(T=2, log=False):
    return D.DatasetDescriptor("t", tuple(f"f{k}" for k in range(T)), log, "USD")


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_three_rows(tmp_path):
    p = _write(tmp_path / "a.csv", "id,lat,lon,price,f0,f1\n1,47.5,-122.3,100,1,2\n2,47.6,-122.2,200,3,4\n"
                                   "3,47.7,-122.1,300,5,6\n")
    ds = D.load_csv(p, _desc())
    assert len(ds) == 3 and ds.T == 2
    np.testing.assert_array_equal(ds.features[2], [5, 6])


def test_missing_price_column(tmp_path):
    p = _write(tmp_path / "a.csv", "id,lat,lon,f0,f1\n1,47.5,-122.3,1,2\n")
    with pytest.raises(SchemaError) as e:
        D.load_csv(p, _desc())
    assert e.value.column == "price"


def test_unparsable_cell(tmp_path):
    p = _write(tmp_path / "a.csv", "id,lat,lon,price,f0,f1\n1,47.5,-122.3,100,abc,2\n")
    with pytest.raises(ParseError) as e:
        D.load_csv(p, _desc())
    assert e.value.row == 1 and e.value.column == "f0"


@pytest.mark.parametrize("row", ["1,95,-122.3,100,1,2", "1,47.5,-190,100,1,2", "1,47.5,-122.3,-5,1,2",
                                 "1,47.5,-122.3,nan,1,2"])
def test_invariant_violation_names_record(tmp_path, row):
    p = _write(tmp_path / "a.csv", "id,lat,lon,price,f0,f1\n" + row + "\n")
    with pytest.raises(ValidationError) as e:
        D.load_csv(p, _desc())
    assert e.value.record_id == 1


def test_log_scaled_price_may_be_nonpositive(tmp_path):
    p = _write(tmp_path / "a.csv", "id,lat,lon,price,f0,f1\n1,47.5,-122.3,-0.5,1,2\n")
    assert D.load_csv(p, _desc(log=True)).price[0] == -0.5


def test_descriptor_invariants():
    with pytest.raises(SchemaError):
        D.DatasetDescriptor("x", ("a", "a"), False, "USD")
    with pytest.raises(SchemaError):
        D.DatasetDescriptor("x", (), False, "USD")


def test_descriptor_sidecar_round_trip(tmp_path):
    d = _desc(3, True)
    D.save_descriptor(d, tmp_path / "d.json")
    assert D.load_descriptor(tmp_path / "d.json") == d


def test_csv_round_trip(tmp_path):
    ds = make_dataset(30, 3, seed=4)
    D.write_csv(ds, tmp_path / "x.csv")
    back = D.load_csv(tmp_path / "x.csv", ds.descriptor)
    # canonical 12-significant-digit formatting is a fixed point
    D.write_csv(back, tmp_path / "y.csv")
    again = D.load_csv(tmp_path / "y.csv", ds.descriptor)
    for f in ("ids", "lat", "lon", "price", "features"):
        np.testing.assert_array_equal(getattr(back, f), getattr(again, f))
    np.testing.assert_allclose(back.price, ds.price, rtol=1e-11)


def test_fit_normalization_cases():
    desc = _desc(1)
    ds = D.Dataset(desc, [1, 2, 3], [0, 0, 0], [0, 0, 0], [[2.0], [4.0], [6.0]], [1, 1, 1])
    s = D.fit_normalization(ds)
    assert s.minimum[0] == 2 and s.maximum[0] == 6 and len(s) == 1
    const = D.Dataset(desc, [1, 2], [0, 0], [0, 0], [[5.0], [5.0]], [1, 1])
    s = D.fit_normalization(const)
    assert s.minimum[0] == 5 == s.maximum[0]
    assert len(D.fit_normalization(make_dataset(5, 2))) == 2


def test_fit_normalization_empty():
    ds = D.Dataset(_desc(2), [], [], [], np.empty((0, 2)), [])
    with pytest.raises(EmptyDatasetError):
        D.fit_normalization(ds)


def test_apply_normalization_rules():
    lo, hi = np.array([2.0, 5.0]), np.array([6.0, 5.0])
    out = D.minmax_scale(np.array([[4.0, 5.0], [8.0, 7.0]]), lo, hi)
    np.testing.assert_array_equal(out, [[0.5, 0.0], [1.5, 0.0]])


def test_apply_normalization_arity():
    with pytest.raises(SchemaError):
        D.apply_normalization(make_dataset(5, 2), D.NormalizationStats(np.zeros(3), np.ones(3)))


@given(st.integers(5, 60), st.integers(1, 4), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_training_features_land_in_unit_interval(n, T, seed):
    ds = make_dataset(n, T, seed)
    f = D.apply_normalization(ds, D.fit_normalization(ds)).features
    assert f.min() >= 0.0 and f.max() <= 1.0


def test_split_sizes_and_determinism():
    ds = make_dataset(1000, 2)
    tr, te, va = D.split_dataset(ds, D.SplitSpec(0.7, 0.2, 0.1, seed=5))
    assert (len(tr), len(te), len(va)) == (700, 200, 100)
    tr2, te2, va2 = D.split_dataset(ds, D.SplitSpec(0.7, 0.2, 0.1, seed=5))
    for a, b in ((tr, tr2), (te, te2), (va, va2)):
        np.testing.assert_array_equal(a.ids, b.ids)


def test_split_kc_floor_arithmetic():
    # remainder goes to train: 21650 - floor(0.2 n) - floor(0.1 n)
    ds = make_dataset(21650, 1)
    tr, te, va = D.split_dataset(ds, D.SplitSpec())
    assert (len(tr), len(te), len(va)) == (15155, 4330, 2165)


def test_split_rejects_bad_fractions():
    with pytest.raises(SplitError):
        D.split_dataset(make_dataset(100, 1), D.SplitSpec(0.5, 0.5, 0.5))
    with pytest.raises(SplitError):
        D.split_dataset(make_dataset(9, 1), D.SplitSpec())


@given(st.integers(10, 300), st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_split_partitions(n, seed):
    ds = make_dataset(n, 1)
    parts = D.split_dataset(ds, D.SplitSpec(seed=seed))
    ids = np.concatenate([p.ids for p in parts])
    assert len(ids) == n and set(ids.tolist()) == set(ds.ids.tolist())


def test_synthesize_reproducible_and_shaped():
    a = D.synthesize_dataset(500, 4, 1.0, 0.1, 7)
    b = D.synthesize_dataset(500, 4, 1.0, 0.1, 7)
    assert len(a) == 500 and a.T == 4
    assert a.content_hash() == b.content_hash()


def test_synthesize_noise_free_is_exp_linear():
    ds = D.synthesize_dataset(200, 3, 0.0, 0.0, 11)
    logp = np.log(ds.price)
    X = np.column_stack([np.ones(len(ds)), ds.features])
    coef, res, *_ = np.linalg.lstsq(X, logp, rcond=None)
    np.testing.assert_allclose(X @ coef, logp, atol=1e-10)
    assert abs(coef[0]) < 1e-10


def test_synthesize_too_small():
    with pytest.raises(ConfigError):
        D.synthesize_dataset(49, 2, 1.0, 0.1, 0)


def test_dataset_is_immutable(toy):
    with pytest.raises(ValueError):
        toy.price[0] = 1.0
