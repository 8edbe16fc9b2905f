import csv
import hashlib
import json

import pytest

from gated_interp.cli import main

FAST = ["--nearest-geo", "6", "--nearest-euclid", "6", "--num-heads", "2", "--nodes", "10", "--lr", "0.01",
        "--batch-size", "32", "--max-epochs", "6", "--patience", "3"]


def _digest(d):
    return {p.relative_to(d).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--n", "300", "--features", "3", "--log-prices", "--seed", "2", "--out", str(root)]) == 0
    return root


@pytest.fixture(scope="module")
def prepared(synth):
    out = synth / "prep"
    assert main(["prepare", "--dataset", str(synth / "synthetic.csv"), "--descriptor",
                 str(synth / "synthetic.json"), "--out", str(out), *FAST]) == 0
    return out


def test_prepare_outputs_and_idempotent(synth, prepared):
    names = {p.name for p in prepared.iterdir()}
    assert {"train.csv", "test.csv", "val.csv", "descriptor.json", "stats.json", "manifest.json", "cache"} <= names
    assert len(list((prepared / "cache").glob("*.gidx"))) == 2
    with open(prepared / "train.csv") as fh:
        assert sum(1 for _ in fh) - 1 == 210
    again = synth / "prep2"
    main(["prepare", "--dataset", str(synth / "synthetic.csv"), "--descriptor", str(synth / "synthetic.json"),
          "--out", str(again), *FAST])
    a, b = _digest(prepared), _digest(again)
    assert a.keys() == b.keys()
    for k, v in a.items():
        if k != "manifest.json":   # records the --out path
            assert v == b[k], k


def test_prepare_does_not_touch_inputs(synth, prepared):
    before = _digest(synth / "prep")
    data = (synth / "synthetic.csv").read_bytes()
    main(["prepare", "--dataset", str(synth / "synthetic.csv"), "--descriptor", str(synth / "synthetic.json"),
          "--out", str(synth / "prep"), *FAST])
    assert (synth / "synthetic.csv").read_bytes() == data
    assert _digest(synth / "prep") == before


def test_missing_descriptor_exit_2(synth, capsys):
    rc = main(["prepare", "--dataset", str(synth / "synthetic.csv"), "--descriptor", str(synth / "nope.json"),
               "--out", str(synth / "x")])
    assert rc == 2 and "--descriptor" in capsys.readouterr().err


def test_unknown_preset_exit_2(prepared, capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", "--prepared", str(prepared), "--preset", "sf"])
    assert e.value.code == 2
    err = capsys.readouterr().err
    assert all(p in err for p in ("it", "kc", "poa", "bj"))


def test_missing_prepared_exit_2(tmp_path):
    assert main(["train", "--prepared", str(tmp_path / "none")]) == 2


def test_runtime_failure_exit_1(synth, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,lat,lon,price,f1,f2,f3\n1,47.5,-122.3,12,0,0,zz\n")
    rc = main(["prepare", "--dataset", str(bad), "--descriptor", str(synth / "synthetic.json"),
               "--out", str(tmp_path / "o")])
    assert rc == 1


@pytest.fixture(scope="module")
def run_dir(prepared):
    out = prepared / "run"
    assert main(["train", "--prepared", str(prepared), "--out", str(out), *FAST]) == 0
    return out


def test_train_outputs(run_dir):
    assert (run_dir / "model.gam").exists()
    lines = (run_dir / "train_log.jsonl").read_text().splitlines()
    assert 1 <= len(lines) <= 6
    assert set(json.loads(lines[0])) == {"epoch", "train_loss", "val_male", "val_rmse", "wall_ms"}
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config"]["num_heads"] == 2 and manifest["config"]["sigma"] == 2.0
    assert "created_at" not in json.dumps(manifest)


def test_resolved_preset_overrides(prepared, tmp_path):
    out = tmp_path / "poa"
    main(["train", "--prepared", str(prepared), "--out", str(out), "--preset", "poa", "--max-epochs", "1",
          "--nearest-euclid", "6"])
    cfg = json.loads((out / "manifest.json").read_text())["config"]
    assert (cfg["num_heads"], cfg["num_geo"], cfg["num_euc"], cfg["similarity_kind"]) == (4, 10, 6, "identity")


def test_evaluate(prepared, run_dir):
    assert main(["evaluate", "--model", str(run_dir / "model.gam"), "--prepared", str(prepared)]) == 0
    m = json.loads((run_dir / "metrics.json").read_text())
    assert {"male", "rmse", "n_test"} <= set(m) and m["n_test"] == 60


def test_evaluate_missing_model(prepared, run_dir):
    assert main(["evaluate", "--model", str(run_dir / "absent.gam"), "--prepared", str(prepared)]) == 2


def test_embed_columns(prepared, run_dir):
    assert main(["embed", "--model", str(run_dir / "model.gam"), "--prepared", str(prepared)]) == 0
    rows = list(csv.reader((run_dir / "embeddings.csv").open()))
    assert len(rows[0]) == 10 + 1 and len(rows) == 300 + 1


def test_gradcheck(capsys):
    assert main(["gradcheck"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_quantiles(synth, tmp_path):
    assert main(["quantiles", "--dataset", str(synth / "synthetic.csv"), "--descriptor",
                 str(synth / "synthetic.json"), "--n", "20", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "quantiles.csv").exists()


def test_benchmark_rows(synth, tmp_path):
    assert main(["benchmark", "--dataset", str(synth / "synthetic.csv"), "--descriptor",
                 str(synth / "synthetic.json"), "--folds", "3", "--out", str(tmp_path), *FAST]) == 0
    rows = list(csv.DictReader((tmp_path / "report.csv").open()))
    assert {(r["model"], r["mode"]) for r in rows} == {
        ("ours", "end-to-end"), ("ols", "raw"), ("ols", "embeddings"), ("knn", "raw"), ("knn", "embeddings"),
        ("idw", "raw")}
