"""Command-line entry point: ``gated-interp <subcommand>``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as D
from .errors import DatasetHashWarning, GatedInterpError
from .evaluation import (
    benchmark,
    distance_quantiles,
    load_external_rows,
    write_quantiles_csv,
    write_report_csv,
    write_report_json,
)
from .metrics import price_metrics
from .model import embed_dataset, gradient_check, tiny_instance, write_embeddings_csv
from .persistence import ModelArtifact, check_dataset_hash, load_model, save_model
from .spatial import cached_neighbor_index
from .training import PRESETS, FittedModel, TrainConfig, fit_model

GRADCHECK_THRESHOLD = 1e-4

OVERRIDES = {
    # flag -> TrainConfig field
    "num_heads": "num_heads", "sigma": "sigma", "nearest_geo": "num_geo", "nearest_euclid": "num_euc",
    "nodes": "nodes", "lr": "learning_rate", "batch_size": "batch_size", "similarity": "similarity_kind",
    "max_epochs": "max_epochs", "patience": "patience",
}


class UsageError(Exception):
    pass


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _need_files(args, *flags):
    for flag in flags:
        val = getattr(args, flag.lstrip("-").replace("-", "_"))
        if not Path(val).is_file():
            raise UsageError(f"{flag}: file {val} does not exist")


def _threads(args):
    return args.threads or os.cpu_count() or 1


def resolve_config(args) -> TrainConfig:
    cfg = PRESETS[args.preset]
    changes = {field: getattr(args, flag) for flag, field in OVERRIDES.items() if getattr(args, flag, None) is not None}
    return replace(cfg, seed=args.seed, **changes).validate()


def _load_prepared(prep: Path):
    if not prep.is_dir():
        raise UsageError(f"prepared directory {prep} does not exist")
    for name in ("descriptor.json", "train.csv", "val.csv", "test.csv"):
        if not (prep / name).exists():
            raise UsageError(f"{prep / name} is missing; run `prepare` first")
    desc = D.load_descriptor(prep / "descriptor.json")
    return desc, {s: D.load_csv(prep / f"{s}.csv", desc) for s in ("train", "val", "test")}


def _manifest(out: Path, command: str, args, cfg: TrainConfig | None = None, **extra):
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
                if k not in ("func", "threads")}
    m = {"command": command, "args": resolved, **extra}
    if cfg is not None:
        m["config"] = cfg.to_dict()
    _write_json(m, out / "manifest.json")


def _fitted_from_artifact(art: ModelArtifact, splits) -> FittedModel:
    pool = D.apply_normalization(splits["train"], art.stats)
    from .training import TrainingLog
    return FittedModel(art.config, art.stats, art.params, TrainingLog(float("nan")), pool,
                       splits["train"].content_hash())


# -- subcommands -----------------------------------------------------------

def cmd_prepare(args):
    _need_files(args, "--dataset", "--descriptor")
    desc = D.load_descriptor(args.descriptor)
    ds = D.load_csv(args.dataset, desc)
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test, val = D.split_dataset(ds, D.SplitSpec(0.7, 0.2, 0.1, seed=args.seed))
    for name, part in (("train", train), ("test", test), ("val", val)):
        D.write_csv(part, out / f"{name}.csv", digits=17)
    D.save_descriptor(desc, out / "descriptor.json")
    # reload so cached indices are keyed on exactly what later commands read
    parts = {s: D.load_csv(out / f"{s}.csv", desc) for s in ("train", "val", "test")}
    stats = D.fit_normalization(parts["train"])
    _write_json(stats.to_dict(), out / "stats.json")
    norm = {s: D.apply_normalization(p, stats) for s, p in parts.items()}
    cache = out / "cache"
    cached_neighbor_index(D.concat_datasets(norm["train"], norm["val"]), norm["train"], cfg.num_geo, cfg.num_euc,
                          cache, _threads(args))
    cached_neighbor_index(norm["test"], norm["train"], cfg.num_geo, cfg.num_euc, cache, _threads(args))
    _manifest(out, "prepare", args, cfg, sizes={s: len(p) for s, p in parts.items()},
              dataset_hash=ds.content_hash())
    print(f"prepared {len(ds)} records -> train {len(train)}, test {len(test)}, val {len(val)} in {out}")


def cmd_train(args):
    prep = Path(args.prepared)
    desc, splits = _load_prepared(prep)
    cfg = resolve_config(args)
    out = Path(args.out or prep / "run")
    out.mkdir(parents=True, exist_ok=True)

    def progress(rec):
        if args.verbose:
            print(f"epoch {rec['epoch']:4d}  loss {rec['train_loss']:.5f}  val MALE {rec['val_male']:.5f}",
                  file=sys.stderr)

    fitted = fit_model(splits["train"], splits["val"], cfg, threads=_threads(args), cache_dir=prep / "cache",
                       progress=progress)
    art = ModelArtifact(splits["train"].content_hash(), cfg, fitted.stats, fitted.params, fitted.log.digest())
    save_model(art, out / "model.gam")
    (out / "train_log.jsonl").write_text(fitted.log.jsonl(), encoding="utf-8")
    _manifest(out, "train", args, cfg, best_epoch=fitted.log.best_epoch, epochs=len(fitted.log.epochs))
    best = fitted.log.epochs[fitted.log.best_epoch - 1]
    print(f"trained {len(fitted.log.epochs)} epochs; best epoch {fitted.log.best_epoch} "
          f"val MALE {best['val_male']:.5f}; model -> {out / 'model.gam'}")


def _artifact_and_splits(args):
    prep = Path(args.prepared)
    _need_files(args, "--model")
    desc, splits = _load_prepared(prep)
    art = load_model(args.model)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DatasetHashWarning)
        check_dataset_hash(art, splits["train"].content_hash())
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return prep, desc, splits, art


def cmd_evaluate(args):
    prep, desc, splits, art = _artifact_and_splits(args)
    fitted = _fitted_from_artifact(art, splits)
    fitted.cache_dir = prep / "cache"
    test = splits["test"]
    m, r = price_metrics(fitted.predict(test), test.price, desc.price_is_log_scaled)
    out = Path(args.out or Path(args.model).parent)
    out.mkdir(parents=True, exist_ok=True)
    result = {"dataset": desc.name, "male": m, "rmse": r, "n_test": len(test)}
    _write_json(result, out / "metrics.json")
    print(f"test MALE {m:.5f}  RMSE {r:.2f}  (n={len(test)})")


def cmd_embed(args):
    prep, desc, splits, art = _artifact_and_splits(args)
    fitted = _fitted_from_artifact(art, splits)
    fitted.cache_dir = prep / "cache"
    ds = D.concat_datasets(splits["train"], splits["val"], splits["test"])
    out = Path(args.out or Path(args.model).parent)
    out.mkdir(parents=True, exist_ok=True)
    emb = fitted.embed(ds)
    write_embeddings_csv(emb, out / "embeddings.csv")
    print(f"wrote {len(emb)} embeddings of length {emb.vectors.shape[1]} -> {out / 'embeddings.csv'}")


def cmd_benchmark(args):
    _need_files(args, "--dataset", "--descriptor")
    desc = D.load_descriptor(args.descriptor)
    ds = D.load_csv(args.dataset, desc)
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = load_external_rows(args.external) if args.external else None
    report = benchmark(ds, cfg, k_folds=args.folds, seed=args.seed, knn_k=args.knn_k, external_rows=ext,
                       threads=_threads(args), cache_dir=out / "cache")
    write_report_json(report, out / "report.json")
    write_report_csv(report, out / "report.csv")
    _manifest(out, "benchmark", args, cfg)
    for r in report.rows:
        avg = "" if r.male_avg is None else f"  avg MALE {r.male_avg:.4f}  avg RMSE {r.rmse_avg:.1f}"
        print(f"{r.model:>5s} {r.mode:<11s} best MALE {r.male_best:.4f}  best RMSE {r.rmse_best:.1f}{avg}")


def cmd_gradcheck(args):
    worst = 0.0
    for s in range(args.seed, args.seed + args.instances):
        params, sample = tiny_instance(s, similarity_kind=args.similarity or "gaussian")
        worst = max(worst, gradient_check(params, sample, args.epsilon))
    print(f"max relative error {worst:.3e} over {args.instances} instances (eps={args.epsilon:g})")
    return 0 if worst < GRADCHECK_THRESHOLD else 1


def cmd_quantiles(args):
    _need_files(args, "--dataset", "--descriptor")
    desc = D.load_descriptor(args.descriptor)
    ds = D.load_csv(args.dataset, desc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = distance_quantiles(ds, args.n, _threads(args))
    write_quantiles_csv(table, out / "quantiles.csv")
    for kind, q in table.items():
        print(kind, " ".join(f"{k}={v:.4f}" for k, v in q.items()))


def cmd_synth(args):
    ds = D.synthesize_dataset(args.n, args.features, args.spatial_weight, args.noise_sd, args.seed)
    if args.log_prices:
        ds = ds.to_log_scale()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    D.write_csv(ds, out / "synthetic.csv", digits=17)
    D.save_descriptor(ds.descriptor, out / "synthetic.json")
    print(f"wrote {len(ds)} synthetic records -> {out / 'synthetic.csv'}")


# -- parser ----------------------------------------------------------------

def _add_common(p, need_out=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: all cores)")
    if need_out:
        p.add_argument("--out", required=True)


def _add_hparams(p):
    p.add_argument("--preset", choices=sorted(PRESETS), default="kc")
    p.add_argument("--num-heads", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--nearest-geo", type=int)
    p.add_argument("--nearest-euclid", type=int)
    p.add_argument("--nodes", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--similarity", choices=["identity", "gaussian"])
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gated-interp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split a dataset, fit scaling, cache neighbor indices")
    p.add_argument("--dataset", required=True)
    p.add_argument("--descriptor", required=True)
    _add_hparams(p)
    _add_common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train on a prepared directory")
    p.add_argument("--prepared", required=True)
    p.add_argument("--verbose", action="store_true")
    _add_hparams(p)
    _add_common(p, need_out=False)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    for name, fn, helptext in (("evaluate", cmd_evaluate, "test-split MALE/RMSE of a model"),
                               ("embed", cmd_embed, "export house embeddings")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--model", required=True)
        p.add_argument("--prepared", required=True)
        _add_common(p, need_out=False)
        p.add_argument("--out")
        p.set_defaults(func=fn)

    p = sub.add_parser("benchmark", help="model vs OLS/kNN/IDW on raw features and embeddings")
    p.add_argument("--dataset", required=True)
    p.add_argument("--descriptor", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--knn-k", type=int, default=10)
    p.add_argument("--external", help="CSV of externally supplied report rows")
    _add_hparams(p)
    _add_common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--similarity", choices=["identity", "gaussian"])
    _add_common(p, need_out=False)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("quantiles", help="distance quantiles over each house's n nearest neighbors")
    p.add_argument("--dataset", required=True)
    p.add_argument("--descriptor", required=True)
    p.add_argument("--n", type=int, default=60)
    _add_common(p)
    p.set_defaults(func=cmd_quantiles)

    p = sub.add_parser("synth", help="write a synthetic dataset with a spatial price surface")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--features", type=int, default=4)
    p.add_argument("--spatial-weight", type=float, default=1.0)
    p.add_argument("--noise-sd", type=float, default=0.1)
    p.add_argument("--log-prices", action="store_true", help="store natural-log prices, flagged log-scaled")
    _add_common(p)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = args.func(args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (GatedInterpError, OSError, ValueError) as exc:
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
