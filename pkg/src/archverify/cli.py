"""Command-line entry point: ``archverify <command> ...``.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric/training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from . import __version__
from .config import RunConfig
from .data import SplitSet, build_pair_dataset, build_splits, load_manifest
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    ImageDecodeError,
    InsufficientDataError,
    ManifestError,
    NumericError,
    UndefinedMetricError,
    UnknownArchitectureError,
)

log = logging.getLogger("archverify")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "output_dir", None):
        cfg.output_dir = Path(args.output_dir)
    if getattr(args, "seed", None) is not None:
        cfg.protocol.seed = args.seed
    if getattr(args, "workers", None):
        cfg.protocol.workers = args.workers
    torch.set_num_threads(max(1, cfg.protocol.workers))
    return cfg


def _checkpoint(args, cfg: RunConfig) -> Path:
    ck = getattr(args, "checkpoint", None) or cfg.checkpoint
    if ck is None:
        default = cfg.output_dir / "phase2.npz"
        if not default.exists():
            raise UsageError("no checkpoint given (use --checkpoint or paths.checkpoint)")
        ck = default
    return Path(ck)


def _splits_dir(args, cfg: RunConfig) -> Path:
    return Path(getattr(args, "splits", None) or cfg.output_dir / "splits")


# ---------------------------------------------------------------------------
# commands


def cmd_make_toy(args) -> int:
    from .toy import DEFAULT_SOURCES, make_toy_dataset

    out = Path(args.out)
    make_toy_dataset(out / "images", DEFAULT_SOURCES, per_source=args.per_source, size=args.size, seed=args.seed)
    n_train, n_val, n_test = args.counts
    cfg = {
        "paths": {"manifest": "images/manifest.tsv", "output_dir": "run"},
        "split": {
            "name": "toy",
            "in_set": [s.name for s in DEFAULT_SOURCES[:4]],
            "out_of_set": [s.name for s in DEFAULT_SOURCES[4:]],
            "counts": [n_train, n_val, n_test],
            "out_test_count": n_test,
            "seed": args.seed,
        },
        "model": {"backbone": "toy-cnn", "input_side": args.size},
        "training": {"lr": 1e-3, "phase2_lr": 1e-3, "phase1_epochs": 10, "phase2_epochs": 10,
                     "early_stop_patience": 5, "phase2_patience": 5, "seed": args.seed},
        "protocol": {"n_refs": 5, "fusion": "min", "seed": args.seed},
    }
    import yaml

    (out / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False), encoding="utf-8")
    print(json.dumps({"images": str(out / "images"), "config": str(out / "config.yaml")}))
    return EXIT_OK


def cmd_prepare_data(args) -> int:
    cfg = _load_config(args)
    manifest_path = Path(args.manifest) if args.manifest else cfg.manifest
    if manifest_path is None or not manifest_path.exists():
        raise UsageError(f"manifest not found: {manifest_path}")
    if cfg.split is None:
        raise ConfigError("config has no [split] section")
    manifest = load_manifest(manifest_path)
    manifest.check_files()
    seed = cfg.protocol.seed if args.seed is not None else cfg.split.seed
    split_set = build_splits(manifest, cfg.split, seed=seed)
    out = _splits_dir(args, cfg)
    split_set.write(out)
    _write_json(out / "provenance.json", {**cfg.provenance(seed=seed), "manifest": str(manifest_path)})
    counts = {a: {s: len(split_set.get(a, s)) for s in ("train", "val", "test")} for a in split_set.config.architectures}
    print(json.dumps({"splits": str(out), "counts": counts}, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import build_model, file_sha256, load_checkpoint, save_checkpoint
    from .training import ImageCache, TrainingLog, train_phase1, train_phase2

    cfg = _load_config(args)
    splits_dir = _splits_dir(args, cfg)
    if not (splits_dir / "train.tsv").exists():
        raise UsageError(f"no splits at {splits_dir}; run prepare-data first")
    split_set = SplitSet.read(splits_dir)
    hp = cfg.training
    pairs = build_pair_dataset(split_set.split_map("train"), seed=hp.seed)
    val_pairs = build_pair_dataset(split_set.split_map("val"), seed=hp.seed + 1)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    p1, p2 = out / "phase1.npz", out / "phase2.npz"
    log_path = out / "training_log.jsonl"
    cache = ImageCache()
    prov = cfg.provenance(seed=hp.seed)

    if args.resume and p2.exists():
        print(json.dumps({"status": "complete", "checkpoint": str(p2), "checkpoint_hash": file_sha256(p2)}))
        return EXIT_OK
    if args.resume and p1.exists():
        model = load_checkpoint(p1)
        tlog = TrainingLog()
        tlog.mark("resumed", 1, checkpoint=str(p1))
    else:
        if log_path.exists():
            log_path.unlink()
        m = cfg.model
        model = build_model(m.backbone, m.input_side, m.pretrained, seed=hp.seed, normalization=m.normalization)
        model, tlog = train_phase1(model, pairs, val_pairs, hp, cfg.augmentation, cache)
        save_checkpoint(model, p1, extra={"provenance": prov, "phase": 1})
    model, tlog = train_phase2(model, pairs, val_pairs, hp, cfg.augmentation, cache, tlog)
    h = save_checkpoint(model, p2, extra={"provenance": prov, "phase": 2})
    tlog.write_jsonl(log_path)
    print(json.dumps({"status": "complete", "checkpoint": str(p2), "checkpoint_hash": h,
                      "best_epochs": {"1": tlog.best_epoch(1), "2": tlog.best_epoch(2)}}))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .model import file_sha256, load_checkpoint
    from .verification import Claim, ReferenceStore, verify_claim, verify_input_pair

    cfg = _load_config(args)
    ck = _checkpoint(args, cfg)
    model = load_checkpoint(ck)
    if args.claim:
        if args.image2 is not None:
            raise UsageError("give either a second image or --claim/--refs, not both")
        if not args.refs:
            raise UsageError("--claim needs --refs")
        store = ReferenceStore.from_directory(args.refs)
        refs = store.reference_set(args.claim, n=args.n_refs, seed=cfg.protocol.seed)
        verdict = verify_claim(model, args.image, Claim(args.claim), refs, args.fusion)
    else:
        if args.image2 is None:
            raise UsageError("two-image mode needs a second image (or use --claim/--refs)")
        verdict = verify_input_pair(model, args.image, args.image2)
    doc = {"image": str(args.image), **verdict.to_dict(),
           "provenance": cfg.provenance(checkpoint_hash=file_sha256(ck))}
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_build_centroids(args) -> int:
    from .model import file_sha256, load_checkpoint
    from .rejection import compute_centroids

    cfg = _load_config(args)
    ck = _checkpoint(args, cfg)
    split_set = SplitSet.read(_splits_dir(args, cfg))
    cs = compute_centroids(load_checkpoint(ck), split_set.split_map("val"),
                           use_mean_embedding=args.mean_embedding, checkpoint_hash=file_sha256(ck))
    out = Path(args.out or cfg.output_dir / "centroids.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    cs.save(out)
    print(json.dumps({"centroids": str(out), "architectures": cs.architectures}))
    return EXIT_OK


def cmd_classify(args) -> int:
    from .model import file_sha256, load_checkpoint
    from .rejection import CentroidSet, classify_with_rejection

    cfg = _load_config(args)
    ck = _checkpoint(args, cfg)
    h = file_sha256(ck)
    model = load_checkpoint(ck)
    cs = CentroidSet.load(args.centroids, expected_checkpoint_hash=h)
    t = cfg.protocol.rejection_threshold if args.threshold is None else args.threshold
    for image in args.images:
        r = classify_with_rejection(model, image, cs, t)
        print(json.dumps({"image": image, "outcome": r.outcome, "accepted": r.accepted,
                          "architecture": r.architecture if r.accepted else None, "best_score": r.best_score,
                          "all_scores": r.all_scores, "threshold": t,
                          "provenance": cfg.provenance(checkpoint_hash=h)}, sort_keys=True))
    return EXIT_OK


def _plot_curve(far, pd, title: str, path: Path, xlabel="false alarm rate", ylabel="detection rate") -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    ax.step(far, pd, where="post")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return str(path)


def _plot_rocs(pairs, out_dir: Path):
    from .metrics import roc_curve
    from .protocols import closed_set, open_set

    written = []
    for name, filt in (("total", None), ("closed", closed_set), ("open", open_set)):
        sub = [p for p in pairs if filt is None or filt(p)]
        try:
            far, pd, _ = roc_curve([p.m for p in sub], [p.p for p in sub])
        except UndefinedMetricError:
            continue
        written.append(_plot_curve(far, pd, f"ROC ({name})", out_dir / f"roc_{name}.png"))
    return written


def cmd_evaluate(args) -> int:
    from .data import load_manifest as _load
    from .model import file_sha256, load_checkpoint
    from .protocols import aggregate_report, run_generalization, run_one_vs_many, run_one_vs_one, write_scored_pairs
    from .rejection import CentroidSet, compute_centroids, rejection_roc

    cfg = _load_config(args)
    ck = _checkpoint(args, cfg)
    h = file_sha256(ck)
    model = load_checkpoint(ck)
    split_set = SplitSet.read(_splits_dir(args, cfg))
    seed = cfg.protocol.seed
    out = Path(args.out or cfg.output_dir / "eval" / args.protocol)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config_name": split_set.config.name, "protocol": args.protocol, "seed": seed,
            **cfg.provenance(checkpoint_hash=h, seed=seed)}

    if args.protocol == "rejection":
        if not split_set.out_of_set or not any(split_set.get(a, "test") for a in split_set.out_of_set):
            raise InsufficientDataError("rejection protocol needs out-of-set test data; the split set has none")
        if args.centroids:
            cs = CentroidSet.load(args.centroids, expected_checkpoint_hash=h)
        else:
            cs = compute_centroids(model, split_set.split_map("val"), checkpoint_hash=h)
            cs.save(out / "centroids.json")
        ins = [r for a in split_set.in_set for r in split_set.get(a, "test")]
        outs = [r for a in split_set.out_of_set for r in split_set.get(a, "test")]
        rep = rejection_roc(model, ins, outs, cs, t=args.threshold)
        rep.write_roc_csv(out / "roc_points.csv")
        if args.plot:
            _plot_curve(rep.far, rep.pd, "rejection ROC", out / "roc_rejection.png",
                        xlabel="in-set rejected", ylabel="out-of-set rejected")
        _write_json(out / "report.json", {**rep.to_dict(), "metadata": meta})
        print(json.dumps({**rep.to_dict(), "out": str(out)}, sort_keys=True))
        return EXIT_OK

    if args.protocol == "one-vs-one":
        pairs = run_one_vs_one(model, split_set, seed=seed)
    elif args.protocol == "one-vs-many":
        n = args.n_refs or cfg.protocol.n_refs
        fusion = args.fusion or cfg.protocol.fusion
        meta.update(n_refs=n, fusion=fusion)
        pairs = run_one_vs_many(model, split_set, n, fusion, seed=seed)
    else:
        if not args.unknown_manifest:
            raise UsageError("generalization protocol needs --unknown-manifest")
        unknown = list(_load(args.unknown_manifest))
        known = {a: split_set.get(a, "test") for a in split_set.in_set}
        pairs = run_generalization(model, unknown, known, seed=seed)
    report = aggregate_report(pairs, meta, pooling=args.pooling)
    report.write_json(out / "report.json")
    report.write_csv(out / "report.csv")
    write_scored_pairs(pairs, out / "scored_pairs.csv")
    if args.plot:
        _plot_rocs(pairs, out)
    summary = {k: getattr(report, k) for k in ("total_auc", "closed_set_auc", "open_set_auc",
                                                 "closed_set_accuracy", "total_pd_at_005")}
    print(json.dumps({**summary, "out": str(out)}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="archverify", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="run configuration (YAML)")
        sp.add_argument("--output-dir", help="overrides paths.output_dir")
        sp.add_argument("--seed", type=int, help="overrides protocol.seed")
        sp.add_argument("--workers", type=int, help="CPU threads")

    sp = sub.add_parser("make-toy", help="write a procedurally generated toy dataset and config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--per-source", type=int, default=150)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--counts", type=int, nargs=3, default=(100, 20, 30), metavar=("TRAIN", "VAL", "TEST"))
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_make_toy)

    sp = sub.add_parser("prepare-data", help="materialize train/val/test splits")
    common(sp)
    sp.add_argument("--manifest", help="overrides paths.manifest")
    sp.add_argument("--splits", help="output directory for split manifests")
    sp.set_defaults(func=cmd_prepare_data)

    sp = sub.add_parser("train", help="two-phase training")
    common(sp, config_required=True)
    sp.add_argument("--splits")
    sp.add_argument("--resume", action="store_true", help="reuse a finished phase-1 checkpoint")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("verify", help="input-pair or claim-based verification")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("image")
    sp.add_argument("image2", nargs="?")
    sp.add_argument("--claim", help="claimed architecture label")
    sp.add_argument("--refs", help="reference store directory")
    sp.add_argument("--n-refs", type=int, help="sample this many references (default: all)")
    sp.add_argument("--fusion", choices=("min", "mean", "majority"), default="min")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("build-centroids", help="pick one representative per in-set architecture")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--splits")
    sp.add_argument("--out")
    sp.add_argument("--mean-embedding", action="store_true", help="use the raw mean embedding instead of an image")
    sp.set_defaults(func=cmd_build_centroids)

    sp = sub.add_parser("classify", help="classification with rejection")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--centroids", required=True)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("images", nargs="+")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("evaluate", help="run a test protocol and write metrics")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--splits")
    sp.add_argument("--protocol", required=True, choices=("one-vs-one", "one-vs-many", "generalization", "rejection"))
    sp.add_argument("--n-refs", type=int)
    sp.add_argument("--fusion", choices=("min", "mean", "majority"))
    sp.add_argument("--unknown-manifest")
    sp.add_argument("--centroids")
    sp.add_argument("--threshold", type=float, help="rejection: restrict accuracy to inputs accepted at t")
    sp.add_argument("--pooling", choices=("pool", "average"), default="pool")
    sp.add_argument("--plot", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"archverify: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ContractError) as exc:
        print(f"archverify: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ManifestError, InsufficientDataError, ImageDecodeError, UnknownArchitectureError,
            CheckpointError, UndefinedMetricError, FileNotFoundError) as exc:
        print(f"archverify: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"archverify: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
