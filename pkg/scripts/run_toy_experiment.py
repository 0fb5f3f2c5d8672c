"""End-to-end toy experiment through the CLI: data, training, and every evaluation protocol.

Usage:
    python3 scripts/run_toy_experiment.py --out /tmp/toy_run
"""

import argparse
import json
import sys
import time
from pathlib import Path

from archverify.cli import main
from archverify.data import write_manifest
from archverify.toy import DEFAULT_SOURCES, make_unknown_model_images


def step(name, argv):
    t0 = time.perf_counter()
    code = main([str(a) for a in argv])
    print(f"[{name}] exit {code} in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    if code != 0:
        sys.exit(code)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("toy_run"))
    ap.add_argument("--per-source", type=int, default=150)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--counts", type=int, nargs=3, default=[100, 20, 30], metavar=("TRAIN", "VAL", "TEST"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-refs", type=int, default=5)
    args = ap.parse_args()

    out = args.out
    cfg = out / "config.yaml"
    step("make-toy", ["make-toy", "--out", out, "--per-source", args.per_source, "--size", args.size,
                      "--counts", *args.counts, "--seed", args.seed])
    step("prepare-data", ["prepare-data", "--config", cfg])
    step("train", ["train", "--config", cfg, "--resume"])

    # a second, unseen model instance for each in-set source drives the generalization protocol
    unknown = []
    for src in DEFAULT_SOURCES[:4]:
        unknown += make_unknown_model_images(out / "unknown", src, 20, size=args.size, seed=args.seed + 1)
    write_manifest(unknown, out / "unknown" / "manifest.tsv")

    step("one-vs-one", ["evaluate", "--config", cfg, "--protocol", "one-vs-one", "--plot"])
    for fusion in ("min", "mean", "majority"):
        step(f"one-vs-many/{fusion}", ["evaluate", "--config", cfg, "--protocol", "one-vs-many",
                                       "--n-refs", args.n_refs, "--fusion", fusion,
                                       "--out", out / "run" / "eval" / f"one-vs-many-{fusion}"])
    step("generalization", ["evaluate", "--config", cfg, "--protocol", "generalization",
                            "--unknown-manifest", out / "unknown" / "manifest.tsv"])
    step("rejection", ["evaluate", "--config", cfg, "--protocol", "rejection", "--plot"])

    summary = {}
    for report in sorted((out / "run" / "eval").glob("*/report.json")):
        doc = json.loads(report.read_text())
        keys = ("total_auc", "closed_set_auc", "open_set_auc", "closed_set_accuracy", "rejection_auc")
        summary[report.parent.name] = {k: doc[k] for k in keys if k in doc}
    print(json.dumps(summary, indent=2))
