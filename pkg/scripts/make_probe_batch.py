"""Regenerate tests/fixtures/probe_batch.npz (deterministic toy images for round-trip checks)."""

import argparse
from pathlib import Path

import numpy as np

from archverify.toy import probe_batch

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "probe_batch.npz")
    ap.add_argument("-n", type=int, default=4)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args()
    images = probe_batch(args.n, args.size, seed=0)
    np.savez_compressed(args.out, images=images)
    print(f"wrote {images.shape} to {args.out}")
