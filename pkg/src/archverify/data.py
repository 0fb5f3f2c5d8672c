"""Image manifests, in-set/out-of-set split materialization and pair construction."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import ConfigError, ContractError, InsufficientDataError, ManifestError

MANIFEST_FIELDS = ("path", "architecture", "source_domain", "model_id")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True, order=True)
class ManifestRecord:
    path: str
    architecture: str
    source_domain: str
    model_id: str

    def to_line(self, split: str | None = None) -> str:
        cols = [self.path, self.architecture, self.source_domain, self.model_id]
        if split is not None:
            cols.append(split)
        return "\t".join(cols)


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ManifestRecord, ...] = ()

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.path in seen:
                raise ManifestError(f"duplicate path {r.path!r}")
            seen.add(r.path)
            if not r.architecture or not r.model_id:
                raise ManifestError(f"record {r.path!r}: architecture and model_id must be non-empty")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def architectures(self) -> list[str]:
        return sorted({r.architecture for r in self.records})

    def by_architecture(self) -> dict[str, list[ManifestRecord]]:
        out: dict[str, list[ManifestRecord]] = {}
        for r in self.records:
            out.setdefault(r.architecture, []).append(r)
        return out

    def check_files(self, root=None) -> None:
        root = Path(root) if root is not None else None
        for r in self.records:
            p = Path(r.path) if root is None else root / r.path
            if not p.exists():
                raise ManifestError(f"missing image file {p}")


def parse_manifest_lines(lines: Iterable[str], source="<manifest>", extra_columns=0) -> list[tuple]:
    rows = []
    ncols = len(MANIFEST_FIELDS) + extra_columns
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != ncols:
            raise ManifestError(f"{source}: line {lineno}: expected {ncols} tab-separated fields, got {len(cols)}")
        if any(not c for c in cols[:1]) or not cols[1] or not cols[3]:
            raise ManifestError(f"{source}: line {lineno}: empty required field")
        rows.append(tuple(cols))
    return rows


def load_manifest(path) -> DatasetManifest:
    """Relative image paths are resolved against the manifest's directory."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    with open(path, encoding="utf-8") as f:
        rows = parse_manifest_lines(f, source=str(path))
    rows = [(_resolve(path.parent, r[0]),) + r[1:] for r in rows]
    seen = {}
    for i, row in enumerate(rows):
        if row[0] in seen:
            raise ManifestError(f"{path}: duplicate path {row[0]!r}")
        seen[row[0]] = i
    return DatasetManifest(tuple(ManifestRecord(*row) for row in rows))


def _resolve(base: Path, p: str) -> str:
    return p if Path(p).is_absolute() else str(base.resolve() / p)


def write_manifest(records: Iterable[ManifestRecord], path, split: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(r.to_line(split) + "\n")


# ---------------------------------------------------------------------------
# split configurations


@dataclass(frozen=True)
class SplitConfig:
    name: str
    in_set: tuple[str, ...]
    out_of_set: tuple[str, ...]
    counts: tuple[int, int, int] = (45000, 2500, 500)
    out_test_count: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "in_set", tuple(self.in_set))
        object.__setattr__(self, "out_of_set", tuple(self.out_of_set))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        overlap = set(self.in_set) & set(self.out_of_set)
        if overlap:
            raise ConfigError(f"architectures both in-set and out-of-set: {sorted(overlap)}")
        if len(self.counts) != 3 or any(c < 0 for c in self.counts):
            raise ConfigError(f"counts must be three non-negative integers, got {self.counts}")
        if self.out_test_count < 0:
            raise ConfigError("out_test_count must be non-negative")

    @property
    def architectures(self) -> tuple[str, ...]:
        return self.in_set + self.out_of_set

    def scaled(self, counts, out_test_count) -> "SplitConfig":
        return SplitConfig(self.name, self.in_set, self.out_of_set, tuple(counts), out_test_count, self.seed)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitConfig":
        allowed = {"name", "in_set", "out_of_set", "counts", "out_test_count", "seed"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown split config keys: {sorted(unknown)}")
        try:
            return cls(
                name=str(d["name"]),
                in_set=tuple(d["in_set"]),
                out_of_set=tuple(d.get("out_of_set", ())),
                counts=tuple(d.get("counts", (45000, 2500, 500))),
                out_test_count=int(d.get("out_test_count", 500)),
                seed=int(d.get("seed", 0)),
            )
        except KeyError as exc:
            raise ConfigError(f"split config missing key {exc}") from None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "in_set": list(self.in_set),
            "out_of_set": list(self.out_of_set),
            "counts": list(self.counts),
            "out_test_count": self.out_test_count,
            "seed": self.seed,
        }


def load_split_config(path) -> SplitConfig:
    with open(path, encoding="utf-8") as f:
        d = yaml.safe_load(f) or {}
    if "split" in d and isinstance(d["split"], Mapping):
        d = d["split"]
    return SplitConfig.from_dict(d)


# the three partitions of the ten face generators used in the reference experiments
SPLIT_PRESETS = {
    "config1": SplitConfig(
        "config1",
        in_set=("latent_diffusion", "taming_transformers", "stylegan2", "ddpm", "began"),
        out_of_set=("stylegan3", "stargan2", "lsgm", "progan", "biggan"),
    ),
    "config2": SplitConfig(
        "config2",
        in_set=("stylegan2", "latent_diffusion", "biggan", "progan", "lsgm"),
        out_of_set=("stylegan3", "taming_transformers", "began", "ddpm", "stargan2"),
    ),
    "config3": SplitConfig(
        "config3",
        in_set=("stylegan2", "stylegan3", "progan", "began", "biggan"),
        out_of_set=("latent_diffusion", "taming_transformers", "lsgm", "ddpm", "stargan2"),
    ),
}


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; string keys are hashed with CRC32."""
    words = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.default_rng(words)


@dataclass(frozen=True)
class SplitSet:
    """Materialized splits: per in-set architecture train/val/test, out-of-set test only."""

    config: SplitConfig
    splits: Mapping[str, Mapping[str, tuple[ManifestRecord, ...]]] = field(default_factory=dict)

    def get(self, arch: str, split: str) -> tuple[ManifestRecord, ...]:
        return tuple(self.splits.get(arch, {}).get(split, ()))

    def split_map(self, split: str, archs: Sequence[str] | None = None) -> dict[str, tuple[ManifestRecord, ...]]:
        archs = self.config.in_set if archs is None else archs
        return {a: self.get(a, split) for a in archs}

    @property
    def in_set(self):
        return self.config.in_set

    @property
    def out_of_set(self):
        return self.config.out_of_set

    def is_in_set(self, arch: str) -> bool:
        return arch in self.config.in_set

    def test_map(self) -> dict[str, tuple[ManifestRecord, ...]]:
        return {a: self.get(a, "test") for a in self.config.architectures}

    def rows(self):
        for arch in self.config.architectures:
            for split in SPLITS:
                for r in self.get(arch, split):
                    yield r, split

    def write(self, out_dir) -> list[Path]:
        """One manifest file per split with a trailing ``split`` column, plus the union."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for split in SPLITS:
            p = out_dir / f"{split}.tsv"
            with open(p, "w", encoding="utf-8", newline="\n") as f:
                for arch in self.config.architectures:
                    for r in self.get(arch, split):
                        f.write(r.to_line(split) + "\n")
            written.append(p)
        p = out_dir / "split_config.yaml"
        p.write_text(yaml.safe_dump(self.config.to_dict(), sort_keys=True), encoding="utf-8")
        written.append(p)
        return written

    @classmethod
    def read(cls, out_dir, config: SplitConfig | None = None) -> "SplitSet":
        out_dir = Path(out_dir)
        if config is None:
            config = load_split_config(out_dir / "split_config.yaml")
        splits: dict[str, dict[str, list[ManifestRecord]]] = {}
        for split in SPLITS:
            p = out_dir / f"{split}.tsv"
            if not p.exists():
                continue
            with open(p, encoding="utf-8") as f:
                for row in parse_manifest_lines(f, source=str(p), extra_columns=1):
                    rec = ManifestRecord(*row[:4])
                    splits.setdefault(rec.architecture, {}).setdefault(row[4], []).append(rec)
        frozen = {a: {s: tuple(v) for s, v in d.items()} for a, d in splits.items()}
        return cls(config, frozen)


def build_splits(manifest: DatasetManifest, config: SplitConfig, seed: int | None = None) -> SplitSet:
    """Disjoint train/val/test per in-set architecture; test-only lists for out-of-set ones.

    Each architecture is shuffled by its own generator derived from
    ``(seed, architecture)``, so results do not depend on manifest order.
    """
    seed = config.seed if seed is None else seed
    by_arch = manifest.by_architecture()
    n_train, n_val, n_test = config.counts
    shortfalls = []
    for arch in config.in_set:
        have = len(by_arch.get(arch, ()))
        if have < n_train + n_val + n_test:
            shortfalls.append(f"{arch} (need {n_train + n_val + n_test}, have {have})")
    for arch in config.out_of_set:
        have = len(by_arch.get(arch, ()))
        if have < config.out_test_count:
            shortfalls.append(f"{arch} (need {config.out_test_count}, have {have})")
    if shortfalls:
        raise InsufficientDataError("insufficient images for " + "; ".join(shortfalls))

    splits = {}
    for arch in config.in_set:
        recs = sorted(by_arch[arch])
        order = derive_rng(seed, "split", arch).permutation(len(recs))
        chosen = [recs[i] for i in order]
        splits[arch] = {
            "train": tuple(chosen[:n_train]),
            "val": tuple(chosen[n_train:n_train + n_val]),
            "test": tuple(chosen[n_train + n_val:n_train + n_val + n_test]),
        }
    for arch in config.out_of_set:
        recs = sorted(by_arch[arch])
        order = derive_rng(seed, "split", arch).permutation(len(recs))
        splits[arch] = {"test": tuple(recs[i] for i in order[:config.out_test_count])}
    return SplitSet(config, splits)


# ---------------------------------------------------------------------------
# pairs


@dataclass(frozen=True)
class PairSample:
    x: ManifestRecord
    y: ManifestRecord
    m: int  # 0 = same architecture, 1 = different

    @property
    def x_path(self) -> str:
        return self.x.path

    @property
    def y_path(self) -> str:
        return self.y.path


def build_pair_dataset(split: Mapping[str, Sequence[ManifestRecord]], seed: int) -> list[PairSample]:
    """One positive and one negative pair per image.

    The positive partner is a uniformly drawn distinct image of the same
    architecture; the negative partner comes from a uniformly drawn other
    architecture, then a uniform image within it. Each anchor image draws from
    its own generator seeded by ``(seed, anchor index)``.
    """
    archs = sorted(a for a in split if len(split[a]) > 0)
    if len(archs) < 2:
        raise ContractError("cannot build negative pairs from fewer than two architectures")
    for a in archs:
        if len(split[a]) < 2:
            raise ContractError(f"architecture {a!r} needs at least 2 images to form positive pairs")

    pairs: list[PairSample] = []
    idx = 0
    for ai, arch in enumerate(archs):
        imgs = split[arch]
        others = archs[:ai] + archs[ai + 1:]
        for i, anchor in enumerate(imgs):
            rng = derive_rng(seed, "pairs", idx)
            j = int(rng.integers(len(imgs) - 1))
            j = j + 1 if j >= i else j
            pairs.append(PairSample(anchor, imgs[j], 0))
            other = others[int(rng.integers(len(others)))]
            pool = split[other]
            pairs.append(PairSample(anchor, pool[int(rng.integers(len(pool)))], 1))
            idx += 1
    return pairs
