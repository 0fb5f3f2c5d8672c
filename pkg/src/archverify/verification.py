"""Input-pair and claim-based verification with reference-set score fusion."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ManifestRecord, derive_rng, parse_manifest_lines
from .errors import ContractError, UnknownArchitectureError
from .model import DECISION_THRESHOLD
from .scoring import as_scorer


class FusionStrategy(str, Enum):
    MIN = "min"
    MEAN = "mean"
    MAJORITY = "majority"


def fuse_scores(scores: Sequence[float], strategy="min") -> float:
    """Collapse per-reference scores into one statistic; below 0.5 always means "same".

    ``majority`` returns the upper median (element ``n // 2`` of the sorted
    scores). It is below 0.5 exactly when a strict majority of references
    voted "same", so an even split counts as "different", and a single
    reference returns its own score.
    """
    strategy = FusionStrategy(strategy)
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ContractError("cannot fuse an empty score list")
    if strategy is FusionStrategy.MIN:
        return float(s.min())
    if strategy is FusionStrategy.MEAN:
        # shifting by the minimum makes constant lists fuse to exactly their value
        lo = s.min()
        return float(min(s.max(), lo + (s - lo).mean()))
    return float(np.sort(s)[s.size // 2])


def vote_fraction(scores: Sequence[float]) -> float:
    """Fraction of references voting "different" (score >= 0.5)."""
    s = np.asarray(scores, dtype=np.float64)
    return float((s >= DECISION_THRESHOLD).mean())


@dataclass(frozen=True)
class Claim:
    claimed_architecture: str


@dataclass(frozen=True)
class ReferenceSet:
    architecture: str
    images: tuple

    def __post_init__(self):
        if len(self.images) < 1:
            raise ContractError(f"reference set for {self.architecture!r} is empty")
        object.__setattr__(self, "images", tuple(self.images))
        for im in self.images:
            if isinstance(im, ManifestRecord) and im.architecture != self.architecture:
                raise ContractError(f"reference {im.path} is labelled {im.architecture!r}, not {self.architecture!r}")

    def __len__(self):
        return len(self.images)


@dataclass
class Verdict:
    decision: str  # "yes" (same architecture) or "no"
    fused_score: float
    per_reference_scores: list[float]
    strategy: str = "min"
    claimed_architecture: str | None = None
    references: list[str] = field(default_factory=list)

    @property
    def same(self) -> bool:
        return self.decision == "yes"

    def to_dict(self) -> dict:
        d = {
            "decision": self.decision,
            "fused_score": self.fused_score,
            "strategy": self.strategy,
            "per_reference_scores": list(self.per_reference_scores),
        }
        if self.claimed_architecture is not None:
            d["claimed_architecture"] = self.claimed_architecture
        if self.references:
            d["references"] = list(self.references)
        if self.strategy == "majority":
            d["vote_fraction_different"] = vote_fraction(self.per_reference_scores)
        return d


def _verdict(scores, strategy, **kw) -> Verdict:
    fused = fuse_scores(scores, strategy)
    return Verdict("yes" if fused < DECISION_THRESHOLD else "no", fused, [float(s) for s in scores],
                   FusionStrategy(strategy).value, **kw)


def _ref_name(ref) -> str:
    if isinstance(ref, ManifestRecord):
        return ref.path
    if isinstance(ref, (str, os.PathLike)):
        return os.fspath(ref)
    return "<tensor>"


def verify_claim(model, x, claim: Claim, refs: ReferenceSet, strategy="min") -> Verdict:
    """Score ``x`` against every reference of the claimed architecture and fuse.

    ``model`` is a :class:`SiameseModel` or any pair scorer.
    """
    if refs.architecture != claim.claimed_architecture:
        raise UnknownArchitectureError(claim.claimed_architecture, [refs.architecture])
    scorer = as_scorer(model)
    # a decode failure already names the offending file
    scores = [float(scorer(x, ref)) for ref in refs.images]
    return _verdict(scores, strategy, claimed_architecture=claim.claimed_architecture,
                    references=[_ref_name(r) for r in refs.images])


def verify_input_pair(model, x, y) -> Verdict:
    scorer = as_scorer(model)
    return _verdict([float(scorer(x, y))], "min", references=[_ref_name(y)])


class ReferenceStore:
    """Reference images grouped by architecture.

    On disk: one sub-directory per architecture, optionally with a
    ``manifest.tsv`` at the root (same four-column format as dataset
    manifests, paths relative to the root or absolute). Without a manifest,
    every image file in a sub-directory belongs to that architecture.
    """

    IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff"}

    def __init__(self, refs: dict[str, list[ManifestRecord]]):
        self.refs = {a: list(v) for a, v in refs.items()}

    @property
    def architectures(self):
        return sorted(self.refs)

    @classmethod
    def from_directory(cls, root) -> "ReferenceStore":
        root = Path(root)
        if not root.is_dir():
            raise FileNotFoundError(f"reference directory not found: {root}")
        refs: dict[str, list[ManifestRecord]] = {}
        manifest = root / "manifest.tsv"
        if manifest.exists():
            with open(manifest, encoding="utf-8") as f:
                for row in parse_manifest_lines(f, source=str(manifest)):
                    p = Path(row[0])
                    p = p if p.is_absolute() else root / p
                    refs.setdefault(row[1], []).append(ManifestRecord(str(p), *row[1:]))
        else:
            for sub in sorted(d for d in root.iterdir() if d.is_dir()):
                files = sorted(f for f in sub.iterdir() if f.suffix.lower() in cls.IMAGE_SUFFIXES)
                if files:
                    refs[sub.name] = [ManifestRecord(str(f), sub.name, "", sub.name) for f in files]
        return cls(refs)

    def reference_set(self, architecture: str, n: int | None = None, seed: int = 0,
                      exclude: Sequence[str] = ()) -> ReferenceSet:
        """Up to ``n`` references drawn uniformly without replacement (all of them if ``n`` is None)."""
        if architecture not in self.refs:
            raise UnknownArchitectureError(architecture, self.refs)
        pool = [r for r in self.refs[architecture] if r.path not in set(exclude)]
        if n is not None and n < len(pool):
            idx = derive_rng(seed, "refs", architecture).choice(len(pool), size=n, replace=False)
            pool = [pool[i] for i in idx]
        return ReferenceSet(architecture, tuple(pool))
