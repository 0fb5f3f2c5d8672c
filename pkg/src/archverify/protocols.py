"""Test protocols (one-vs-one, one-vs-many, generalization) and the metrics report."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import metrics
from .data import ManifestRecord, SplitSet, derive_rng
from .errors import InsufficientDataError, UndefinedMetricError, UnknownArchitectureError
from .scoring import as_scorer
from .verification import fuse_scores


@dataclass(frozen=True)
class ScoredPair:
    x_arch: str
    y_arch: str
    x_in_set: bool
    y_in_set: bool
    m: int
    p: float
    x_path: str = ""
    y_path: str = ""
    n_refs: int = 1

    def __post_init__(self):
        if self.m != int(self.x_arch != self.y_arch):
            raise ValueError(f"label {self.m} inconsistent with architectures {self.x_arch!r}/{self.y_arch!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"score {self.p} outside [0, 1]")


def _draw_refs(seed, image_index, arch, candidates, n):
    """Shared by one-vs-one and one-vs-many so a single reference is the same draw in both."""
    order = derive_rng(seed, "protocol", image_index, arch).permutation(len(candidates))
    return [candidates[i] for i in order[:n]]


def _test_images(split_set: SplitSet):
    test = split_set.test_map()
    missing = [a for a, recs in test.items() if not recs]
    if missing:
        raise InsufficientDataError(f"missing test split for architecture(s): {', '.join(missing)}")
    images = [r for a in split_set.config.architectures for r in test[a]]
    return test, images


def run_one_vs_many(model, split_set: SplitSet, n_refs: int, strategy="min", seed: int = 0) -> list[ScoredPair]:
    """Each test image against ``n_refs`` references of every architecture, fused per claim."""
    scorer = as_scorer(model)
    test, images = _test_images(split_set)
    for a, recs in test.items():
        # references exclude the query itself when it belongs to the claim
        if len(recs) - 1 < n_refs:
            raise InsufficientDataError(
                f"claim {a!r}: need {n_refs} references besides the query, test split has {len(recs)} images"
            )
    out = []
    for k, x in enumerate(images):
        for a in split_set.config.architectures:
            cands = [r for r in test[a] if r.path != x.path]
            refs = _draw_refs(seed, k, a, cands, n_refs)
            scores = [float(scorer(x, y)) for y in refs]
            p = fuse_scores(scores, strategy)
            out.append(ScoredPair(
                x.architecture, a, split_set.is_in_set(x.architecture), split_set.is_in_set(a),
                int(x.architecture != a), p, x.path, refs[0].path if n_refs == 1 else "", n_refs,
            ))
    return out


def run_one_vs_one(model, split_set: SplitSet, seed: int = 0) -> list[ScoredPair]:
    """Each test image paired with one random test image of every architecture."""
    return run_one_vs_many(model, split_set, 1, "min", seed)


def run_generalization(model, unknown_images: Sequence[ManifestRecord], known: Mapping[str, Sequence[ManifestRecord]],
                       seed: int = 0) -> list[ScoredPair]:
    """Images from unseen models of known architectures vs images from the known models.

    Every unknown image yields one positive (same architecture, known model)
    and one negative (another in-set architecture). ``known`` maps each in-set
    architecture to its known-model images.
    """
    scorer = as_scorer(model)
    archs = sorted(a for a, v in known.items() if len(v))
    out = []
    for k, u in enumerate(unknown_images):
        if u.architecture not in archs:
            raise UnknownArchitectureError(u.architecture, archs)
        others = [a for a in archs if a != u.architecture]
        if not others:
            raise InsufficientDataError("generalization negatives need at least two known architectures")
        rng = derive_rng(seed, "generalization", k)
        pos_pool = known[u.architecture]
        y_pos = pos_pool[int(rng.integers(len(pos_pool)))]
        neg_arch = others[int(rng.integers(len(others)))]
        y_neg = known[neg_arch][int(rng.integers(len(known[neg_arch])))]
        for y, m in ((y_pos, 0), (y_neg, 1)):
            out.append(ScoredPair(u.architecture, y.architecture, True, True, m, float(scorer(u, y)), u.path, y.path))
    return out


# ---------------------------------------------------------------------------
# report


def closed_set(p: ScoredPair) -> bool:
    return p.x_in_set and p.y_in_set


def open_set(p: ScoredPair) -> bool:
    return not p.x_in_set and not p.y_in_set


def _safe(fn, *args, **kwargs):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", metrics.CoarseFARWarning)
            return fn(*args, **kwargs)
    except UndefinedMetricError:
        return None


@dataclass
class MetricsReport:
    total_auc: float | None
    total_pd_at_005: float | None
    closed_set_auc: float | None
    open_set_auc: float | None
    closed_set_accuracy: float | None
    total_accuracy: float | None
    per_architecture: dict[str, dict] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def rows(self):
        for key in ("total_auc", "total_pd_at_005", "closed_set_auc", "open_set_auc",
                    "closed_set_accuracy", "total_accuracy"):
            yield {"scope": "aggregate", "architecture": "", "metric": key, "value": getattr(self, key)}
        for arch, d in sorted(self.per_architecture.items()):
            for key in ("auc", "pd_at_005"):
                yield {"scope": "per_architecture", "architecture": arch, "metric": key, "value": d[key]}
        for key, n in sorted(self.counts.items()):
            yield {"scope": "count", "architecture": "", "metric": key, "value": n}

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=["scope", "architecture", "metric", "value", *sorted(self.metadata)])
            w.writeheader()
            for row in self.rows():
                w.writerow({**row, **{k: self.metadata[k] for k in self.metadata}})


def _per_arch(pairs, arch, far, pooling):
    mine = [p for p in pairs if p.y_arch == arch]
    if pooling == "pool":
        return _safe(metrics.auc, mine), _safe(metrics.pd_at_far, mine, far)
    # "average": one same-vs-other AUC per other architecture, then the mean
    aucs, pds = [], []
    for other in sorted({p.x_arch for p in mine} - {arch}):
        sub = [p for p in mine if p.x_arch in (arch, other)]
        a, d = _safe(metrics.auc, sub), _safe(metrics.pd_at_far, sub, far)
        if a is not None:
            aucs.append(a)
            pds.append(d)
    if not aucs:
        return None, None
    return float(np.mean(aucs)), float(np.mean(pds))


def aggregate_report(pairs: Sequence[ScoredPair], metadata: Mapping | None = None, far: float = 0.05,
                     pooling: str = "pool") -> MetricsReport:
    """Total / closed-set (in vs in) / open-set (out vs out) metrics plus per-architecture rows.

    Per-architecture rows use pairs whose second image (or claim) is that
    architecture; ``pooling="average"`` averages per-opponent AUCs instead.
    """
    if pooling not in ("pool", "average"):
        raise ValueError(f"pooling must be 'pool' or 'average', got {pooling!r}")
    pairs = list(pairs)
    counts = {
        "all": len(pairs),
        "in_in": sum(p.x_in_set and p.y_in_set for p in pairs),
        "in_out": sum(p.x_in_set and not p.y_in_set for p in pairs),
        "out_in": sum(not p.x_in_set and p.y_in_set for p in pairs),
        "out_out": sum(not p.x_in_set and not p.y_in_set for p in pairs),
        "positive": sum(p.m == 0 for p in pairs),
    }
    per_arch = {}
    for arch in sorted({p.y_arch for p in pairs}):
        a, d = _per_arch(pairs, arch, far, pooling)
        in_set = next(p.y_in_set for p in pairs if p.y_arch == arch)
        per_arch[arch] = {"auc": a, "pd_at_005": d, "in_set": in_set}
    return MetricsReport(
        total_auc=_safe(metrics.auc, pairs),
        total_pd_at_005=_safe(metrics.pd_at_far, pairs, far),
        closed_set_auc=_safe(metrics.auc, pairs, closed_set),
        open_set_auc=_safe(metrics.auc, pairs, open_set),
        closed_set_accuracy=_safe(metrics.accuracy, pairs, 0.5, closed_set),
        total_accuracy=_safe(metrics.accuracy, pairs),
        per_architecture=per_arch,
        counts=counts,
        metadata={**dict(metadata or {}), "pooling": pooling},
    )


def write_scored_pairs(pairs: Sequence[ScoredPair], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        names = list(ScoredPair.__dataclass_fields__)
        w = csv.DictWriter(f, fieldnames=names)
        w.writeheader()
        for p in pairs:
            w.writerow(asdict(p))
