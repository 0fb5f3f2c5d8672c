"""Closed-set classification with a rejection option, built on the pair verifier.

Each in-set architecture gets one representative (the validation image whose
normalized embedding is nearest the class mean). An input is scored against
every representative; the lowest score names the class, and the answer is
accepted only when that score is below the threshold ``t``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ContractError, InsufficientDataError, UndefinedMetricError
from .metrics import roc_auc, roc_curve
from .scoring import ModelScorer, as_scorer


@dataclass(frozen=True)
class Centroid:
    architecture: str
    path: str | None  # None when the raw mean embedding stands in for an image
    embedding: np.ndarray  # raw (pre-normalization) embedding fed to the decision head


@dataclass
class CentroidSet:
    entries: dict[str, Centroid]
    checkpoint_hash: str = ""

    def __len__(self):
        return len(self.entries)

    @property
    def architectures(self):
        return sorted(self.entries)

    def save(self, path) -> None:
        doc = {
            "checkpoint_hash": self.checkpoint_hash,
            "entries": {
                a: {"path": c.path, "embedding": [float(v) for v in np.asarray(c.embedding, dtype=np.float64)]}
                for a, c in sorted(self.entries.items())
            },
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, expected_checkpoint_hash: str | None = None) -> "CentroidSet":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        found = doc.get("checkpoint_hash", "")
        if expected_checkpoint_hash is not None and found != expected_checkpoint_hash:
            raise ConfigError(
                f"centroids in {path} were computed with checkpoint {found[:12] or '<none>'}, "
                f"not {expected_checkpoint_hash[:12]}"
            )
        entries = {
            a: Centroid(a, e["path"], np.asarray(e["embedding"], dtype=np.float32))
            for a, e in doc["entries"].items()
        }
        return cls(entries, found)


@dataclass
class ClassificationResult:
    accepted: bool
    architecture: str  # argmin label; meaningful as a prediction only when accepted
    best_score: float
    all_scores: dict[str, float] = field(default_factory=dict)

    @property
    def outcome(self) -> str:
        return f"accepted({self.architecture})" if self.accepted else "rejected"


def nearest_to_mean(vectors: np.ndarray) -> int:
    """Index of the row closest (Euclidean) to the row mean; first index wins ties."""
    v = np.asarray(vectors, dtype=np.float64)
    d = np.linalg.norm(v - v.mean(axis=0), axis=1)
    return int(np.argmin(d))


def compute_centroids(model, validation_splits: Mapping[str, Sequence], use_mean_embedding: bool = False,
                      checkpoint_hash: str = "", embed_fn: Callable | None = None,
                      normalize: bool | None = None) -> CentroidSet:
    """One representative per architecture from its validation images.

    The mean is taken over normalized embeddings (L2, unless ``normalize`` is
    False or the model uses pass-through normalization). ``embed_fn(record)``
    replaces the model as the source of raw embeddings. With
    ``use_mean_embedding`` the mean itself stands in for the representative.
    """
    if embed_fn is None:
        embed_fn = ModelScorer(model).embedding
        if normalize is None:
            normalize = model.normalization == "l2"
    if normalize is None:
        normalize = True
    entries = {}
    for arch in sorted(validation_splits):
        recs = list(validation_splits[arch])
        if not recs:
            raise InsufficientDataError(f"empty validation split for architecture {arch!r}")
        raw = np.stack([np.asarray(embed_fn(r), dtype=np.float32) for r in recs])
        vecs = raw.astype(np.float64)
        if normalize:
            vecs = vecs / np.maximum(np.linalg.norm(vecs, axis=1, keepdims=True), 1e-12)
        if use_mean_embedding:
            entries[arch] = Centroid(arch, None, vecs.mean(axis=0).astype(np.float32))
        else:
            i = nearest_to_mean(vecs)
            entries[arch] = Centroid(arch, getattr(recs[i], "path", str(recs[i])), raw[i])
    return CentroidSet(entries, checkpoint_hash)


def decide_with_rejection(scores: Mapping[str, float], t: float) -> ClassificationResult:
    if not 0.0 <= t <= 1.0:
        raise ContractError(f"threshold must lie in [0, 1], got {t}")
    if not scores:
        raise ConfigError("no centroid scores to classify against")
    # ties go to the lexicographically smallest label
    label, best = min(scores.items(), key=lambda kv: (kv[1], kv[0]))
    return ClassificationResult(best < t, label, float(best), dict(scores))


def centroid_scores(scorer, x, centroids: CentroidSet) -> dict[str, float]:
    """Score of ``x`` against every representative."""
    if isinstance(scorer, ModelScorer):
        ex = scorer.embedding(x)
        return {a: scorer.score_embeddings(ex, c.embedding) for a, c in centroids.entries.items()}
    return {a: float(scorer(x, c)) for a, c in centroids.entries.items()}


def classify_with_rejection(model, x, centroids: CentroidSet, t: float,
                            in_set: Sequence[str] | None = None) -> ClassificationResult:
    if in_set is not None:
        missing = sorted(set(in_set) - set(centroids.entries))
        if missing:
            raise ConfigError(f"no centroid for architecture(s): {', '.join(missing)}")
    return decide_with_rejection(centroid_scores(as_scorer(model), x, centroids), t)


@dataclass
class RejectionReport:
    auc: float
    far: np.ndarray  # fraction of in-set inputs rejected
    pd: np.ndarray  # fraction of out-of-set inputs rejected
    thresholds: np.ndarray
    closed_set_accuracy: float
    best_scores_in: np.ndarray
    best_scores_out: np.ndarray

    def to_dict(self) -> dict:
        return {
            "rejection_auc": self.auc,
            "closed_set_accuracy": self.closed_set_accuracy,
            "n_in_set": int(self.best_scores_in.size),
            "n_out_of_set": int(self.best_scores_out.size),
        }

    def write_roc_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("threshold,false_reject_rate_in_set,reject_rate_out_of_set\n")
            for t, a, b in zip(self.thresholds, self.far, self.pd):
                f.write(f"{float(t)!r},{float(a)!r},{float(b)!r}\n")


def rejection_roc_from_results(in_results: Sequence[ClassificationResult], in_labels: Sequence[str],
                               out_results: Sequence[ClassificationResult],
                               t: float | None = None) -> RejectionReport:
    """Out-of-set inputs are the positive ("reject") class; ``best_score`` is the statistic.

    Closed-set accuracy is the argmin accuracy over in-set inputs, restricted to
    those accepted at ``t`` when a threshold is given.
    """
    if not in_results or not out_results:
        raise UndefinedMetricError("rejection ROC needs both in-set and out-of-set test inputs")
    s_in = np.array([r.best_score for r in in_results])
    s_out = np.array([r.best_score for r in out_results])
    labels = np.r_[np.zeros(s_in.size, int), np.ones(s_out.size, int)]
    scores = np.r_[s_in, s_out]
    far, pd, thr = roc_curve(labels, scores)
    correct = np.array([r.architecture == y for r, y in zip(in_results, in_labels)])
    if t is not None:
        keep = s_in < t
        acc = float(correct[keep].mean()) if keep.any() else float("nan")
    else:
        acc = float(correct.mean())
    return RejectionReport(roc_auc(labels, scores), far, pd, thr, acc, s_in, s_out)


def rejection_roc(model, in_set_test: Sequence, out_of_set_test: Sequence, centroids: CentroidSet,
                  t: float | None = None) -> RejectionReport:
    """Rejection ROC/AUC over the threshold plus closed-set accuracy.

    Test items are manifest records carrying their architecture label.
    """
    if not in_set_test or not out_of_set_test:
        raise InsufficientDataError("rejection evaluation needs non-empty in-set and out-of-set test sets")
    scorer = as_scorer(model)
    res_in = [decide_with_rejection(centroid_scores(scorer, x, centroids), 1.0) for x in in_set_test]
    res_out = [decide_with_rejection(centroid_scores(scorer, x, centroids), 1.0) for x in out_of_set_test]
    return rejection_roc_from_results(res_in, [x.architecture for x in in_set_test], res_out, t)
