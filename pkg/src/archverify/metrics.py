"""Verification metrics on scored pairs.

ROC orientation: the detection (positive) class is "different architecture"
(``m = 1``), because scores grow with dissimilarity. A false alarm is a
same-architecture pair scored at or above the threshold.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, UndefinedMetricError


class CoarseFARWarning(UserWarning):
    """Too few negatives for the requested false-alarm resolution."""


def _labels_scores(labels, scores):
    y = np.asarray(labels).astype(int).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ContractError(f"labels and scores differ in length: {y.size} vs {s.size}")
    if y.size and not np.isin(y, (0, 1)).all():
        raise ContractError("labels must be 0 or 1")
    return y, s


def _require_both(y):
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"metric needs both classes (got {n_pos} different-, {n_neg} same-architecture pairs)")
    return n_pos, n_neg


def roc_auc(labels, scores) -> float:
    """Mann-Whitney AUC: P(score of an m=1 pair > score of an m=0 pair), ties count 1/2."""
    y, s = _labels_scores(labels, scores)
    n_pos, n_neg = _require_both(y)
    ranks = rankdata(s)  # average ranks handle ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(labels, scores):
    """Empirical step ROC. Returns (far, pd, thresholds); threshold t means "different iff score >= t".

    The first point is the +inf threshold (0, 0).
    """
    y, s = _labels_scores(labels, scores)
    n_pos, n_neg = _require_both(y)
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    # last index of each distinct score in descending order
    distinct = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.size - 1]
    tp = np.cumsum(y_sorted == 1)[distinct]
    fp = np.cumsum(y_sorted == 0)[distinct]
    far = np.r_[0.0, fp / n_neg]
    pd = np.r_[0.0, tp / n_pos]
    thr = np.r_[np.inf, s_sorted[distinct]]
    return far, pd, thr


def pd_at_far_scores(labels, scores, far: float = 0.05) -> float:
    """Detection rate at the operating point with the largest false-alarm rate not exceeding ``far``.

    No interpolation between ROC points.
    """
    y, s = _labels_scores(labels, scores)
    _, n_neg = _require_both(y)
    if n_neg * far < 1.0:
        warnings.warn(
            f"only {n_neg} same-architecture pairs: false-alarm grid is coarser than {far}",
            CoarseFARWarning,
            stacklevel=2,
        )
    fa, pd, _ = roc_curve(y, s)
    ok = fa <= far
    return float(pd[ok].max())


def accuracy_scores(labels, scores, threshold: float = 0.5) -> float:
    y, s = _labels_scores(labels, scores)
    if y.size == 0:
        raise UndefinedMetricError("accuracy of an empty set")
    pred = (s >= threshold).astype(int)
    return float((pred == y).mean())


# -- ScoredPair front-ends ---------------------------------------------------


def _select(pairs, subset_filter):
    if subset_filter is not None:
        pairs = [p for p in pairs if subset_filter(p)]
    return [p.m for p in pairs], [p.p for p in pairs]


def auc(pairs, subset_filter=None) -> float:
    return roc_auc(*_select(pairs, subset_filter))


def pd_at_far(pairs, far: float = 0.05, subset_filter=None) -> float:
    return pd_at_far_scores(*_select(pairs, subset_filter), far=far)


def accuracy(pairs, threshold: float = 0.5, subset_filter=None) -> float:
    return accuracy_scores(*_select(pairs, subset_filter), threshold=threshold)
