"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (scalar loops, exhaustive sweeps) so it
shares no code path with the package.
"""

import math

import numpy as np


def contrastive_scalar(e1, e2, m, h):
    d = math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(e1, e2)))
    return (1 - m) * d * d + m * max(0.0, h - d) ** 2


def mann_whitney_brute(labels, scores):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def pd_at_far_sweep(labels, scores, far=0.05):
    """Try every candidate threshold (each score plus +inf); keep the best pd with FAR <= far."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    n_pos = (labels == 1).sum()
    n_neg = (labels == 0).sum()
    best = 0.0
    for t in list(scores) + [math.inf]:
        fa = ((scores >= t) & (labels == 0)).sum() / n_neg
        pd = ((scores >= t) & (labels == 1)).sum() / n_pos
        if fa <= far:
            best = max(best, pd)
    return float(best)


def central_difference(f, x, step=1e-4):
    """Gradient of scalar f at x (float64 array) by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        g.flat[i] = (f(xp) - f(xm)) / (2 * step)
    return g
