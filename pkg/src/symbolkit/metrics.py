"""Accuracy and rank-based AUROC.

AUROC is the Mann-Whitney statistic P(pos > neg) + 0.5 P(pos = neg),
computed from midranks.  This is exactly the area under the ROC curve
but needs no threshold sweep and handles ties exactly.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def auroc(positives, negatives) -> float:
    """Probability that a positive score outranks a negative one."""
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auroc needs at least one score on each side")
    if not (np.isfinite(pos).all() and np.isfinite(neg).all()):
        raise ValueError("auroc scores must be finite")
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    # U statistic from the positive rank-sum
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def accuracy(predictions, labels) -> float:
    """Fraction of exact matches."""
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.shape != lab.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {lab.shape}")
    if pred.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return float(np.mean(pred == lab))
