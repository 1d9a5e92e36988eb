"""Brute-force reference implementations shared by the unit and acceptance tests.

These are deliberately naive (pair counting, threshold enumeration, explicit
loops) so that they are easy to audit against the textbook definitions.
"""

import numpy as np


def auroc_pairs(id_s, ood_s) -> float:
    """Fraction of (ID, OOD) pairs ranked correctly; ties count one half."""
    total = 0.0
    for a in id_s:
        for b in ood_s:
            if a < b:
                total += 1.0
            elif a == b:
                total += 0.5
    return total / (len(id_s) * len(ood_s))


def aupr_enumerate(pos, neg) -> float:
    """Positives sit on the low-score side; sweep every distinct threshold."""
    pos, neg = list(pos), list(neg)
    area, prev_recall = 0.0, 0.0
    for t in sorted(set(pos) | set(neg)):
        tp = sum(1 for s in pos if s <= t)
        fp = sum(1 for s in neg if s <= t)
        recall = tp / len(pos)
        precision = tp / (tp + fp)
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def fpr_at_tpr_enumerate(id_s, ood_s, tpr=0.95) -> float:
    """Smallest threshold whose ID acceptance reaches ``tpr``; OOD acceptance there."""
    for t in sorted(id_s):
        accepted = sum(1 for s in id_s if s <= t)
        if accepted >= tpr * len(id_s) - 1e-9:
            return sum(1 for s in ood_s if s <= t) / len(ood_s)
    raise AssertionError("unreachable")


def confusion_loops(pred, truth, classes):
    m = [[0] * len(classes) for _ in classes]
    for i, t in enumerate(classes):
        for j, p in enumerate(classes):
            m[i][j] = sum(1 for a, b in zip(truth, pred) if a == t and b == p)
    per = [m[i][i] / sum(m[i]) for i in range(len(classes)) if sum(m[i])]
    return np.array(m), sum(per) / len(per)


def random_scores(rng, n_max=100):
    """Random ID/OOD score sets with a good chance of exact ties."""
    n_id = int(rng.integers(20, n_max // 2 + 1))
    n_ood = int(rng.integers(1, n_max - n_id + 1))
    if rng.random() < 0.5:
        id_s = rng.integers(0, 12, n_id).astype(float)
        ood_s = rng.integers(3, 15, n_ood).astype(float)
    else:
        id_s = rng.normal(0, 1, n_id)
        ood_s = rng.normal(rng.uniform(0, 2), 1, n_ood)
    return id_s, ood_s


def nearest_rank_naive(values, q) -> float:
    s = sorted(values)
    for v in s:
        if sum(1 for x in s if x <= v) >= q * len(s) - 1e-9:
            return v
    return s[-1]


__all__ = [name for name in dir() if not name.startswith("_") and name != "np"]
