"""Loss functions returning scalar tensors."""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, clip, log, log_softmax, mean

BCE_EPS = 1e-7


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences over every element, batch axis included."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return mean(d * d)


def per_sample_mse(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain-array MSE reduced over all but the leading (batch) axis."""
    if a.shape != b.shape:
        raise ShapeError(f"per_sample_mse: shape mismatch {a.shape} vs {b.shape}")
    d = (a - b).reshape(a.shape[0], -1)
    return (d * d).mean(axis=1)


def bce(prob: Tensor, target) -> Tensor:
    prob = as_tensor(prob)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=prob.dtype)
    if t.shape != prob.shape:
        raise ShapeError(f"bce: shape mismatch {prob.shape} vs {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bce: targets must be 0 or 1")
    p = clip(prob, BCE_EPS, 1.0 - BCE_EPS)
    ll = log(p) * t + log(1.0 - p) * (1.0 - t)
    return -mean(ll)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the target class; ``logits`` is (N, C)."""
    logits = as_tensor(logits)
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    labels = np.atleast_1d(np.asarray(labels))
    n, c = logits.shape
    if c < 2:
        raise ValueError("cross_entropy needs at least two classes")
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} rows but {labels.shape} labels")
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"cross_entropy: class index out of range [0, {c})")
    lp = log_softmax(logits, axis=1)
    picked = lp[np.arange(n), labels]
    return -mean(picked)
