"""OOD-detection and classification metrics plus baseline OOD scores.

Score polarity everywhere: higher = more OOD. ID is the positive class for
AUROC and FPR95 (an ID sample is "accepted" when its score is low).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax
from scipy.stats import rankdata

ID, OOD = "ID", "OOD"


@dataclass(frozen=True)
class ScoredSample:
    score: float
    label: str  # ID | OOD

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite score {self.score}")
        if self.label not in (ID, OOD):
            raise ValueError(f"label must be ID or OOD, got {self.label!r}")


def _split(samples=None, id_scores=None, ood_scores=None) -> tuple[np.ndarray, np.ndarray]:
    """Accept either a list of ScoredSample or two score arrays."""
    if samples is not None:
        id_s = np.array([s.score for s in samples if s.label == ID], dtype=np.float64)
        ood_s = np.array([s.score for s in samples if s.label == OOD], dtype=np.float64)
    else:
        id_s = np.asarray(id_scores, dtype=np.float64).ravel()
        ood_s = np.asarray(ood_scores, dtype=np.float64).ravel()
    if not (np.all(np.isfinite(id_s)) and np.all(np.isfinite(ood_s))):
        raise ValueError("scores must be finite")
    return id_s, ood_s


def samples_from(id_scores, ood_scores) -> list[ScoredSample]:
    return [ScoredSample(float(s), ID) for s in id_scores] + [ScoredSample(float(s), OOD) for s in ood_scores]


def auroc(samples: Sequence[ScoredSample] | None = None, *, id_scores=None, ood_scores=None) -> float:
    """P(score_ID < score_OOD) + 0.5 * P(tie), via the rank-sum statistic."""
    id_s, ood_s = _split(samples, id_scores, ood_scores)
    n_i, n_o = len(id_s), len(ood_s)
    if n_i == 0 or n_o == 0:
        raise ValueError("auroc needs at least one ID and one OOD sample")
    ranks = rankdata(np.concatenate([id_s, ood_s]))  # average ranks for ties
    u_ood = ranks[n_i:].sum() - n_o * (n_o + 1) / 2
    return float(u_ood / (n_i * n_o))


def aupr(samples: Sequence[ScoredSample] | None = None, positive: str = ID, *, id_scores=None,
         ood_scores=None) -> float:
    """Step-wise area under the precision-recall curve, sum of (R_k - R_{k-1}) * P_k.

    Thresholds sweep every distinct score; tied scores enter together. ID
    positives are the low-score side, OOD positives the high-score side.
    """
    id_s, ood_s = _split(samples, id_scores, ood_scores)
    if positive not in (ID, OOD):
        raise ValueError(f"positive must be ID or OOD, got {positive!r}")
    if positive == ID:
        pos, neg = id_s, ood_s
    else:  # flip so the positive class is always the low side
        pos, neg = -ood_s, -id_s
    if len(pos) == 0:
        raise ValueError("aupr needs at least one positive sample")
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    order = np.argsort(scores, kind="mergesort")
    scores, is_pos = scores[order], is_pos[order]
    tp = np.cumsum(is_pos)
    seen = np.arange(1, len(scores) + 1)
    # keep the last index of each run of equal scores
    last = np.r_[scores[1:] != scores[:-1], True]
    tp, seen = tp[last], seen[last]
    recall = tp / len(pos)
    precision = tp / seen
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def nearest_rank(values, q: float) -> float:
    """Smallest value v with fraction(values <= v) >= q (no interpolation)."""
    s = np.sort(np.asarray(values, dtype=np.float64))
    if len(s) == 0:
        raise ValueError("nearest_rank of an empty set")
    k = math.ceil(round(q * len(s), 9))
    return float(s[min(max(k, 1), len(s)) - 1])


def fpr_at_tpr(samples: Sequence[ScoredSample] | None = None, tpr_target: float = 0.95, *, id_scores=None,
               ood_scores=None, min_id: int = 20) -> float:
    id_s, ood_s = _split(samples, id_scores, ood_scores)
    if len(id_s) < min_id:
        raise ValueError(f"fpr_at_tpr needs at least {min_id} ID samples, got {len(id_s)}")
    if len(ood_s) == 0:
        raise ValueError("fpr_at_tpr needs at least one OOD sample")
    if not 0 < tpr_target <= 1:
        raise ValueError(f"tpr_target must be in (0, 1], got {tpr_target}")
    thr = nearest_rank(id_s, tpr_target)
    return float(np.mean(ood_s <= thr))


@dataclass
class ConfusionResult:
    classes: list[str]
    matrix: np.ndarray  # rows = truth, columns = predicted
    per_class: dict[str, float]
    average: float  # unweighted mean of per-class accuracies

    def to_dict(self) -> dict:
        return {"classes": self.classes, "matrix": self.matrix.tolist(), "per_class": self.per_class,
                "average": self.average}


def confusion_matrix(pred: Sequence[str], truth: Sequence[str], classes: Sequence[str]) -> ConfusionResult:
    pred, truth, classes = list(pred), list(truth), list(classes)
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} predictions, {len(truth)} labels")
    index = {c: i for i, c in enumerate(classes)}
    for lbl in pred + truth:
        if lbl not in index:
            raise ValueError(f"unknown label {lbl!r}; expected one of {classes}")
    m = np.zeros((len(classes), len(classes)), dtype=np.int64)
    np.add.at(m, ([index[t] for t in truth], [index[p] for p in pred]), 1)
    per_class = {}
    for c, i in index.items():
        n = m[i].sum()
        per_class[c] = float(m[i, i] / n) if n else float("nan")
    present = [v for v in per_class.values() if not math.isnan(v)]
    return ConfusionResult(classes, m, per_class, float(np.mean(present)) if present else float("nan"))


@dataclass
class EvalReport:
    auroc: float
    aupr_in: float
    aupr_out: float
    fpr95: float
    n_id: int
    n_ood: int
    test_time: float = 0.0

    def __post_init__(self):
        for k in ("auroc", "aupr_in", "aupr_out", "fpr95"):
            v = getattr(self, k)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{k} = {v} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def evaluate(id_scores, ood_scores, test_time: float = 0.0) -> EvalReport:
    id_s, ood_s = _split(None, id_scores, ood_scores)
    return EvalReport(
        auroc=auroc(id_scores=id_s, ood_scores=ood_s),
        aupr_in=aupr(positive=ID, id_scores=id_s, ood_scores=ood_s),
        aupr_out=aupr(positive=OOD, id_scores=id_s, ood_scores=ood_s),
        fpr95=fpr_at_tpr(id_scores=id_s, ood_scores=ood_s),
        n_id=len(id_s),
        n_ood=len(ood_s),
        test_time=test_time,
    )


# -- baselines -----------------------------------------------------------------
BASELINES = ("msp", "maxlogit", "energy", "kl", "mahalanobis", "knn")


def _l2n(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(n > 0, n, 1.0)


@dataclass
class MahalanobisFit:
    means: np.ndarray  # (C, D)
    precision: np.ndarray  # (D, D)


def fit_mahalanobis(features: np.ndarray, labels: Sequence, ridge: float = 1e-6) -> MahalanobisFit:
    """Class means plus a shared (tied) covariance, ridge-regularized."""
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    means = np.stack([x[labels == c].mean(0) for c in classes])
    centered = x - means[np.searchsorted(classes, labels)]
    cov = centered.T @ centered / len(x)
    cov = cov + ridge * np.eye(cov.shape[0])
    return MahalanobisFit(means, np.linalg.inv(cov))


def smoothed_templates(n_classes: int, eps: float = 0.1) -> np.ndarray:
    t = np.full((n_classes, n_classes), eps / n_classes)
    t[np.diag_indices(n_classes)] += 1 - eps
    return t


def baseline_scores(method: str, logits=None, features=None, *, temperature: float = 1.0, templates=None,
                    fit: MahalanobisFit | None = None, bank=None, k: int = 5) -> np.ndarray:
    """Per-sample OOD score, higher = more OOD, for one of :data:`BASELINES`."""
    method = method.lower()
    if method in ("msp", "maxlogit", "energy", "kl"):
        if logits is None:
            raise ValueError(f"{method} needs logits")
        z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
        if method == "msp":
            return 1.0 - softmax(z, axis=1).max(axis=1)
        if method == "maxlogit":
            return -z.max(axis=1)
        if method == "energy":
            return -temperature * logsumexp(z / temperature, axis=1)
        p = softmax(z, axis=1)
        t = smoothed_templates(z.shape[1]) if templates is None else np.asarray(templates, dtype=np.float64)
        if t.shape[1] != z.shape[1]:
            raise ValueError(f"templates have {t.shape[1]} classes, logits {z.shape[1]}")
        # KL(p || t_c) for every template; the closest template decides
        logp = np.log(np.clip(p, 1e-300, None))
        kl = (p[:, None, :] * (logp[:, None, :] - np.log(t)[None])).sum(-1)
        return kl.min(axis=1)
    if method in ("mahalanobis", "knn"):
        if features is None:
            raise ValueError(f"{method} needs features")
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if method == "mahalanobis":
            if fit is None:
                raise ValueError("mahalanobis needs a fit (class means + shared covariance)")
            d = x[:, None, :] - fit.means[None]
            return np.einsum("ncd,de,nce->nc", d, fit.precision, d).min(axis=1)
        if bank is None:
            raise ValueError("knn needs an ID feature bank")
        b = _l2n(np.atleast_2d(np.asarray(bank, dtype=np.float64)))
        if not 1 <= k <= len(b):
            raise ValueError(f"k={k} invalid for a bank of {len(b)}")
        q = _l2n(x)
        d2 = np.maximum((q**2).sum(1)[:, None] + (b**2).sum(1)[None] - 2 * q @ b.T, 0.0)
        return np.sqrt(np.partition(d2, k - 1, axis=1)[:, k - 1])
    raise ValueError(f"unknown baseline {method!r}; expected one of {BASELINES}")
