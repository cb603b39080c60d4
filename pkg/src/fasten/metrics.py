"""Evaluation: accuracy, label-recovery quality, noisy-label detection, CIs."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from . import nn

Z95 = 1.959963984540054
CI_FORMULA = "normal: mean +/- 1.959964 * sd(ddof=1) / sqrt(n)"


def test_accuracy(params: nn.ModelParams, samples, head: str = "clean") -> float:
    """Fraction of clean-head arg-max predictions equal to the true label."""
    if len(samples) == 0:
        raise ValueError("cannot score an empty sample set")
    pred = nn.predict_proba(params, samples.x, head).argmax(axis=1)
    return float(np.mean(pred == samples.y_true))


test_accuracy.__test__ = False  # not a pytest test despite the name


@dataclass
class RecoveryReport:
    overall_accuracy: float
    overall_nll: float
    incorrect_accuracy: float | None  # None when no sample was mislabeled
    incorrect_nll: float | None
    n_samples: int
    n_incorrect: int

    def to_dict(self) -> dict:
        return asdict(self)


def recovery_report(params: nn.ModelParams, noisy_train, chunk_size: int | None = None) -> RecoveryReport:
    """Clean-head accuracy and mean NLL against ``y_true``, overall and on mislabeled samples.

    ``chunk_size`` streams the evaluation; counts are integers and NLL sums use
    ``math.fsum`` so the result does not depend on chunking.
    """
    n = len(noisy_train)
    if n == 0:
        raise ValueError("empty sample set")
    step = n if chunk_size is None else chunk_size
    hits = hits_bad = 0
    nll_terms, nll_bad_terms = [], []
    for start in range(0, n, step):
        sl = slice(start, start + step)
        p = nn.predict_proba(params, noisy_train.x[sl])
        y = noisy_train.y_true[sl]
        bad = noisy_train.y_star[sl] != y
        ok = p.argmax(axis=1) == y
        nll = -np.log(np.maximum(p[np.arange(len(y)), y], nn.PROB_FLOOR))
        hits += int(ok.sum())
        hits_bad += int(ok[bad].sum())
        nll_terms.extend(nll.tolist())
        nll_bad_terms.extend(nll[bad].tolist())
    n_bad = len(nll_bad_terms)
    return RecoveryReport(
        overall_accuracy=hits / n,
        overall_nll=math.fsum(nll_terms) / n,
        incorrect_accuracy=hits_bad / n_bad if n_bad else None,
        incorrect_nll=math.fsum(nll_bad_terms) / n_bad if n_bad else None,
        n_samples=n, n_incorrect=n_bad)


def auroc(scores, positives) -> float:
    """Mann-Whitney AUROC with average ranks for ties: P(s+ > s-) + P(tie)/2."""
    scores = np.asarray(scores, dtype=float)
    pos = np.asarray(positives, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores)
    # rank sums of tie-averaged ranks are multiples of 0.5, so this is exact
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def pr_curve(scores, positives):
    """Precision/recall at every distinct score threshold, highest threshold first."""
    scores = np.asarray(scores, dtype=float)
    pos = np.asarray(positives, dtype=bool)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], pos[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]  # end of each tie group
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    n_pos = int(pos.sum())
    precision = tp / (tp + fp)
    recall = tp / n_pos
    fpr = fp / max(len(s) - n_pos, 1)
    return s[last], precision, recall, fpr


def auprc(scores, positives) -> float:
    """Step-wise area: sum over thresholds of (recall gain) * precision."""
    pos = np.asarray(positives, dtype=bool)
    if not pos.any():
        raise ValueError("AUPRC needs at least one positive")
    _, precision, recall, _ = pr_curve(scores, pos)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


@dataclass
class DetectionReport:
    auroc: float
    auprc: float
    prevalence: float
    head: str

    def to_dict(self) -> dict:
        return asdict(self)


def detection_scores(params: nn.ModelParams, noisy_train, head: str = "clean") -> np.ndarray:
    """``1 - p(y_star | x)``: high when the model doubts the original label."""
    p = nn.predict_proba(params, noisy_train.x, head)
    return 1.0 - p[np.arange(len(noisy_train)), noisy_train.y_star]


def detection_report(params: nn.ModelParams, noisy_train, head: str = "clean") -> DetectionReport:
    positives = noisy_train.y_star != noisy_train.y_true
    if positives.all() or not positives.any():
        raise ValueError("detection needs both mislabeled and correctly labeled samples")
    scores = detection_scores(params, noisy_train, head)
    return DetectionReport(auroc(scores, positives), auprc(scores, positives),
                           float(positives.mean()), head)


def detection_curve_csv(scores, positives) -> str:
    thr, precision, recall, fpr = pr_curve(scores, positives)
    lines = ["threshold,tpr,fpr,precision,recall"]
    for t, p, r, f in zip(thr, precision, recall, fpr):
        lines.append(",".join(repr(float(v)) for v in (t, r, f, p, r)))
    return "\n".join(lines) + "\n"


def confidence_interval(values) -> tuple[float, float]:
    """Mean and 95% half-width under the normal approximation."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two values for a confidence interval")
    return float(v.mean()), float(Z95 * v.std(ddof=1) / math.sqrt(v.size))
