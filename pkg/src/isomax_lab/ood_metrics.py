"""OOD detection metrics: ROC curve, AUROC, TNR at 95% TPR and detection accuracy.

In-distribution samples are the positive class and a sample is accepted as
in-distribution when ``score > delta``. Thresholds are the distinct observed
scores plus ``-inf`` / ``+inf``; no interpolation between operating points.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from isomax_lab.errors import ValidationError

TPR_TARGET_PERCENT = 95


class ScoredSample(NamedTuple):
    score: float
    is_in_distribution: bool


@dataclass(frozen=True)
class RocCurve:
    """Operating points ordered by increasing threshold.

    ``tpr[0] == fpr[0] == 1`` (threshold ``-inf``) and the last point is
    ``(0, 0)`` (threshold ``+inf``).
    """

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    n_in_above: np.ndarray
    n_out_above: np.ndarray
    n_in: int
    n_out: int


@dataclass(frozen=True)
class DetectionReport:
    tnr_at_tpr95: float
    auroc: float
    dtacc: float
    n_in: int
    n_out: int


def split_scores(samples, is_in=None):
    """Normalise the accepted inputs into ``(in_scores, out_scores)``.

    Accepts an iterable of :class:`ScoredSample` (or ``(score, flag)`` pairs),
    or a score array together with a boolean ``is_in`` array.
    """
    if is_in is None:
        pairs = list(samples)
        scores = np.array([float(s[0]) for s in pairs], dtype=np.float64)
        flags = np.array([bool(s[1]) for s in pairs], dtype=bool)
    else:
        scores = np.asarray(samples, dtype=np.float64).ravel()
        flags = np.asarray(is_in, dtype=bool).ravel()
        if scores.shape != flags.shape:
            raise ValidationError("scores and flags differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    in_scores, out_scores = scores[flags], scores[~flags]
    if in_scores.size == 0 or out_scores.size == 0:
        raise ValidationError("need at least one in-distribution and one OOD sample")
    return in_scores, out_scores


def roc_from_scores(in_scores, out_scores) -> RocCurve:
    in_sorted = np.sort(np.asarray(in_scores, dtype=np.float64))
    out_sorted = np.sort(np.asarray(out_scores, dtype=np.float64))
    n_in, n_out = in_sorted.size, out_sorted.size
    if n_in == 0 or n_out == 0:
        raise ValidationError("need at least one in-distribution and one OOD sample")
    distinct = np.unique(np.concatenate([in_sorted, out_sorted]))
    thresholds = np.concatenate([[-np.inf], distinct, [np.inf]])
    n_in_above = n_in - np.searchsorted(in_sorted, thresholds, side="right")
    n_out_above = n_out - np.searchsorted(out_sorted, thresholds, side="right")
    return RocCurve(
        thresholds=thresholds,
        tpr=n_in_above / n_in,
        fpr=n_out_above / n_out,
        n_in_above=n_in_above,
        n_out_above=n_out_above,
        n_in=n_in,
        n_out=n_out,
    )


def roc_curve(samples, is_in=None) -> RocCurve:
    return roc_from_scores(*split_scores(samples, is_in))


def _auroc(curve: RocCurve) -> float:
    # reversed: fpr ascending
    fpr, tpr = curve.fpr[::-1], curve.tpr[::-1]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))


def _tnr_at_tpr95(curve: RocCurve) -> float:
    # TPR is non-increasing in the threshold, so the admissible thresholds form
    # a prefix; the last one has the smallest FPR.
    ok = curve.n_in_above * 100 >= TPR_TARGET_PERCENT * curve.n_in
    k = int(np.flatnonzero(ok)[-1])
    return (curve.n_out - int(curve.n_out_above[k])) / curve.n_out


def _dtacc(curve: RocCurve) -> float:
    n_in_below = curve.n_in - curve.n_in_above
    errors = 0.5 * (n_in_below / curve.n_in + curve.n_out_above / curve.n_out)
    return float(1.0 - errors.min())


def auroc(samples, is_in=None) -> float:
    """Trapezoidal area under the ROC curve (equals the tie-corrected Mann-Whitney U / n_in n_out)."""
    return _auroc(roc_curve(samples, is_in))


def tnr_at_tpr95(samples, is_in=None) -> float:
    return _tnr_at_tpr95(roc_curve(samples, is_in))


def dtacc(samples, is_in=None) -> float:
    """``1 - min_delta (P_in(o <= delta) + P_out(o > delta)) / 2`` with equal priors."""
    return _dtacc(roc_curve(samples, is_in))


def detection_report(in_scores, out_scores) -> DetectionReport:
    curve = roc_from_scores(in_scores, out_scores)
    return DetectionReport(
        tnr_at_tpr95=_tnr_at_tpr95(curve),
        auroc=_auroc(curve),
        dtacc=_dtacc(curve),
        n_in=curve.n_in,
        n_out=curve.n_out,
    )
