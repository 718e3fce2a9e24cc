"""Detection scores from output probabilities.

Higher score means "more in-distribution" for both scores:

* entropic score: negative Shannon entropy ``sum_i p_i log p_i`` (nats),
  in ``[-log C, 0]``;
* maximum probability score (MPS): ``max_i p_i``, in ``[1/C, 1]``.

Row-wise batch versions are provided for evaluation loops.
"""

import numpy as np

from isomax_lab import _kernels
from isomax_lab.errors import ValidationError

NORMALIZATION_TOL = 1e-6


def _check_probabilities(p) -> np.ndarray:
    p = np.ascontiguousarray(p, dtype=np.float64)
    squeeze = p.ndim == 1
    if squeeze:
        p = p[None, :]
    if p.ndim != 2 or p.shape[1] == 0:
        raise ValidationError(f"expected a probability vector or matrix, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValidationError("non-finite probability")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValidationError("probability entries must lie in [0, 1]")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > NORMALIZATION_TOL):
        raise ValidationError("probabilities do not sum to 1")
    return p


def _single(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValidationError(f"expected a single probability vector, got shape {p.shape}")
    return _check_probabilities(p)


def entropy(p) -> float:
    """Shannon entropy in nats with ``0 log 0 = 0``."""
    return float(_kernels.row_entropy(_single(p))[0])


def entropic_score(p) -> float:
    return -entropy(p)


def max_probability_score(p) -> float:
    return float(_single(p).max())


def entropies(probabilities) -> np.ndarray:
    return _kernels.row_entropy(_check_probabilities(probabilities))


def entropic_scores(probabilities) -> np.ndarray:
    return -entropies(probabilities)


def max_probability_scores(probabilities) -> np.ndarray:
    return _check_probabilities(probabilities).max(axis=1)


def mean_entropy(probabilities) -> float:
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if probabilities.size == 0:
        raise ValidationError("mean_entropy of an empty set")
    return float(entropies(probabilities).mean())


SCORES = {
    "entropic": entropic_scores,
    "mps": max_probability_scores,
}


def score_batch(name: str, probabilities) -> np.ndarray:
    try:
        fn = SCORES[name]
    except KeyError:
        raise ValidationError(f"unknown score {name!r}; expected one of {sorted(SCORES)}") from None
    return fn(probabilities)
