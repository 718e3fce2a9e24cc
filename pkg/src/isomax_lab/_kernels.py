"""Hot numeric kernels with a numba path and a pure-numpy path.

Both paths compute the same quantities; the numba path is used when numba
imports cleanly and ``ISOMAX_LAB_NO_NUMBA`` is unset (or ``0``). Every kernel
is exposed under both names (``numba_*`` / ``numpy_*``) so tests and the
benchmark can exercise each path regardless of the active selection.

The numba loops accumulate in a fixed order and never use ``prange``, so a
given path is bit-reproducible run to run.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def decorator(func):
            return func

        return decorator


def _numba_requested():
    flag = os.environ.get("ISOMAX_LAB_NO_NUMBA", "").strip().lower()
    return flag in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and _numba_requested()


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def numpy_pairwise_distances(features, prototypes, eps):
    diff = features[:, None, :] - prototypes[None, :, :]
    return np.sqrt(np.einsum("bcd,bcd->bc", diff, diff) + eps)


def numpy_distance_backward(features, prototypes, distances, grad_distances):
    # d d_ij / d f_i = (f_i - p_j) / d_ij ; d d_ij / d p_j = -(f_i - p_j) / d_ij
    coef = grad_distances / distances
    diff = features[:, None, :] - prototypes[None, :, :]
    grad_features = np.einsum("bc,bcd->bd", coef, diff)
    grad_prototypes = -np.einsum("bc,bcd->cd", coef, diff)
    return grad_features, grad_prototypes


def numpy_softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def numpy_row_entropy(probs):
    safe = np.where(probs > 0.0, probs, 1.0)
    return -(probs * np.log(safe)).sum(axis=1)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def numba_pairwise_distances(features, prototypes, eps):
    n, dim = features.shape
    c = prototypes.shape[0]
    out = np.empty((n, c))
    for i in range(n):
        for j in range(c):
            acc = 0.0
            for k in range(dim):
                t = features[i, k] - prototypes[j, k]
                acc += t * t
            out[i, j] = np.sqrt(acc + eps)
    return out


@njit(cache=True)
def numba_distance_backward(features, prototypes, distances, grad_distances):
    n, dim = features.shape
    c = prototypes.shape[0]
    grad_features = np.zeros((n, dim))
    grad_prototypes = np.zeros((c, dim))
    for i in range(n):
        for j in range(c):
            coef = grad_distances[i, j] / distances[i, j]
            if coef == 0.0:
                continue
            for k in range(dim):
                g = coef * (features[i, k] - prototypes[j, k])
                grad_features[i, k] += g
                grad_prototypes[j, k] -= g
    return grad_features, grad_prototypes


@njit(cache=True)
def numba_softmax_rows(logits):
    n, c = logits.shape
    out = np.empty((n, c))
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > m:
                m = logits[i, j]
        total = 0.0
        for j in range(c):
            e = np.exp(logits[i, j] - m)
            out[i, j] = e
            total += e
        for j in range(c):
            out[i, j] /= total
    return out


@njit(cache=True)
def numba_row_entropy(probs):
    n, c = probs.shape
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(c):
            p = probs[i, j]
            if p > 0.0:
                acc -= p * np.log(p)
        out[i] = acc
    return out


if USE_NUMBA:
    BACKEND = "numba"
    pairwise_distances = numba_pairwise_distances
    distance_backward = numba_distance_backward
    softmax_rows = numba_softmax_rows
    row_entropy = numba_row_entropy
else:
    BACKEND = "numpy"
    pairwise_distances = numpy_pairwise_distances
    distance_backward = numpy_distance_backward
    softmax_rows = numpy_softmax_rows
    row_entropy = numpy_row_entropy
