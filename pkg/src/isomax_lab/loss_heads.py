"""Classifier heads: affine SoftMax and distance-based IsoMax.

Both heads map a ``(B, feature_dim)`` feature batch to class probabilities
and return the gradient of the batch-mean cross-entropy with respect to the
features and to their own parameters.

IsoMax logits are ``-E_s * ||f - p_j||`` with learnable prototypes ``p_j``
that start at zero. ``E_s`` (the entropic scale) only enters training; the
inference probabilities use the raw negative distances.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from isomax_lab import _kernels
from isomax_lab.errors import DimensionError, ValidationError
from isomax_lab.tensor_nn import as_tensor

DISTANCE_EPS = 1e-12
DEFAULT_ENTROPIC_SCALE = 10.0
LOSS_PATHS = ("sequential", "fused")


@dataclass
class LossResult:
    loss: float
    probabilities: np.ndarray
    grad_features: np.ndarray
    grad_head_params: Dict[str, np.ndarray]
    per_sample_loss: Optional[np.ndarray] = None


class SoftMaxHead:
    """Affine logits ``w_j . f + b_j``."""

    kind = "softmax"

    def __init__(self, weights, biases):
        self.weights = as_tensor(weights, ndim=2)
        self.biases = as_tensor(biases, ndim=1)
        if self.biases.shape[0] != self.weights.shape[0]:
            raise DimensionError("biases must have one entry per class")

    @classmethod
    def init(cls, num_classes: int, feature_dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(feature_dim)
        weights = rng.uniform(-bound, bound, size=(num_classes, feature_dim))
        return cls(weights, np.zeros(num_classes))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def parameters(self) -> List[np.ndarray]:
        return [self.weights, self.biases]

    def parameter_names(self) -> List[str]:
        return ["head.weights", "head.biases"]

    def decay_mask(self) -> List[bool]:
        return [True, False]

    def logits(self, features) -> np.ndarray:
        features = _check_features(features, self.feature_dim)
        return features @ self.weights.T + self.biases

    def probabilities(self, features) -> np.ndarray:
        return _kernels.softmax_rows(self.logits(features))

    def training_probabilities(self, features) -> np.ndarray:
        return self.probabilities(features)


class IsoMaxHead:
    """Prototype-distance logits with an entropic scale applied during training."""

    kind = "isomax"

    def __init__(self, prototypes, entropic_scale: float = DEFAULT_ENTROPIC_SCALE):
        self.prototypes = as_tensor(prototypes, ndim=2)
        if not entropic_scale > 0:
            raise ValidationError("entropic_scale must be positive")
        self.entropic_scale = float(entropic_scale)

    @classmethod
    def init(cls, num_classes: int, feature_dim: int, entropic_scale: float = DEFAULT_ENTROPIC_SCALE):
        # Zero start is deliberate: random prototype init makes OOD results erratic.
        return cls(np.zeros((num_classes, feature_dim)), entropic_scale)

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.prototypes.shape[1]

    def parameters(self) -> List[np.ndarray]:
        return [self.prototypes]

    def parameter_names(self) -> List[str]:
        return ["head.prototypes"]

    def decay_mask(self) -> List[bool]:
        return [True]

    def distances(self, features) -> np.ndarray:
        return isomax_distances(self, features)

    def probabilities(self, features) -> np.ndarray:
        return isomax_probabilities(self, features)

    def training_probabilities(self, features) -> np.ndarray:
        return _kernels.softmax_rows(-self.entropic_scale * self.distances(features))


def _check_features(features, feature_dim):
    features = as_tensor(features, ndim=2)
    if features.shape[1] != feature_dim:
        raise DimensionError(f"expected feature_dim {feature_dim}, got {features.shape[1]}")
    return features


def _check_targets(targets, batch, num_classes):
    targets = np.asarray(targets)
    if targets.shape != (batch,):
        raise DimensionError(f"expected {batch} targets, got shape {targets.shape}")
    if not np.issubdtype(targets.dtype, np.integer):
        raise ValidationError("targets must be integer class indices")
    if batch and (targets.min() < 0 or targets.max() >= num_classes):
        raise IndexError(f"target outside [0, {num_classes})")
    return targets.astype(np.int64)


def _cross_entropy(logits, targets, path):
    """Mean NLL plus dL/dlogits for a logit matrix.

    ``sequential`` normalises probabilities first and then takes the log of
    the target entry; ``fused`` uses log-sum-exp. The gradient is the same
    closed form ``(p - onehot) / B`` on both paths.
    """
    batch = logits.shape[0]
    rows = np.arange(batch)
    probs = _kernels.softmax_rows(logits)
    if path == "sequential":
        with np.errstate(divide="ignore"):
            per_sample = -np.log(probs[rows, targets])
    elif path == "fused":
        m = logits.max(axis=1)
        lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
        per_sample = lse - logits[rows, targets]
    else:
        raise ValidationError(f"unknown loss path {path!r}; expected one of {LOSS_PATHS}")
    grad_logits = probs.copy()
    grad_logits[rows, targets] -= 1.0
    grad_logits /= batch
    return float(per_sample.mean()), per_sample, probs, grad_logits


def softmax_loss(head: SoftMaxHead, features, targets, path: str = "fused") -> LossResult:
    features = _check_features(features, head.feature_dim)
    targets = _check_targets(targets, features.shape[0], head.num_classes)
    logits = features @ head.weights.T + head.biases
    loss, per_sample, probs, grad_logits = _cross_entropy(logits, targets, path)
    return LossResult(
        loss=loss,
        probabilities=probs,
        grad_features=grad_logits @ head.weights,
        grad_head_params={
            "weights": grad_logits.T @ features,
            "biases": grad_logits.sum(axis=0),
        },
        per_sample_loss=per_sample,
    )


def isomax_distances(head: IsoMaxHead, features) -> np.ndarray:
    """Stabilised Euclidean distances ``sqrt(||f_i - p_j||^2 + eps)``, shape ``(B, C)``."""
    features = _check_features(features, head.feature_dim)
    return _kernels.pairwise_distances(features, head.prototypes, DISTANCE_EPS)


def isomax_loss(head: IsoMaxHead, features, targets, path: str = "sequential") -> LossResult:
    features = _check_features(features, head.feature_dim)
    targets = _check_targets(targets, features.shape[0], head.num_classes)
    distances = _kernels.pairwise_distances(features, head.prototypes, DISTANCE_EPS)
    logits = -head.entropic_scale * distances
    loss, per_sample, probs, grad_logits = _cross_entropy(logits, targets, path)
    grad_distances = np.ascontiguousarray(-head.entropic_scale * grad_logits)
    grad_f, grad_p = _kernels.distance_backward(
        features, head.prototypes, distances, grad_distances
    )
    return LossResult(
        loss=loss,
        probabilities=probs,
        grad_features=grad_f,
        grad_head_params={"prototypes": grad_p},
        per_sample_loss=per_sample,
    )


def isomax_probabilities(head: IsoMaxHead, features) -> np.ndarray:
    """Inference probabilities: softmax of ``-distance`` with the entropic scale dropped."""
    return _kernels.softmax_rows(-isomax_distances(head, features))


def head_loss(head, features, targets, path: Optional[str] = None) -> LossResult:
    if head.kind == "isomax":
        return isomax_loss(head, features, targets, path or "sequential")
    return softmax_loss(head, features, targets, path or "fused")


def head_grad_list(head, result: LossResult) -> List[np.ndarray]:
    """Head gradients in :meth:`parameters` order."""
    if head.kind == "isomax":
        return [result.grad_head_params["prototypes"]]
    return [result.grad_head_params["weights"], result.grad_head_params["biases"]]


def predict(head, features) -> np.ndarray:
    """Argmax of the inference probabilities (lowest index wins ties)."""
    if head.kind == "isomax":
        # argmin distance == argmax of softmax(-d); avoids exp round-off ties
        return np.argmin(isomax_distances(head, features), axis=1)
    return np.argmax(head.logits(features), axis=1)
