"""Dense feature extractor with analytic backprop, plus SGD with momentum.

Tensors are plain ``float64`` numpy arrays in C order; the shape/data pair
of a tensor is just ``arr.shape`` / ``arr.ravel()``.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from isomax_lab.errors import DimensionError, NonFiniteError, StateError, ValidationError

ACTIVATIONS = ("relu", "identity")


def as_tensor(values, ndim=None) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {arr.shape}")
    return arr


@dataclass
class DenseLayer:
    """Affine map followed by an element-wise activation.

    ``weights`` has shape ``(out_dim, in_dim)`` and acts as ``x @ weights.T``.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"
    _inputs: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _pre: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.weights = as_tensor(self.weights, ndim=2)
        self.bias = as_tensor(self.bias, ndim=1)
        if self.bias.shape[0] != self.weights.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} != out_dim {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, activation="relu"):
        bound = 1.0 / np.sqrt(in_dim)
        weights = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        return cls(weights, np.zeros(out_dim), activation)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"layer expects (B, {self.in_dim}) input, got {x.shape}")
        pre = x @ self.weights.T + self.bias
        self._inputs = x
        self._pre = pre
        if self.activation == "relu":
            return np.maximum(pre, 0.0)
        return pre

    def backward(self, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(grad_weights, grad_bias, grad_inputs)`` for the cached forward."""
        if self._pre is None:
            raise StateError("backward called without a cached forward pass")
        if grad_out.shape != self._pre.shape:
            raise DimensionError(f"gradient shape {grad_out.shape} != output {self._pre.shape}")
        if self.activation == "relu":
            grad_pre = np.where(self._pre > 0.0, grad_out, 0.0)
        else:
            grad_pre = grad_out
        grad_w = grad_pre.T @ self._inputs
        grad_b = grad_pre.sum(axis=0)
        grad_in = grad_pre @ self.weights
        return grad_w, grad_b, grad_in


class FeatureExtractor:
    """Stack of dense layers mapping ``(B, in_dim)`` inputs to ``(B, feature_dim)``."""

    def __init__(self, layers: Sequence[DenseLayer]):
        if not layers:
            raise ValidationError("feature extractor needs at least one layer")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.layers = list(layers)
        self._cached = False

    @classmethod
    def build(
        cls,
        in_dim: int,
        hidden_dims: Sequence[int],
        feature_dim: int,
        rng: np.random.Generator,
        feature_activation: str = "identity",
    ) -> "FeatureExtractor":
        dims = [in_dim, *hidden_dims, feature_dim]
        layers = []
        for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            act = feature_activation if k == len(dims) - 2 else "relu"
            layers.append(DenseLayer.init(a, b, rng, act))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def feature_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> List[np.ndarray]:
        """Flat list ``[W0, b0, W1, b1, ...]``; arrays are live references."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def parameter_names(self) -> List[str]:
        names = []
        for k in range(len(self.layers)):
            names.extend((f"layer{k}.weights", f"layer{k}.bias"))
        return names

    def forward(self, x) -> np.ndarray:
        x = as_tensor(x, ndim=2)
        if x.shape[1] != self.in_dim:
            raise DimensionError(f"expected {self.in_dim} input columns, got {x.shape[1]}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("non-finite values in batch inputs")
        for layer in self.layers:
            x = layer.forward(x)
        self._cached = True
        return x

    def backward(self, grad_features) -> Tuple[List[np.ndarray], np.ndarray]:
        """Backpropagate from the features of the last ``forward`` call.

        Returns the parameter gradients (same order as :meth:`parameters`)
        and the gradient with respect to the inputs.
        """
        if not self._cached:
            raise StateError("backward called without a cached forward pass")
        grad = as_tensor(grad_features, ndim=2)
        per_layer = []
        for layer in reversed(self.layers):
            gw, gb, grad = layer.backward(grad)
            per_layer.append((gw, gb))
        grads = []
        for gw, gb in reversed(per_layer):
            grads.extend((gw, gb))
        return grads, grad


def forward(extractor: FeatureExtractor, batch_inputs) -> np.ndarray:
    return extractor.forward(batch_inputs)


def backward(extractor: FeatureExtractor, grad_features):
    return extractor.backward(grad_features)


@dataclass
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_epochs: Tuple[int, ...] = (15, 20, 25)
    decay_factor: float = 10.0

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be non-negative")
        if not self.decay_factor > 0:
            raise ValidationError("decay_factor must be positive")
        if any(b <= a for a, b in zip(self.decay_epochs, self.decay_epochs[1:])):
            raise ValidationError("decay_epochs must be strictly increasing")


def lr_at_epoch(config: SgdConfig, epoch: int) -> float:
    """Step schedule: divide by ``decay_factor`` once per decay epoch reached."""
    if epoch < 0:
        raise ValidationError("epoch must be non-negative")
    passed = sum(1 for e in config.decay_epochs if epoch >= e)
    return config.learning_rate / config.decay_factor**passed


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    velocity: Sequence[np.ndarray],
    config: SgdConfig,
    lr: Optional[float] = None,
    decay_mask: Optional[Sequence[bool]] = None,
):
    """One in-place heavy-ball update.

    ``v <- momentum * v + g + weight_decay * p`` then ``p <- p - lr * v``.
    Parameters whose ``decay_mask`` entry is False skip the decay term.
    Returns ``(params, velocity)``.
    """
    if not (len(params) == len(grads) == len(velocity)):
        raise DimensionError("params, grads and velocity must have equal length")
    if decay_mask is None:
        decay_mask = [True] * len(params)
    lr = config.learning_rate if lr is None else lr
    for k, (p, g, v) in enumerate(zip(params, grads, velocity)):
        if p.shape != g.shape or p.shape != v.shape:
            raise DimensionError(f"shape mismatch at parameter {k}: {p.shape}, {g.shape}, {v.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {k}")
    for p, g, v, decay in zip(params, grads, velocity, decay_mask):
        v *= config.momentum
        v += g
        if decay and config.weight_decay:
            v += config.weight_decay * p
        p -= lr * v
    return params, velocity
