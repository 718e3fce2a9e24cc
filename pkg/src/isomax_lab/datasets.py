"""Synthetic blobs, a ring out-distribution, and an IDX reader/writer."""

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from isomax_lab.errors import (
    DimensionError,
    IdxConsistencyError,
    IdxFormatError,
    TruncatedFileError,
    ValidationError,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise DimensionError("inputs must be a 2-d array")
        n = self.inputs.shape[0]
        if n == 0:
            raise ValidationError(f"dataset {self.name!r} is empty")
        if self.labels.shape != (n,):
            raise DimensionError("one label per input row is required")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValidationError("labels outside [0, num_classes)")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def in_dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class BlobSpec:
    num_classes: int = 4
    dim: int = 2
    cluster_radius: float = 4.0
    cluster_sigma: float = 1.0
    samples_per_class: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1 or self.dim < 1 or self.samples_per_class < 1:
            raise ValidationError("num_classes, dim and samples_per_class must be positive")
        if self.cluster_radius <= 0 or self.cluster_sigma < 0:
            raise ValidationError("cluster_radius must be positive, cluster_sigma non-negative")
        if self.dim > 2 and self.num_classes > 2 * self.dim:
            raise ValidationError("need num_classes <= 2*dim for axis-placed means")


def class_means(spec: BlobSpec) -> np.ndarray:
    """Means evenly spaced on a circle (dim <= 2) or on signed coordinate axes."""
    c, r = spec.num_classes, spec.cluster_radius
    if spec.dim == 1:
        if c > 2:
            raise ValidationError("dim=1 supports at most two classes")
        return np.array([[r], [-r]])[:c]
    means = np.zeros((c, spec.dim))
    if spec.dim == 2:
        angles = 2.0 * np.pi * np.arange(c) / c
        means[:, 0] = r * np.cos(angles)
        means[:, 1] = r * np.sin(angles)
        # exact axis points for the common C=2/C=4 layouts
        means[np.abs(means) < 1e-12] = 0.0
    else:
        for j in range(c):
            means[j, j % spec.dim] = r if j < spec.dim else -r
    return means


def generate_blobs(spec: BlobSpec, name: str = "blobs") -> LabeledDataset:
    rng = np.random.default_rng(spec.seed)
    means = class_means(spec)
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    noise = rng.standard_normal((labels.size, spec.dim)) * spec.cluster_sigma
    return LabeledDataset(means[labels] + noise, labels, spec.num_classes, name)


def generate_ood_ring(spec: BlobSpec, ring_radius: float, num_samples=None, name=None) -> LabeledDataset:
    """Points spread uniformly over the sphere of ``ring_radius`` plus Gaussian noise.

    Uses ``spec.cluster_sigma`` as the noise level and ``spec.seed`` for the
    generator; labels are all 0 (they carry no meaning).
    """
    margin = spec.cluster_radius + 3.0 * spec.cluster_sigma
    if not ring_radius > margin:
        raise ValidationError(
            f"ring_radius {ring_radius} must exceed cluster_radius + 3*sigma = {margin}"
        )
    n = num_samples if num_samples is not None else spec.num_classes * spec.samples_per_class
    rng = np.random.default_rng(spec.seed)
    if spec.dim == 2:
        angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
        directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    else:
        directions = rng.standard_normal((n, spec.dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    points = ring_radius * directions + rng.standard_normal((n, spec.dim)) * spec.cluster_sigma
    return LabeledDataset(points, np.zeros(n, dtype=np.int64), 1, name or f"ring{ring_radius:g}")


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------


def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"{path}: expected {n} bytes, got {len(data)}")
    return data


def read_idx_images(path) -> np.ndarray:
    """Raw ``uint8`` array of shape ``(N, rows, cols)``."""
    path = Path(path)
    with open(path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, path))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(f"{path}: bad image magic 0x{magic:08x}")
        n, rows, cols = struct.unpack(">III", _read_exact(fh, 12, path))
        payload = _read_exact(fh, n * rows * cols, path)
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, path))
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(f"{path}: bad label magic 0x{magic:08x}")
        (n,) = struct.unpack(">I", _read_exact(fh, 4, path))
        payload = _read_exact(fh, n, path)
    return np.frombuffer(payload, dtype=np.uint8).copy()


def load_idx(images_path, labels_path, name="idx", num_classes=None) -> LabeledDataset:
    """Load an IDX image/label pair, flatten images and scale pixels to ``[0, 1]``."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxConsistencyError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return LabeledDataset(inputs, labels.astype(np.int64), num_classes, name)


def write_idx_images(path, images) -> None:
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ValidationError("IDX images must be a uint8 array of shape (N, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(np.ascontiguousarray(images).tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValidationError("IDX labels must be a 1-d array of values in [0, 255]")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


def select_classes(data: LabeledDataset, classes: Sequence[int], name=None) -> LabeledDataset:
    """Keep rows whose label is in ``classes`` and relabel them ``0..len(classes)-1``."""
    classes = list(classes)
    mask = np.isin(data.labels, classes)
    if not mask.any():
        raise ValidationError(f"no samples with labels {classes}")
    remap = {c: k for k, c in enumerate(classes)}
    labels = np.array([remap[int(y)] for y in data.labels[mask]], dtype=np.int64)
    return LabeledDataset(data.inputs[mask], labels, len(classes), name or data.name)


def exclude_classes(data: LabeledDataset, classes: Sequence[int], name=None) -> LabeledDataset:
    """Rows whose label is *not* in ``classes``; labels zeroed (OOD use)."""
    mask = ~np.isin(data.labels, list(classes))
    if not mask.any():
        raise ValidationError("no samples left after excluding classes")
    n = int(mask.sum())
    return LabeledDataset(data.inputs[mask], np.zeros(n, dtype=np.int64), 1, name or data.name)


def compose_test_set(in_test: LabeledDataset, ood: LabeledDataset) -> Tuple[np.ndarray, np.ndarray]:
    """Stack in-distribution rows first, then OOD rows; returns ``(inputs, is_in)``."""
    if ood is None or len(ood) == 0:
        raise ValidationError("OOD set is empty")
    if in_test.in_dim != ood.in_dim:
        raise ValidationError(f"input dims differ: {in_test.in_dim} vs {ood.in_dim}")
    inputs = np.concatenate([in_test.inputs, ood.inputs], axis=0)
    flags = np.concatenate([np.ones(len(in_test), bool), np.zeros(len(ood), bool)])
    return inputs, flags


def compose_samples(in_test: LabeledDataset, ood: LabeledDataset) -> List[Tuple[np.ndarray, bool]]:
    inputs, flags = compose_test_set(in_test, ood)
    return [(row, bool(f)) for row, f in zip(inputs, flags)]
