"""Dataset ingestion and synthetic data generators.

Image files follow the IDX layout: a big-endian magic number (0x803 for
image tensors, 0x801 for label vectors), one big-endian 32-bit size per
dimension, then raw unsigned bytes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ClassificationData",
    "ingest_idx",
    "synth_classification",
    "synth_linreg",
    "bilinear_resize",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class ClassificationData:
    """Flattened feature vectors in [0, 1] with integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} labels")

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-D array by bilinear interpolation on the corner-aligned grid."""
    image = np.asarray(image, dtype=float)
    in_h, in_w = image.shape
    rows = np.linspace(0.0, in_h - 1.0, out_h)
    cols = np.linspace(0.0, in_w - 1.0, out_w)
    r0 = np.minimum(np.floor(rows).astype(int), in_h - 2) if in_h > 1 else np.zeros(out_h, dtype=int)
    c0 = np.minimum(np.floor(cols).astype(int), in_w - 2) if in_w > 1 else np.zeros(out_w, dtype=int)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    top = image[np.ix_(r0, c0)] * (1 - fc) + image[np.ix_(r0, c1)] * fc
    bottom = image[np.ix_(r1, c0)] * (1 - fc) + image[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bottom * fr


def _read_header(raw: bytes, path: str, expected_magic: int, n_dims: int) -> tuple[tuple[int, ...], int]:
    header_len = 4 + 4 * n_dims
    if len(raw) < header_len:
        raise ValueError(f"{path}: truncated header ({len(raw)} bytes)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise ValueError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(f">{n_dims}I", raw[4:header_len])
    return dims, header_len


def ingest_idx(images_path, labels_path, max_items: int | None = None, target_dim: int = 64) -> ClassificationData:
    """Load an IDX image/label pair, resizing each image to a flat vector.

    ``target_dim`` must be a perfect square; images come out bilinearly
    resized to that square, scaled into [0, 1] and flattened.

    Raises:
        ValueError: bad magic, truncated payload, image/label count
            mismatch, or a non-square ``target_dim``.
    """
    side = math.isqrt(target_dim)
    if side * side != target_dim:
        raise ValueError(f"target_dim {target_dim} is not a perfect square")
    with open(images_path, "rb") as fh:
        raw = fh.read()
    (count, in_h, in_w), offset = _read_header(raw, str(images_path), IMAGE_MAGIC, 3)
    expected = offset + count * in_h * in_w
    if len(raw) < expected:
        raise ValueError(f"{images_path}: truncated payload ({len(raw)} bytes, expected {expected})")
    with open(labels_path, "rb") as fh:
        raw_labels = fh.read()
    (label_count,), label_offset = _read_header(raw_labels, str(labels_path), LABEL_MAGIC, 1)
    if len(raw_labels) < label_offset + label_count:
        raise ValueError(f"{labels_path}: truncated payload")
    if label_count != count:
        raise ValueError(f"{count} images vs {label_count} labels")
    if max_items is not None:
        count = min(count, max_items)
    images = np.frombuffer(raw, dtype=np.uint8, count=count * in_h * in_w, offset=offset)
    images = images.reshape(count, in_h, in_w).astype(float) / 255.0
    labels = np.frombuffer(raw_labels, dtype=np.uint8, count=count, offset=label_offset).astype(np.int64)
    features = np.empty((count, target_dim))
    for idx in range(count):
        features[idx] = bilinear_resize(images[idx], side, side).ravel()
    return ClassificationData(features=features, labels=labels)


def synth_classification(n_classes: int, per_class: int, d: int, seed: int = 0,
                         separation: float = 4.0) -> ClassificationData:
    """Unit-variance Gaussian blobs with class means on a scaled simplex.

    Class ``c`` centers on ``separation`` times the ``c``-th standard basis
    vector (coordinates past ``d`` wrap around), so any two class means sit
    ``separation * sqrt(2)`` apart.
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if per_class < 1:
        raise ValueError(f"per_class must be positive, got {per_class}")
    rng = np.random.default_rng(seed)
    features = np.empty((n_classes * per_class, d))
    labels = np.empty(n_classes * per_class, dtype=np.int64)
    for c in range(n_classes):
        mean = np.zeros(d)
        mean[c % d] = separation
        block = slice(c * per_class, (c + 1) * per_class)
        features[block] = mean + rng.standard_normal((per_class, d))
        labels[block] = c
    order = rng.permutation(n_classes * per_class)
    return ClassificationData(features=features[order], labels=labels[order])


def synth_linreg(n: int, samples_per_node: int, d: int, noise_var: float = 0.01,
                 seed: int = 0, sum_floor: float | None = None):
    """Per-node regression blocks against a shared ground-truth vector.

    Feature rows are standard normal, normalized to sum to one; rows whose
    raw sum falls inside ``(-sum_floor, sum_floor)`` are redrawn first, so
    the normalization never inflates a row.  The default floor of
    ``sqrt(d)/2`` keeps row norms near one, which the descent stepsizes
    used in the experiments rely on.  Targets follow the linear model with
    additive Gaussian noise.

    Returns:
        (features per node, targets per node, ground-truth vector).
    """
    if n * samples_per_node < d:
        raise ValueError(
            f"{n * samples_per_node} samples cannot determine {d} coefficients")
    floor = math.sqrt(d) / 2.0 if sum_floor is None else sum_floor
    rng = np.random.default_rng(seed)
    x_star = rng.standard_normal(d)
    features = []
    targets = []
    for _ in range(n):
        rows = np.empty((samples_per_node, d))
        for r in range(samples_per_node):
            while True:
                row = rng.standard_normal(d)
                total = row.sum()
                if abs(total) >= floor:
                    rows[r] = row / total
                    break
        features.append(rows)
        targets.append(rows @ x_star + rng.normal(0.0, math.sqrt(noise_var), size=samples_per_node))
    return features, targets, x_star
