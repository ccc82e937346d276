"""Synthetic Gaussian-blob classification data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LabeledBatch:
    inputs: np.ndarray  # [batch x d_in], float64
    targets: np.ndarray  # [batch], int64 class indices

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be [batch x d], got shape {self.inputs.shape}")
        if self.targets.shape != (self.inputs.shape[0],):
            raise ValueError(f"targets shape {self.targets.shape} disagrees with inputs {self.inputs.shape}")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __iter__(self):
        # allows ``data, target = batch``
        yield self.inputs
        yield self.targets


def gaussian_blobs(n: int, centers, scales, seed: int = 0) -> LabeledBatch:
    """``n`` points split evenly over one axis-aligned Gaussian per class.

    ``centers`` is ``[classes x d]``; ``scales`` is a per-dimension standard
    deviation (``[d]``) shared by all classes, or ``[classes x d]``.
    Points are shuffled with the same seed.
    """
    centers = np.asarray(centers, dtype=np.float64)
    classes, d = centers.shape
    scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (classes, d))
    if n < classes:
        raise ValueError(f"need at least one point per class, got n={n} for {classes} classes")
    rng = np.random.default_rng(seed)
    counts = [n // classes + (1 if c < n % classes else 0) for c in range(classes)]
    xs, ys = [], []
    for c, m in enumerate(counts):
        xs.append(centers[c] + scales[c] * rng.standard_normal((m, d)))
        ys.append(np.full(m, c, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(n)
    return LabeledBatch(x[order], y[order])


def separated_blobs(n: int, separation: float = 4.0, sigma: float = 1.0, dim: int = 2, seed: int = 0) -> LabeledBatch:
    """Two isotropic blobs whose means sit ``separation * sigma`` either side of the plane x0 = 0."""
    centers = np.zeros((2, dim))
    centers[0, 0] = -separation * sigma
    centers[1, 0] = separation * sigma
    return gaussian_blobs(n, centers, np.full(dim, sigma), seed=seed)


# Class means differ on both axes. Axis 0 is almost perfectly predictive (each
# mean sits five standard deviations from the boundary) but its classes are only
# 0.3 apart, so even a budget-0.25 attacker crosses it. Axis 1 is noisier but
# its classes sit 3.0 apart.
FRAGILE_CENTERS = [[-0.15, -1.5], [0.15, 1.5]]
FRAGILE_SCALES = [0.03, 1.0]


def fragile_blobs(n: int, seed: int = 0) -> LabeledBatch:
    """Two anisotropic blobs where the cleanest feature is the least robust."""
    return gaussian_blobs(n, FRAGILE_CENTERS, FRAGILE_SCALES, seed=seed)


def batches(data: LabeledBatch, batch_size: int) -> list[LabeledBatch]:
    """Split into consecutive minibatches (the last one may be short)."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    n = len(data)
    return [LabeledBatch(data.inputs[i : i + batch_size], data.targets[i : i + batch_size]) for i in range(0, n, batch_size)]


def concat(parts: list[LabeledBatch]) -> LabeledBatch:
    if not parts:
        raise ValueError("nothing to concatenate")
    return LabeledBatch(np.concatenate([b.inputs for b in parts]), np.concatenate([b.targets for b in parts]))
