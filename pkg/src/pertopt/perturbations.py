"""Parameterized data transforms ``x -> g(x; delta)``."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .optim import INF, ConstraintSet, project

PER_SAMPLE = "per-sample"
UNIVERSAL = "universal"


def _check_data_shape(data_shape) -> tuple[int, ...]:
    shape = tuple(int(s) for s in data_shape)
    if len(shape) < 2 or any(s < 1 for s in shape):
        raise ValueError(f"data_shape must be batch-leading with rank >= 2 and positive extents, got {tuple(data_shape)}")
    return shape


def uniform_in_ball(shape, constraint: ConstraintSet, seed: int = 0) -> np.ndarray:
    """Draw uniformly from the constraint ball (one draw per slice if ``per_sample``)."""
    rng = np.random.default_rng(seed)
    eps = constraint.epsilon
    n = shape[0] if constraint.per_sample else 1
    d = int(np.prod(shape)) // n
    if constraint.p == INF:
        out = rng.uniform(-eps, eps, size=(n, d))
    elif constraint.p == 2.0:
        direction = rng.standard_normal((n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = eps * rng.uniform(size=(n, 1)) ** (1.0 / d)
        out = direction * radius
    else:
        # Dirichlet(1, ..., 1) over d + 1 parts; drop the slack part
        e = rng.exponential(size=(n, d + 1))
        mags = e[:, :d] / e.sum(axis=1, keepdims=True)
        signs = rng.choice([-1.0, 1.0], size=(n, d))
        out = eps * mags * signs
    out = out.reshape(shape)
    # guard against rounding outside the ball
    return project(out, constraint)


class AdditivePerturbation:
    """``x + delta`` with one delta entry per data entry."""

    kind = PER_SAMPLE

    def __init__(self, data_shape, init: str = "zeros", constraint: ConstraintSet | None = None, seed: int = 0):
        self.data_shape = _check_data_shape(data_shape)
        self.delta = Tensor(self._initial(self._delta_shape(), init, constraint, seed), requires_grad=True)

    def _delta_shape(self) -> tuple[int, ...]:
        return self.data_shape

    @staticmethod
    def _initial(shape, init, constraint, seed) -> np.ndarray:
        if init == "zeros":
            return np.zeros(shape)
        if init in ("uniform", "uniform-in-ball"):
            if constraint is None:
                raise ValueError("uniform-in-ball init needs a constraint")
            return uniform_in_ball(shape, constraint, seed)
        raise ValueError(f"unknown init {init!r}; expected 'zeros' or 'uniform-in-ball'")

    def parameters(self) -> list[Tensor]:
        return [self.delta]

    def _check(self, x: Tensor) -> None:
        if x.shape != self.data_shape:
            raise ValueError(f"perturbation built for shape {self.data_shape} applied to data of shape {x.shape}")

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check(x)
        return x + self.delta

    apply = __call__


class UniversalPerturbation(AdditivePerturbation):
    """One delta of shape ``[1, ...]`` added to every sample of the batch."""

    kind = UNIVERSAL

    def _delta_shape(self) -> tuple[int, ...]:
        return (1,) + self.data_shape[1:]

    def _check(self, x: Tensor) -> None:
        if x.ndim != len(self.data_shape) or x.shape[1:] != self.data_shape[1:]:
            raise ValueError(f"universal perturbation for samples of shape {self.data_shape[1:]} applied to data of shape {x.shape}")

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check(x)
        batch = x.shape[0]
        flat = ad.reshape(self.delta, (1, -1))
        tiled = ad.reshape(ad.repeat_rows(flat, batch), x.shape)
        return x + tiled

    apply = __call__


class AffinePerturbation(AdditivePerturbation):
    """``scale * x + delta``; ``scale`` starts at one.

    Both tensors are returned by :meth:`parameters`, and a projected optimizer
    constrains each of them independently.
    """

    def __init__(self, data_shape, init: str = "zeros", constraint: ConstraintSet | None = None, seed: int = 0):
        super().__init__(data_shape, init, constraint, seed)
        self.scale = Tensor(np.ones(self.data_shape), requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.delta, self.scale]

    def __call__(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check(x)
        return self.scale * x + self.delta

    apply = __call__


def init_perturbation(kind: str, data_shape: Sequence[int], init: str = "zeros", constraint: ConstraintSet | None = None, seed: int = 0):
    if kind == PER_SAMPLE:
        return AdditivePerturbation(data_shape, init, constraint, seed)
    if kind == UNIVERSAL:
        return UniversalPerturbation(data_shape, init, constraint, seed)
    raise ValueError(f"unknown perturbation kind {kind!r}; expected {PER_SAMPLE!r} or {UNIVERSAL!r}")


def apply(perturbation, x) -> Tensor:
    return perturbation(x)


def parameters(perturbation) -> list[Tensor]:
    return perturbation.parameters()
