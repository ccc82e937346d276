"""Inner optimizers, lp-ball projections and the sparse Frank-Wolfe optimizer.

Two layers live here. The functional layer (:func:`sgd_step`,
:func:`projected_step`, :func:`l1q_frank_wolfe_step`, :func:`project`) works
on plain arrays and returns new arrays. The class layer (:class:`SGD`,
:class:`ProjectedGradient`, :class:`L1qFrankWolfe`, :class:`Adam`) follows the
familiar ``zero_grad()`` / ``step()`` protocol over :class:`Tensor` parameters
and updates them in place, so parameter identities never change.

All optimizers minimize. Maximization is expressed by negating the criterion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor

INF = math.inf


class NonFiniteGradientError(FloatingPointError):
    pass


def _norm_order(p) -> float:
    if isinstance(p, str):
        key = p.strip().lower()
        if key in {"inf", "infinity", "linf"}:
            return INF
        p = float(key)
    p = float(p)
    if p not in (1.0, 2.0, INF):
        raise ValueError(f"unsupported norm order {p!r}; expected one of 1, 2, inf")
    return p


@dataclass(frozen=True)
class ConstraintSet:
    """The ball ``{d : ||d||_p <= epsilon}`` centred at the origin.

    With ``per_sample=True`` the leading axis indexes independent samples and
    each slice gets its own ball; otherwise the whole tensor is one vector.
    """

    p: float = 2.0
    epsilon: float = 1.0
    per_sample: bool = False

    def __post_init__(self):
        object.__setattr__(self, "p", _norm_order(self.p))
        eps = float(self.epsilon)
        if not eps >= 0 or math.isnan(eps):
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)

    def norms(self, x) -> np.ndarray:
        """Per-slice (or whole-tensor) lp norms of ``x``."""
        return _row_norms(_rows(np.asarray(x, dtype=np.float64), self.per_sample), self.p)

    def contains(self, x, rtol: float = 1e-12) -> bool:
        return bool(np.all(self.norms(x) <= self.epsilon * (1 + rtol)))


def _rows(x: np.ndarray, per_sample: bool) -> np.ndarray:
    if per_sample and x.ndim >= 1:
        return x.reshape(x.shape[0], -1)
    return x.reshape(1, -1)


def _row_norms(rows: np.ndarray, p: float) -> np.ndarray:
    """lp norm of every row, rescaled by the row max so huge entries cannot overflow."""
    if rows.shape[1] == 0:
        return np.zeros(rows.shape[0])
    m = np.max(np.abs(rows), axis=1)
    if p == INF:
        return m
    safe = np.where(m > 0, m, 1.0)[:, None]
    scaled = rows / safe
    if p == 1.0:
        return m * np.sum(np.abs(scaled), axis=1)
    return m * np.sqrt(np.sum(scaled * scaled, axis=1))


# -- projections -------------------------------------------------------------


def _shrink_to(rows: np.ndarray, p: float, eps: float) -> np.ndarray:
    # rounding can leave a row a hair outside the ball; shade the factor down until it is inside
    for _ in range(8):
        n = _row_norms(rows, p)
        over = n > eps
        if not np.any(over):
            break
        rows[over] *= np.nextafter(eps / n[over], 0.0)[:, None]
    return rows


def _project_l2(rows: np.ndarray, eps: float) -> np.ndarray:
    n = _row_norms(rows, 2.0)
    over = n > eps
    if not np.any(over):
        return rows
    out = rows.copy()
    if eps == 0.0:
        out[over] = 0.0
        return out
    out[over] = rows[over] * (eps / n[over])[:, None]
    return _shrink_to(out, 2.0, eps)


def _project_l1(rows: np.ndarray, eps: float) -> np.ndarray:
    n = _row_norms(rows, 1.0)
    over = n > eps
    if not np.any(over):
        return rows
    out = rows.copy()
    if eps == 0.0:
        out[over] = 0.0
        return out
    v = rows[over]
    m = np.max(np.abs(v), axis=1, keepdims=True)
    a = np.abs(v) / m
    r = eps / m
    # sort-and-threshold projection of |v| onto the simplex of radius r
    u = -np.sort(-a, axis=1, kind="stable")
    css = np.cumsum(u, axis=1)
    idx = np.arange(1, u.shape[1] + 1)
    cond = u * idx > css - r
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    rows_idx = np.arange(v.shape[0])
    theta = (css[rows_idx, rho][:, None] - r) / (rho[:, None] + 1.0)
    out[over] = np.sign(v) * np.maximum(a - theta, 0.0) * m
    return _shrink_to(out, 1.0, eps)


def project(x, c: ConstraintSet):
    """Euclidean projection of ``x`` onto the ball described by ``c``.

    Accepts an array or a :class:`Tensor` and returns the same kind (a fresh,
    untaped tensor in the latter case). Feasible inputs come back unchanged.
    """
    if isinstance(x, Tensor):
        return Tensor(project(x.data, c))
    arr = np.asarray(x, dtype=np.float64)
    if c.p == INF:
        return np.clip(arr, -c.epsilon, c.epsilon)
    rows = _rows(arr, c.per_sample)
    fn = _project_l2 if c.p == 2.0 else _project_l1
    out = fn(rows, c.epsilon)
    if out is rows:
        out = rows.copy()
    return out.reshape(arr.shape)


def normalize_gradient(g: np.ndarray, c: ConstraintSet) -> np.ndarray:
    """Steepest-ascent direction of ``g`` for the ball's norm.

    ``p=inf`` gives ``sign(g)``; ``p`` in {1, 2} divides each slice by its lp
    norm. Zero slices stay zero.
    """
    if c.p == INF:
        return np.sign(g)
    rows = _rows(g, c.per_sample)
    n = _row_norms(rows, c.p)
    return (rows / np.where(n > 0, n, 1.0)[:, None]).reshape(g.shape)


# -- functional steps --------------------------------------------------------


@dataclass
class OptimizerState:
    lr: float = 0.1
    momentum: float = 0.0
    maximize: bool = False
    buffers: dict[int, np.ndarray] = field(default_factory=dict)
    steps: int = 0


def _check_finite(grads: Sequence[np.ndarray], names: Sequence[str] | None = None) -> None:
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = names[i] if names else f"param[{i}]"
            raise NonFiniteGradientError(f"non-finite gradient for {name}")


def sgd_step(params: Sequence, grads: Sequence[np.ndarray], state: OptimizerState, names=None) -> list[np.ndarray]:
    """One (heavy-ball) SGD update; returns the new parameter arrays.

    ``v <- momentum * v + g`` then ``x <- x - lr * v``; ``maximize`` flips the
    sign of ``g``.
    """
    arrays = [p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64) for p in params]
    if len(arrays) != len(grads):
        raise ValueError(f"got {len(arrays)} params but {len(grads)} grads")
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    _check_finite(grads, names)
    out = []
    for i, (x, g) in enumerate(zip(arrays, grads)):
        if g.shape != x.shape:
            raise ValueError(f"grad shape {g.shape} does not match param shape {x.shape}")
        if state.maximize:
            g = -g
        if state.momentum:
            buf = state.buffers.get(i)
            buf = g.copy() if buf is None else state.momentum * buf + g
            state.buffers[i] = buf
            g = buf
        out.append(x - state.lr * g)
    state.steps += 1
    return out


def projected_step(
    params: Sequence,
    grads: Sequence[np.ndarray],
    inner: OptimizerState,
    c: ConstraintSet,
    normalize_grad: bool = False,
) -> list[np.ndarray]:
    """Inner SGD step followed by projection of every parameter onto ``c``."""
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    _check_finite(grads)
    if normalize_grad:
        grads = [normalize_gradient(g, c) for g in grads]
    return [project(x, c) for x in sgd_step(params, grads, inner)]


@dataclass
class FrankWolfeState:
    epsilon: float
    lr: float = 1.0
    q: float = 0.05
    per_sample: bool = False

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0 < self.lr <= 1:
            raise ValueError(f"lr must lie in (0, 1], got {self.lr}")
        if not 0 < self.q <= 1:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")


def _top_count(q: float, dim: int) -> int:
    # round first so 0.1 * 30 does not ceil to 4
    return max(1, min(dim, math.ceil(round(q * dim, 9))))


def l1q_lmo(g: np.ndarray, epsilon: float, q: float, per_sample: bool = False) -> np.ndarray:
    """Linear minimization oracle over the l1 ball restricted to the top-q coordinates.

    Each slice puts magnitude ``epsilon / k`` against the sign of the gradient
    on its ``k = max(1, ceil(q * dim))`` largest-|g| coordinates. Ties keep
    the lower index.
    """
    g = np.asarray(g, dtype=np.float64)
    rows = _rows(g, per_sample)
    s = np.zeros_like(rows)
    k = _top_count(q, rows.shape[1]) if rows.shape[1] else 0
    for i, row in enumerate(rows):
        if k == 0:
            continue
        top = np.argsort(-np.abs(row), kind="stable")[:k]
        s[i, top] = -np.sign(row[top]) * (epsilon / k)
    return _shrink_to(s, 1.0, epsilon).reshape(g.shape)


def l1q_frank_wolfe_step(params: Sequence, grads: Sequence[np.ndarray], state: FrankWolfeState) -> list[np.ndarray]:
    """``x <- (1 - lr) x + lr s`` with ``s`` from :func:`l1q_lmo`."""
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    _check_finite(grads)
    out = []
    for p, g in zip(params, grads):
        x = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
        s = l1q_lmo(g, state.epsilon, state.q, state.per_sample)
        if state.lr == 1.0:
            out.append(s)
        else:
            mixed = (1.0 - state.lr) * x + state.lr * s
            out.append(_shrink_to(_rows(mixed, state.per_sample), 1.0, state.epsilon).reshape(mixed.shape))
    return out


# -- optimizer classes ------------------------------------------------------


class Optimizer:
    def __init__(self, params: Iterable[Tensor]):
        self.params = list(params)
        if not self.params:
            raise ValueError("optimizer got an empty parameter list")

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]

    def _write(self, new: Sequence[np.ndarray]) -> None:
        for p, x in zip(self.params, new):
            p.data[...] = x

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, params, lr: float = 0.1, momentum: float = 0.0, maximize: bool = False):
        super().__init__(params)
        if lr < 0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        self.state = OptimizerState(lr=lr, momentum=momentum, maximize=maximize)

    @property
    def lr(self) -> float:
        return self.state.lr

    def step(self) -> None:
        self._write(sgd_step(self.params, self._grads(), self.state))


class ProjectedGradient(Optimizer):
    """Run ``InnerOpt`` then project each parameter onto the constraint ball."""

    def __init__(
        self,
        params,
        epsilon: float,
        p=2,
        InnerOpt=SGD,
        normalize_grad: bool = False,
        per_sample: bool = False,
        **inner_kwargs,
    ):
        super().__init__(params)
        self.constraint = ConstraintSet(p=p, epsilon=epsilon, per_sample=per_sample)
        self.normalize_grad = normalize_grad
        self.inner = InnerOpt(self.params, **inner_kwargs)

    def zero_grad(self) -> None:
        self.inner.zero_grad()

    def step(self) -> None:
        if self.normalize_grad:
            for prm in self.params:
                if prm.grad is not None:
                    prm.grad = normalize_gradient(prm.grad, self.constraint)
        self.inner.step()
        self._write([project(prm.data, self.constraint) for prm in self.params])


class L2ProjectedGradient(ProjectedGradient):
    def __init__(self, params, epsilon: float, InnerOpt=SGD, normalize_grad: bool = False, per_sample: bool = False, **inner_kwargs):
        super().__init__(params, epsilon, p=2, InnerOpt=InnerOpt, normalize_grad=normalize_grad, per_sample=per_sample, **inner_kwargs)


class LinfProjectedGradient(ProjectedGradient):
    def __init__(self, params, epsilon: float, InnerOpt=SGD, normalize_grad: bool = False, per_sample: bool = False, **inner_kwargs):
        super().__init__(params, epsilon, p=INF, InnerOpt=InnerOpt, normalize_grad=normalize_grad, per_sample=per_sample, **inner_kwargs)


class L1qFrankWolfe(Optimizer):
    """Frank-Wolfe over the l1 ball with a top-q sparse vertex oracle."""

    def __init__(self, params, epsilon: float, lr: float = 1.0, q: float = 0.05, per_sample: bool = False):
        super().__init__(params)
        self.state = FrankWolfeState(epsilon=float(epsilon), lr=float(lr), q=float(q), per_sample=per_sample)
        self.constraint = ConstraintSet(p=1, epsilon=epsilon, per_sample=per_sample)

    def step(self) -> None:
        self._write(l1q_frank_wolfe_step(self.params, self._grads(), self.state))


class Adam(Optimizer):
    def __init__(
        self,
        params,
        lr: float = 0.001,
        betas=(0.9, 0.999),
        eps: float = 1e-08,
        weight_decay: float = 0,
        amsgrad: bool = False,
    ):
        super().__init__(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.amsgrad = amsgrad
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.vmax = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = self._grads()
        _check_finite(grads)
        self.t += 1
        b1, b2 = self.betas
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            v = self.v[i]
            if self.amsgrad:
                self.vmax[i] = np.maximum(self.vmax[i], v)
                v = self.vmax[i]
            mhat = self.m[i] / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p.data[...] = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass(frozen=True)
class SGDConfig:
    """Plain description of an SGD optimizer for training loops."""

    lr: float = 0.1
    momentum: float = 0.0

    def build(self, params) -> SGD:
        return SGD(params, lr=self.lr, momentum=self.momentum)
