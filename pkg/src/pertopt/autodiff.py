"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op appends a :class:`TapeNode` to the result tensor.
Node ids are drawn from a global monotone counter, so a node's parents always
carry smaller ids than the node itself; :func:`backward` walks the recorded
graph in decreasing id order, which is a reverse topological order.

Broadcasting is deliberately unsupported apart from tensor-scalar operations.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "TapeNode",
    "tensor",
    "zeros",
    "ones",
    "add",
    "subtract",
    "multiply",
    "negate",
    "scale",
    "relu",
    "clamp",
    "matmul",
    "reshape",
    "repeat_rows",
    "sum",
    "mean",
    "cross_entropy",
    "backward",
    "no_grad",
    "finite_difference_gradient",
]

_ids = itertools.count()
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable taping in the current thread."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@dataclass
class TapeNode:
    op_kind: str
    parents: tuple["Tensor", ...]
    # maps the output gradient to one gradient per parent; forward values the
    # rule needs are captured by the closure
    vjp: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] = field(repr=False)

    @property
    def parent_ids(self) -> tuple[int, ...]:
        return tuple(p.id for p in self.parents)


class Tensor:
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return add(negate(self), other)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum(self)

    def mean(self):
        return mean(self)

    def backward(self):
        return backward(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, op_kind: str, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node = None
    out.requires_grad = False
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = TapeNode(op_kind, tuple(parents), vjp)
    out.id = next(_ids)
    return out


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (only tensor-scalar broadcasting is supported)")


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    if _is_scalar(b):
        c = float(b)
        return _record(a.data + c, "add", (a,), lambda g: (g,))
    b = _as_tensor(b)
    _check_same_shape("add", a, b)
    return _record(a.data + b.data, "add", (a, b), lambda g: (g, g))


def subtract(a, b) -> Tensor:
    a = _as_tensor(a)
    if _is_scalar(b):
        c = float(b)
        return _record(a.data - c, "subtract", (a,), lambda g: (g,))
    b = _as_tensor(b)
    _check_same_shape("subtract", a, b)
    return _record(a.data - b.data, "subtract", (a, b), lambda g: (g, -g))


def multiply(a, b) -> Tensor:
    a = _as_tensor(a)
    if _is_scalar(b):
        return scale(a, b)
    b = _as_tensor(b)
    _check_same_shape("multiply", a, b)
    ad, bd = a.data, b.data
    return _record(ad * bd, "multiply", (a, b), lambda g: (g * bd, g * ad))


def negate(a) -> Tensor:
    a = _as_tensor(a)
    return _record(-a.data, "negate", (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _record(a.data * c, "scale", (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0  # subgradient 0 at 0
    return _record(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def clamp(a, lo: float, hi: float) -> Tensor:
    if lo > hi:
        raise ValueError(f"clamp: lo={lo} exceeds hi={hi}")
    a = _as_tensor(a)
    # gradient passes strictly inside (lo, hi) only
    mask = (a.data > lo) & (a.data < hi)
    return _record(np.clip(a.data, lo, hi), "clamp", (a,), lambda g: (g * mask,))


# -- structural ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects rank-2 operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner extents disagree, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, "matmul", (a, b), lambda g: (g @ bd.T, ad.T @ g))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _record(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def repeat_rows(a, n: int) -> Tensor:
    """Replicate a ``[1 x d]`` tensor into ``[n x d]``."""
    a = _as_tensor(a)
    if a.ndim != 2 or a.shape[0] != 1:
        raise ValueError(f"repeat_rows expects shape [1 x d], got {a.shape}")
    if n < 1:
        raise ValueError(f"repeat_rows: n must be positive, got {n}")
    return _record(
        np.repeat(a.data, n, axis=0),
        "repeat_rows",
        (a,),
        lambda g: (g.sum(axis=0, keepdims=True),),
    )


# -- reductions and losses -------------------------------------------------


def sum(a) -> Tensor:  # noqa: A001 - mirrors the tensor method name
    a = _as_tensor(a)
    shape = a.shape
    return _record(np.array(a.data.sum()), "sum", (a,), lambda g: (np.full(shape, float(g)),))


def mean(a) -> Tensor:
    a = _as_tensor(a)
    shape, n = a.shape, a.size
    if n == 0:
        raise ValueError("mean of an empty tensor")
    return _record(np.array(a.data.mean()), "mean", (a,), lambda g: (np.full(shape, float(g) / n),))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects [batch x classes] logits, got {logits.shape}")
    batch, classes = logits.shape
    if batch < 1:
        raise ValueError("cross_entropy: empty batch")
    if targets.shape != (batch,):
        raise ValueError(f"cross_entropy: targets shape {targets.shape} does not match batch {batch}")
    if not np.issubdtype(targets.dtype, np.integer):
        if not np.all(np.equal(np.mod(targets, 1), 0)):
            raise ValueError("cross_entropy: targets must be integer class indices")
        targets = targets.astype(np.int64)
    if targets.min() < 0 or targets.max() >= classes:
        raise ValueError(f"cross_entropy: target index out of range [0, {classes}): {targets.tolist()}")
    logp = _log_softmax(logits.data)
    rows = np.arange(batch)
    loss = -logp[rows, targets].mean()

    def vjp(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * (float(g) / batch),)

    return _record(np.array(loss), "cross_entropy", (logits,), vjp)


# -- reverse pass ----------------------------------------------------------


def _collect(root: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t.id in seen:
            continue
        seen[t.id] = t
        if t.node is not None:
            stack.extend(t.node.parents)
    return sorted(seen.values(), key=lambda t: t.id, reverse=True)


def backward(loss: Tensor, inputs: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

    Returns a map from tensor id to the gradient contributed by this call.
    Tensors listed in ``inputs`` that the loss does not depend on are reported
    with an exact zero gradient.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    out: dict[int, np.ndarray] = {}
    for t in _collect(loss):
        g = grads.pop(t.id, None)
        if g is None:
            continue
        if t.node is None:
            if t.requires_grad:
                out[t.id] = g
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.parents, t.node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    for t in inputs or ():
        if t.id not in out:
            out[t.id] = np.zeros_like(t.data)
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
    return out


def finite_difference_gradient(f: Callable[[Tensor], object], x, step: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of the gradient of scalar ``f`` at ``x``."""
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)

    def evaluate(v: np.ndarray) -> float:
        with no_grad():
            r = f(Tensor(v))
        val = r.item() if isinstance(r, Tensor) else float(r)
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite function value {val} during finite differencing")
        return val

    for i in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus.reshape(-1)[i] += step
        minus.reshape(-1)[i] -= step
        flat[i] = (evaluate(plus) - evaluate(minus)) / (2 * step)
    return grad
