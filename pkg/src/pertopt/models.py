"""Toy MLP classifiers, standard training and the checkpoint file format."""

from __future__ import annotations

import json
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import LabeledBatch
from .optim import SGDConfig


class MlpClassifier:
    """ReLU MLP with extents ``[d_in, h1, ..., classes]``; no activation on the last layer."""

    def __init__(self, layer_extents: Sequence[int], seed: int = 0):
        extents = [int(e) for e in layer_extents]
        if len(extents) < 2 or any(e < 1 for e in extents) or any(e != x for e, x in zip(extents, layer_extents)):
            raise ValueError(f"layer_extents must hold >= 2 positive integers, got {list(layer_extents)!r}")
        self.layer_extents = extents
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.named: list[tuple[str, Tensor]] = []
        for i, (fan_in, fan_out) in enumerate(zip(extents[:-1], extents[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.named.append((f"weight{i}", Tensor(w, requires_grad=True)))
            self.named.append((f"bias{i}", Tensor(np.zeros(fan_out), requires_grad=True)))

    @property
    def d_in(self) -> int:
        return self.layer_extents[0]

    @property
    def classes(self) -> int:
        return self.layer_extents[-1]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.named)

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named:
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: expected shape {t.shape}, got {arr.shape}")
            t.data[...] = arr

    def copy(self) -> "MlpClassifier":
        other = MlpClassifier(self.layer_extents, self.seed)
        other.load_state(self.state())
        return other

    def __call__(self, inputs) -> Tensor:
        return predict(self, inputs)


def init_model(layer_extents: Sequence[int], seed: int = 0) -> MlpClassifier:
    return MlpClassifier(layer_extents, seed)


def predict(model: MlpClassifier, inputs) -> Tensor:
    h = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
    if h.ndim != 2 or h.shape[1] != model.d_in:
        raise ValueError(f"expected inputs of shape [batch x {model.d_in}], got {h.shape}")
    batch = h.shape[0]
    params = model.parameters()
    n_layers = len(params) // 2
    for i in range(n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        h = ad.matmul(h, w) + ad.repeat_rows(ad.reshape(b, (1, b.shape[0])), batch)
        if i < n_layers - 1:
            h = ad.relu(h)
    return h


@contextmanager
def frozen(model):
    """Stop gradient flow into the model's parameters for the duration."""
    params = model.parameters()
    saved = [(p.requires_grad, p.grad) for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield model
    finally:
        for p, (flag, grad) in zip(params, saved):
            p.requires_grad = flag
            p.grad = grad


def predictions(model, inputs) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index."""
    with ad.no_grad():
        logits = model(np.asarray(inputs, dtype=np.float64) if not isinstance(inputs, Tensor) else inputs)
    return np.argmax(logits.data, axis=1)


def accuracy(model, batches) -> float:
    if isinstance(batches, LabeledBatch):
        batches = [batches]
    correct = total = 0
    for b in batches:
        correct += int(np.sum(predictions(model, b.inputs) == b.targets))
        total += len(b)
    if total == 0:
        raise ValueError("accuracy of an empty dataset")
    return correct / total


@dataclass
class TrainResult:
    model: MlpClassifier
    loss_trace: list[float] = field(default_factory=list)


class TrainingDivergedError(FloatingPointError):
    pass


def standard_train(
    model,
    dataset: Sequence[LabeledBatch],
    optimizer: SGDConfig = SGDConfig(),
    epochs: int = 1,
    transform: Callable[[object, LabeledBatch], np.ndarray] | None = None,
) -> TrainResult:
    """Minimize mean cross-entropy over ``dataset`` with SGD, in place.

    Batches are visited in the given order every epoch. ``transform`` maps
    ``(model, batch)`` to the inputs actually trained on; adversarial training
    plugs its inner attack in here. The loss trace holds the mean batch loss
    of each epoch.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if not dataset:
        raise ValueError("dataset is empty")
    opt = optimizer.build(model.parameters())
    trace = []
    for epoch in range(epochs):
        total = 0.0
        for batch in dataset:
            inputs = batch.inputs if transform is None else transform(model, batch)
            loss = ad.cross_entropy(model(inputs), batch.targets)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"non-finite training loss {value} in epoch {epoch}")
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            total += value
        trace.append(total / len(dataset))
    return TrainResult(model, trace)


# -- checkpoints -----------------------------------------------------------

CHECKPOINT_FORMAT = "pertopt-checkpoint"
CHECKPOINT_VERSION = 1


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float64 arrays as JSON with hex-encoded floats (bit exact)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "arrays": {
            name: {
                "shape": list(np.shape(arr)),
                "data": [float(v).hex() for v in np.asarray(arr, dtype=np.float64).reshape(-1)],
            }
            for name, arr in arrays.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except (ValueError, OSError) as exc:
        raise ValueError(f"{path}: not a readable checkpoint ({exc})") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unknown checkpoint format {doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    arrays = {}
    for name, entry in doc["arrays"].items():
        flat = np.array([float.fromhex(v) for v in entry["data"]], dtype=np.float64)
        arrays[name] = flat.reshape(entry["shape"])
    return doc["meta"], arrays


def save_model(model: MlpClassifier, path) -> None:
    save_arrays(path, model.state(), {"layer_extents": model.layer_extents, "seed": model.seed})


def load_model(path) -> MlpClassifier:
    meta, arrays = load_arrays(path)
    if "layer_extents" not in meta:
        raise ValueError(f"{path}: checkpoint holds no model")
    model = MlpClassifier(meta["layer_extents"], meta.get("seed", 0))
    model.load_state(arrays)
    return model
