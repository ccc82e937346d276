"""Registered components, root configs and task functions behind the CLI.

Importing this module registers everything into the default registry:

    pertopt.data.blobs                 train/test Gaussian blobs
    pertopt.models.MlpClassifier       architecture (used partially; the seed comes later)
    pertopt.trainers.standard|robust   training procedures
    pertopt.models.trained             a model trained (or loaded) per its config
    pertopt.optim.*                    optimizers, incl. the projected / Frank-Wolfe ones
    pertopt.type_checked               config-level type-check wrapper

Config groups: ``trainer`` (standard, robust) for ``train`` and ``model``
(standard, robust) for ``curve``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import (
    MISSING,
    ConfigNode,
    MissingValueError,
    Registry,
    default_registry,
    instantiate,
    make_config,
    type_checked,
)
from .data import FRAGILE_CENTERS, FRAGILE_SCALES, LabeledBatch, batches, gaussian_blobs
from .models import MlpClassifier, TrainResult, accuracy, load_model, save_arrays, save_model, standard_train
from .optim import SGD, Adam, ConstraintSet, L1qFrankWolfe, L2ProjectedGradient, LinfProjectedGradient, SGDConfig
from .solvers import SolveSpec, attack, probe, robust_train


@dataclass(frozen=True)
class BlobData:
    train: LabeledBatch
    test: LabeledBatch
    batch_size: int
    key: tuple

    @property
    def train_batches(self) -> list[LabeledBatch]:
        return batches(self.train, self.batch_size)


def blob_data(n_train: int = 2000, n_test: int = 1000, batch_size: int = 100, seed: int = 0, centers=None, scales=None) -> BlobData:
    centers = FRAGILE_CENTERS if centers is None else centers
    scales = FRAGILE_SCALES if scales is None else scales
    full = gaussian_blobs(n_train + n_test, centers, scales, seed=seed)
    train = LabeledBatch(full.inputs[:n_train], full.targets[:n_train])
    test = LabeledBatch(full.inputs[n_train:], full.targets[n_train:])
    key = (n_train, n_test, batch_size, seed, repr(np.asarray(centers).tolist()), repr(np.asarray(scales).tolist()))
    return BlobData(train, test, batch_size, key)


@dataclass(frozen=True)
class StandardTrainer:
    epochs: int = 20
    lr: float = 0.1
    momentum: float = 0.9

    def fit(self, model, data: BlobData) -> TrainResult:
        return standard_train(model, data.train_batches, SGDConfig(self.lr, self.momentum), self.epochs)


@dataclass(frozen=True)
class RobustTrainer:
    """Adversarial training against an l2 PGD attacker of budget ``epsilon``."""

    epochs: int = 20
    lr: float = 0.1
    momentum: float = 0.9
    epsilon: float = 0.5
    steps: int = 10
    attack_lr: float = 0.1

    def inner_spec(self) -> SolveSpec:
        return SolveSpec(
            steps=self.steps,
            lr=self.attack_lr,
            constraint=ConstraintSet(p=2, epsilon=self.epsilon, per_sample=True),
            normalize_grad=True,
        )

    def fit(self, model, data: BlobData) -> TrainResult:
        return robust_train(model, data.train_batches, self.inner_spec(), SGDConfig(self.lr, self.momentum), self.epochs)


@dataclass
class TrainedModel:
    name: str
    model: MlpClassifier


_cache: dict[tuple, dict] = {}
_cache_locks: dict[tuple, threading.Lock] = {}
_cache_guard = threading.Lock()


def trained_model(name: str, model, data: BlobData, trainer, seed: int = 0, checkpoint: str | None = None) -> TrainedModel:
    """Train ``model(seed=seed)`` on ``data`` with ``trainer``, or load ``checkpoint``.

    Training is deterministic, so results are memoized per process; concurrent
    sweep jobs that need the same model train it once.
    """
    if checkpoint is not None:
        return TrainedModel(name, load_model(checkpoint))
    fresh = model(seed=seed)
    key = (tuple(fresh.layer_extents), seed, data.key, trainer)
    with _cache_guard:
        lock = _cache_locks.setdefault(key, threading.Lock())
    with lock:
        if key not in _cache:
            trainer.fit(fresh, data)
            _cache[key] = fresh.state()
    fresh.load_state(_cache[key])
    return TrainedModel(name, fresh)


def clear_model_cache() -> None:
    with _cache_guard:
        _cache.clear()
        _cache_locks.clear()


# -- registration --------------------------------------------------------------

_OPTIM_FIELDS = {"params": MISSING, "epsilon": MISSING, "lr": 0.1, "momentum": 0.0, "normalize_grad": False, "per_sample": False}


def register_defaults(registry: Registry) -> Registry:
    if "pertopt.data.blobs" in registry.components:
        return registry
    r = registry
    r.register(
        "pertopt.data.blobs",
        blob_data,
        {
            "n_train": 2000,
            "n_test": 1000,
            "batch_size": 100,
            "seed": 0,
            "centers": FRAGILE_CENTERS,
            "scales": FRAGILE_SCALES,
        },
    )
    r.register("pertopt.models.MlpClassifier", MlpClassifier, {"layer_extents": [2, 32, 2], "seed": MISSING})
    r.register("pertopt.trainers.standard", StandardTrainer)
    r.register("pertopt.trainers.robust", RobustTrainer)
    r.register("pertopt.models.trained", trained_model)
    r.register("pertopt.optim.SGD", SGD)
    r.register("pertopt.optim.Adam", Adam)
    r.register("pertopt.optim.L2ProjectedGradient", L2ProjectedGradient, dict(_OPTIM_FIELDS))
    r.register("pertopt.optim.LinfProjectedGradient", LinfProjectedGradient, dict(_OPTIM_FIELDS))
    r.register("pertopt.optim.L1qFrankWolfe", L1qFrankWolfe)
    r.register("pertopt.type_checked", type_checked, {"component": MISSING})

    architecture = r.builds("pertopt.models.MlpClassifier", partial=True)
    r.register_group("trainer", "standard", r.builds("pertopt.trainers.standard"))
    r.register_group("trainer", "robust", r.builds("pertopt.trainers.robust"))
    for name in ("standard", "robust"):
        r.register_group(
            "model",
            name,
            r.builds(
                "pertopt.models.trained",
                name=name,
                model=architecture,
                data=r.builds("pertopt.data.blobs"),
                trainer=r.builds(f"pertopt.trainers.{name}"),
            ),
        )
    return r


register_defaults(default_registry)


# -- root configs ----------------------------------------------------------------


def train_config(registry: Registry | None = None) -> ConfigNode:
    r = registry or default_registry
    return make_config(
        data=r.builds("pertopt.data.blobs"),
        model=r.builds("pertopt.models.MlpClassifier", partial=True),
        trainer=r.group_option("trainer", "standard"),
        seed=0,
    )


def attack_config(registry: Registry | None = None) -> ConfigNode:
    r = registry or default_registry
    return make_config(
        checkpoint=MISSING,
        data=r.builds("pertopt.data.blobs"),
        optim=r.builds("pertopt.optim.L2ProjectedGradient", partial=True, epsilon=1.0, lr=0.1, normalize_grad=True, per_sample=True),
        steps=10,
        seed=0,
    )


def probe_config(registry: Registry | None = None) -> ConfigNode:
    r = registry or default_registry
    return make_config(
        checkpoint=MISSING,
        target=MISSING,
        optim=r.builds("pertopt.optim.L1qFrankWolfe", partial=True, epsilon=2.0, lr=1.0, q=0.05, per_sample=True),
        steps=10,
        seed=0,
    )


def curve_config(registry: Registry | None = None) -> ConfigNode:
    r = registry or default_registry
    return make_config(
        data=r.builds("pertopt.data.blobs"),
        model=r.group_option("model", "standard"),
        optim=r.builds("pertopt.optim.L2ProjectedGradient", partial=True, epsilon=0.0, lr=0.1, normalize_grad=True, per_sample=True),
        N=20,
        seed=0,
    )


# -- tasks -----------------------------------------------------------------------


def _require(cfg: ConfigNode, name: str):
    value = cfg.fields.get(name, MISSING)
    if value is MISSING:
        raise MissingValueError(f"missing mandatory value for {name!r}")
    return value


def _constraint_of(optim_node: ConfigNode) -> ConstraintSet:
    p = {"pertopt.optim.L2ProjectedGradient": 2, "pertopt.optim.LinfProjectedGradient": "inf", "pertopt.optim.L1qFrankWolfe": 1}.get(optim_node.target, 2)
    return ConstraintSet(p=p, epsilon=optim_node.fields["epsilon"], per_sample=True)


def train_task(cfg: ConfigNode, run_dir: Path):
    data = instantiate(cfg.data)
    model = instantiate(cfg.model)(seed=cfg.seed)
    trainer = instantiate(cfg.trainer)
    result = trainer.fit(model, data)
    save_model(model, Path(run_dir) / "model.ckpt")
    with open(Path(run_dir) / "accuracy.csv", "w") as fh:
        fh.write("split,accuracy\n")
        fh.write(f"train,{accuracy(model, data.train)!r}\n")
        fh.write(f"test,{accuracy(model, data.test)!r}\n")
    return [{"epoch": i, "loss": loss} for i, loss in enumerate(result.loss_trace)]


def attack_task(cfg: ConfigNode, run_dir: Path):
    model = load_model(_require(cfg, "checkpoint"))
    data = instantiate(cfg.data)
    res = attack(
        model,
        data.test,
        _constraint_of(cfg.optim),
        steps=cfg.steps,
        seed=cfg.seed,
        optimizer=instantiate(cfg.optim),
    )
    return [
        {
            "sample_index": i,
            "clean_correct": int(res.clean_correct[i]),
            "adv_correct": int(res.adv_correct[i]),
            "criterion_final": float(res.criterion_final[i]),
        }
        for i in range(len(data.test))
    ]


def probe_task(cfg: ConfigNode, run_dir: Path):
    model = load_model(_require(cfg, "checkpoint"))
    target = _require(cfg, "target")
    opt = cfg.optim.fields
    res = probe(model, target, epsilon=opt["epsilon"], steps=cfg.steps, lr=opt["lr"], q=opt["q"], seed=cfg.seed)
    save_arrays(Path(run_dir) / "probe_input.ckpt", {"input": res.input}, {"target": int(target), "seed": cfg.seed})
    rows = []
    for step, logits in enumerate(res.logit_trace):
        row = {"step": step, "target_logit": float(logits[res.target]), "predicted": int(np.argmax(logits))}
        row.update({f"logit_{c}": float(v) for c, v in enumerate(logits)})
        rows.append(row)
    return rows


def curve_task(cfg: ConfigNode):
    data = instantiate(cfg.data)
    named = instantiate(cfg.model)
    eps = float(cfg.optim.fields["epsilon"])
    res = attack(
        named.model,
        data.test,
        _constraint_of(cfg.optim),
        steps=cfg.N,
        seed=cfg.seed,
        optimizer=instantiate(cfg.optim),
    )
    return {"model": named.name, "epsilon": eps, "adv_accuracy": res.adv_accuracy, "seed": cfg.seed}
