"""Perturbation solvers: attacks, probes, universal perturbations and robust training.

Every solver minimizes its criterion. Attacks therefore pass the negated
loss (:func:`adversarial_criterion`); probes pass the plain loss toward the
class they want to elicit (:func:`probe_criterion`).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import LabeledBatch
from .models import TrainResult, frozen, predictions, standard_train
from .optim import ConstraintSet, L1qFrankWolfe, ProjectedGradient, SGDConfig
from .perturbations import PER_SAMPLE, UNIVERSAL, UniversalPerturbation, init_perturbation


def adversarial_criterion(logits: Tensor, targets) -> Tensor:
    return -ad.cross_entropy(logits, targets)


def probe_criterion(logits: Tensor, targets) -> Tensor:
    return ad.cross_entropy(logits, targets)


class SolverDivergedError(FloatingPointError):
    pass


@dataclass
class SolveSpec:
    """Everything a perturbation solve needs besides the model and the data.

    ``method`` is ``"pgd"`` (inner SGD then projection onto ``constraint``) or
    ``"frank-wolfe"`` (top-q l1 vertex oracle, ``constraint.p`` must be 1).
    """

    steps: int = 10
    lr: float = 0.1
    constraint: ConstraintSet = field(default_factory=lambda: ConstraintSet(p=2, epsilon=1.0, per_sample=True))
    criterion: Callable[[Tensor, np.ndarray], Tensor] = adversarial_criterion
    method: str = "pgd"
    normalize_grad: bool = False
    momentum: float = 0.0
    q: float = 0.05
    kind: str = PER_SAMPLE
    init: str = "zeros"
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.method not in ("pgd", "frank-wolfe"):
            raise ValueError(f"unknown method {self.method!r}")

    def make_optimizer(self, params):
        c = self.constraint
        if self.method == "frank-wolfe":
            if c.p != 1.0:
                raise ValueError("frank-wolfe needs an l1 constraint")
            return L1qFrankWolfe(params, epsilon=c.epsilon, lr=self.lr, q=self.q, per_sample=c.per_sample)
        return ProjectedGradient(
            params,
            epsilon=c.epsilon,
            p=c.p,
            normalize_grad=self.normalize_grad,
            per_sample=c.per_sample,
            lr=self.lr,
            momentum=self.momentum,
        )


@dataclass
class SolveResult:
    perturbation: object
    trace: list[float]  # criterion at the start and after every step

    @property
    def delta(self) -> np.ndarray:
        return self.perturbation.delta.data

    @property
    def final_criterion(self) -> float:
        return self.trace[-1]


def _evaluate(model, perturbation, batch: LabeledBatch, criterion) -> float:
    with ad.no_grad():
        return criterion(model(perturbation(batch.inputs)), batch.targets).item()


def _descend(model, perturbation, opt, batch: LabeledBatch, criterion, step: int) -> float:
    obj = criterion(model(perturbation(batch.inputs)), batch.targets)
    value = obj.item()
    if not math.isfinite(value):
        raise SolverDivergedError(f"non-finite criterion {value} at step {step}")
    opt.zero_grad()
    ad.backward(obj)
    opt.step()
    return value


def solve_perturbation(model, batch: LabeledBatch, spec: SolveSpec, optimizer=None) -> SolveResult:
    """Run ``spec.steps`` rounds of perturb -> criterion -> backward -> step.

    The model is frozen for the whole solve. ``optimizer`` optionally
    replaces ``spec.make_optimizer`` with any ``params -> optimizer`` factory.
    With several restarts, restart ``r > 0`` starts uniformly inside the ball
    (seed ``spec.seed + r``) and the run with the lowest final criterion wins.
    """
    make_opt = optimizer or spec.make_optimizer
    best = None
    with frozen(model):
        for r in range(spec.restarts):
            init = spec.init if r == 0 else "uniform-in-ball"
            pert = init_perturbation(spec.kind, batch.inputs.shape, init, spec.constraint, spec.seed + r)
            opt = make_opt(pert.parameters())
            trace = []
            for i in range(spec.steps):
                trace.append(_descend(model, pert, opt, batch, spec.criterion, i))
            final = _evaluate(model, pert, batch, spec.criterion)
            if not math.isfinite(final):
                raise SolverDivergedError(f"non-finite criterion {final} at step {spec.steps}")
            trace.append(final)
            if best is None or final < best.final_criterion:
                best = SolveResult(pert, trace)
    return best


def per_sample_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(targets)), targets]


@dataclass
class AttackResult:
    adv_inputs: np.ndarray
    clean_correct: np.ndarray
    adv_correct: np.ndarray
    criterion_final: np.ndarray  # per-sample negative cross-entropy at the final perturbation
    trace: list[float]

    @property
    def flipped(self) -> np.ndarray:
        return self.clean_correct & ~self.adv_correct

    @property
    def clean_accuracy(self) -> float:
        return float(np.mean(self.clean_correct))

    @property
    def adv_accuracy(self) -> float:
        return float(np.mean(self.adv_correct))


def attack(
    model,
    batch: LabeledBatch,
    constraint: ConstraintSet | None = None,
    steps: int = 10,
    lr: float = 0.1,
    normalize_grad: bool = True,
    restarts: int = 1,
    seed: int = 0,
    optimizer=None,
) -> AttackResult:
    """l2-projected gradient attack maximizing cross-entropy, one ball per sample."""
    if constraint is None:
        constraint = ConstraintSet(p=2, epsilon=1.0, per_sample=True)
    spec = SolveSpec(
        steps=steps,
        lr=lr,
        constraint=constraint,
        criterion=adversarial_criterion,
        normalize_grad=normalize_grad,
        restarts=restarts,
        seed=seed,
    )
    result = solve_perturbation(model, batch, spec, optimizer=optimizer)
    adv = batch.inputs + result.delta
    with ad.no_grad():
        adv_logits = model(adv).data
    clean_pred = predictions(model, batch.inputs)
    return AttackResult(
        adv_inputs=adv,
        clean_correct=clean_pred == batch.targets,
        adv_correct=np.argmax(adv_logits, axis=1) == batch.targets,
        criterion_final=-per_sample_cross_entropy(adv_logits, batch.targets),
        trace=result.trace,
    )


@dataclass
class ProbeResult:
    input: np.ndarray
    logit_trace: np.ndarray  # [steps + 1 x classes]
    target: int

    @property
    def target_logits(self) -> np.ndarray:
        return self.logit_trace[:, self.target]

    @property
    def success(self) -> bool:
        return int(np.argmax(self.logit_trace[-1])) == self.target


def probe(
    model,
    target: int,
    epsilon: float = 2.0,
    steps: int = 10,
    lr: float = 1.0,
    q: float = 0.05,
    noise=None,
    seed: int = 0,
) -> ProbeResult:
    """Perturb seeded Gaussian noise toward ``target`` with l1q Frank-Wolfe."""
    classes = model.classes
    if not 0 <= int(target) < classes or int(target) != target:
        raise ValueError(f"target class {target!r} outside [0, {classes})")
    target = int(target)
    if noise is None:
        noise = np.random.default_rng(seed).standard_normal((1, model.d_in))
    noise = np.asarray(noise, dtype=np.float64)
    batch = LabeledBatch(noise, np.full(noise.shape[0], target))
    constraint = ConstraintSet(p=1, epsilon=epsilon, per_sample=True)
    pert = init_perturbation(PER_SAMPLE, noise.shape, "zeros")
    logits = []
    with frozen(model):
        opt = L1qFrankWolfe(pert.parameters(), epsilon=constraint.epsilon, lr=lr, q=q, per_sample=True)
        for i in range(steps):
            with ad.no_grad():
                logits.append(model(pert(noise)).data[0].copy())
            _descend(model, pert, opt, batch, probe_criterion, i)
        with ad.no_grad():
            logits.append(model(pert(noise)).data[0].copy())
    return ProbeResult(noise + pert.delta.data, np.array(logits), target)


@dataclass
class UniversalResult:
    perturbation: UniversalPerturbation
    trace: list[float]  # per minibatch step, then the final dataset mean

    @property
    def delta(self) -> np.ndarray:
        return self.perturbation.delta.data


def solve_universal(model, dataset: Sequence[LabeledBatch], spec: SolveSpec, optimizer=None) -> UniversalResult:
    """One shared delta, one step per minibatch, ``spec.steps`` passes over the data."""
    if not dataset:
        raise ValueError("dataset is empty")
    spec = replace(spec, kind=UNIVERSAL)
    make_opt = optimizer or spec.make_optimizer
    pert = init_perturbation(UNIVERSAL, dataset[0].inputs.shape, spec.init, spec.constraint, spec.seed)
    trace = []
    with frozen(model):
        opt = make_opt(pert.parameters())
        for epoch in range(spec.steps):
            for batch in dataset:
                trace.append(_descend(model, pert, opt, batch, spec.criterion, len(trace)))
        weights = np.array([len(b) for b in dataset], dtype=np.float64)
        values = np.array([_evaluate(model, pert, b, spec.criterion) for b in dataset])
        trace.append(float(np.sum(weights * values) / np.sum(weights)))
    return UniversalResult(pert, trace)


def robust_train(
    model,
    dataset: Sequence[LabeledBatch],
    inner: SolveSpec,
    outer: SGDConfig = SGDConfig(),
    epochs: int = 1,
) -> TrainResult:
    """Adversarial training: attack each batch with the model frozen, then step on the attacked batch."""

    def attacked_inputs(m, batch):
        return batch.inputs + solve_perturbation(m, batch, inner).delta

    return standard_train(model, dataset, outer, epochs, transform=attacked_inputs)


@dataclass
class DistributionalResult:
    model: object
    perturbation: UniversalPerturbation
    params_trace: list[list[np.ndarray]]  # model parameters after every outer step
    delta_trace: list[np.ndarray]  # delta after every ascent step
    loss_trace: list[float]


def solve_distributional(
    model,
    dataset: Sequence[LabeledBatch],
    spec: SolveSpec,
    outer: SGDConfig = SGDConfig(),
    epochs: int = 1,
    loss_fn: Callable[[Tensor, np.ndarray], Tensor] = ad.cross_entropy,
) -> DistributionalResult:
    """Alternating descent-ascent on one distribution-level delta and the model.

    For every minibatch: one ascent step on the universal delta (model frozen,
    criterion ``-loss_fn``), then one descent step on the model at the updated
    delta.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if not dataset:
        raise ValueError("dataset is empty")
    spec = replace(spec, kind=UNIVERSAL)
    pert = init_perturbation(UNIVERSAL, dataset[0].inputs.shape, spec.init, spec.constraint, spec.seed)
    delta_opt = spec.make_optimizer(pert.parameters())
    model_opt = outer.build(model.parameters())

    def ascent_criterion(out, targets):
        return -loss_fn(out, targets)

    params_trace, delta_trace, losses = [], [], []
    for epoch in range(epochs):
        for batch in dataset:
            with frozen(model):
                _descend(model, pert, delta_opt, batch, ascent_criterion, len(losses))
            delta_trace.append(pert.delta.data.copy())
            loss = loss_fn(model(pert(batch.inputs)), batch.targets)
            value = loss.item()
            if not math.isfinite(value):
                raise SolverDivergedError(f"non-finite loss {value} in epoch {epoch}")
            model_opt.zero_grad()
            pert.delta.grad = None
            ad.backward(loss)
            model_opt.step()
            pert.delta.grad = None
            losses.append(value)
            params_trace.append([p.data.copy() for p in model.parameters()])
    return DistributionalResult(model, pert, params_trace, delta_trace, losses)


@dataclass(frozen=True)
class RobustnessPoint:
    model: str
    epsilon: float
    adv_accuracy: float
    seed: int


CURVE_HEADER = ("model", "epsilon", "adv_accuracy", "seed")


def robustness_curve(
    models: dict,
    dataset: LabeledBatch,
    epsilons: Sequence[float],
    steps: int = 20,
    lr: float = 0.1,
    normalize_grad: bool = True,
    seed: int = 0,
    parallelism: int = 1,
) -> list[RobustnessPoint]:
    """Adversarial accuracy of every named model at every l2 budget."""
    eps = [float(e) for e in epsilons]
    if any(b < a for a, b in zip(eps, eps[1:])):
        raise ValueError(f"epsilons must be sorted ascending, got {eps}")
    cells = [(name, e) for name in models for e in eps]

    def run(cell, isolate=False):
        name, e = cell
        # frozen() toggles flags on the parameters, so concurrent cells need their own copy
        model = models[name].copy() if isolate else models[name]
        res = attack(
            model,
            dataset,
            ConstraintSet(p=2, epsilon=e, per_sample=True),
            steps=steps,
            lr=lr,
            normalize_grad=normalize_grad,
            seed=seed,
        )
        return RobustnessPoint(name, e, res.adv_accuracy, seed)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(lambda c: run(c, isolate=True), cells))
    return [run(c) for c in cells]


def write_curve_csv(points: Sequence[RobustnessPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for pt in points:
            w.writerow([pt.model, repr(pt.epsilon), repr(pt.adv_accuracy), pt.seed])


def read_curve_csv(path) -> list[RobustnessPoint]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [RobustnessPoint(r["model"], float(r["epsilon"]), float(r["adv_accuracy"]), int(r["seed"])) for r in rows]
