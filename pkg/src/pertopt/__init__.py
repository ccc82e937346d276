"""Constrained data-perturbation solvers on a small reverse-mode autodiff core,
plus config generation, override sweeps and reproducible run directories."""

from .autodiff import Tensor, backward, cross_entropy, finite_difference_gradient, no_grad
from .config import MISSING, ConfigNode, builds, from_yaml, instantiate, make_config, parse_overrides, register_component, to_yaml
from .data import LabeledBatch
from .launch import RunRecord, launch
from .models import MlpClassifier, accuracy, init_model, predict, standard_train
from .optim import SGD, ConstraintSet, L1qFrankWolfe, L2ProjectedGradient, ProjectedGradient, project
from .perturbations import AdditivePerturbation, UniversalPerturbation, init_perturbation
from .solvers import (
    RobustnessPoint,
    SolveSpec,
    attack,
    probe,
    robust_train,
    robustness_curve,
    solve_distributional,
    solve_perturbation,
    solve_universal,
)

from . import experiments  # noqa: E402,F401 - registers the default components

__version__ = "0.1.0"
