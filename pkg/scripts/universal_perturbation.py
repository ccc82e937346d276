"""One shared perturbation for a whole dataset, and the matching min-max training.

Compares the accuracy drop from an optimized universal l2 perturbation with a
random one of the same norm, then trains against a universal adversary.
"""

import argparse

import numpy as np

from pertopt.data import LabeledBatch
from pertopt.experiments import StandardTrainer, blob_data
from pertopt.models import accuracy, init_model
from pertopt.optim import ConstraintSet, SGDConfig
from pertopt.solvers import SolveSpec, solve_distributional, solve_universal


def shifted(batch, delta):
    return LabeledBatch(batch.inputs + delta, batch.targets)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epsilon", type=float, default=0.5)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = blob_data(seed=args.seed)
    model = init_model([2, 32, 2], seed=args.seed)
    StandardTrainer().fit(model, data)
    spec = SolveSpec(steps=args.epochs, lr=0.1, constraint=ConstraintSet(2, args.epsilon), normalize_grad=True, seed=args.seed)

    res = solve_universal(model, data.train_batches, spec)
    rnd = np.random.default_rng(args.seed).standard_normal(res.delta.shape)
    rnd *= np.linalg.norm(res.delta) / np.linalg.norm(rnd)
    print(f"clean test accuracy      {accuracy(model, data.test):.3f}")
    print(f"random delta  |d|={np.linalg.norm(rnd):.3f}   {accuracy(model, shifted(data.test, rnd)):.3f}")
    print(f"universal delta {np.round(res.delta[0], 3)}   {accuracy(model, shifted(data.test, res.delta)):.3f}")

    fresh = init_model([2, 32, 2], seed=args.seed)
    out = solve_distributional(fresh, data.train_batches, spec, SGDConfig(0.1, 0.9), epochs=20)
    final = out.delta_trace[-1]
    print(f"min-max trained model: clean {accuracy(fresh, data.test):.3f}, under its adversary {accuracy(fresh, shifted(data.test, final)):.3f}")
    fresh_res = solve_universal(fresh, data.train_batches, spec)
    print(f"fresh universal attack on it: {accuracy(fresh, shifted(data.test, fresh_res.delta)):.3f}")


if __name__ == "__main__":
    main()
