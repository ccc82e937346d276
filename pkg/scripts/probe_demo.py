"""Concept probing: push Gaussian noise toward a class with sparse l1 Frank-Wolfe steps."""

import argparse

import numpy as np

from pertopt.config import default_registry, instantiate
from pertopt.experiments import StandardTrainer, blob_data, trained_model
from pertopt.solvers import probe


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--target", type=int, default=1)
    ap.add_argument("--epsilon", type=float, default=2.0)
    ap.add_argument("--steps", type=int, default=10)
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()

    data = blob_data(seed=0)
    arch = instantiate(default_registry.builds("pertopt.models.MlpClassifier", partial=True))
    model = trained_model("standard", arch, data, StandardTrainer()).model

    hits = 0
    for seed in range(args.seeds):
        res = probe(model, args.target, epsilon=args.epsilon, steps=args.steps, seed=seed)
        hits += res.success
        start, end = res.logit_trace[0], res.logit_trace[-1]
        print(
            f"seed {seed}: input {np.round(res.input[0], 3)}  target logit {start[args.target]:+.3f} -> {end[args.target]:+.3f}"
            f"  predicted {int(np.argmax(end))}"
        )
    print(f"reached class {args.target} in {hits}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
