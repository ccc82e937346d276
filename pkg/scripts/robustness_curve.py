"""Standard vs adversarially trained MLPs on the fragile blobs, attacked at growing l2 budgets.

    python scripts/robustness_curve.py --seeds 0 1 2 3 4 --out curve.csv
"""

import argparse

import numpy as np

from pertopt.config import default_registry, instantiate
from pertopt.experiments import RobustTrainer, StandardTrainer, blob_data, trained_model
from pertopt.solvers import robustness_curve, write_curve_csv

EPSILONS = [0.0, 0.25, 0.5, 1.0, 2.0]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--epsilons", type=float, nargs="+", default=EPSILONS)
    ap.add_argument("--steps", type=int, default=20, help="attack steps")
    ap.add_argument("--train-epsilon", type=float, default=0.5)
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    arch = instantiate(default_registry.builds("pertopt.models.MlpClassifier", partial=True))
    points = []
    for seed in args.seeds:
        data = blob_data(seed=seed)
        trainers = {"standard": StandardTrainer(), "robust": RobustTrainer(epsilon=args.train_epsilon)}
        models = {name: trained_model(name, arch, data, t, seed=seed).model for name, t in trainers.items()}
        points += robustness_curve(models, data.test, args.epsilons, steps=args.steps, seed=seed)

    print(f"{'epsilon':>8}  {'standard':>9}  {'robust':>9}")
    for eps in args.epsilons:
        row = [np.mean([p.adv_accuracy for p in points if p.model == m and p.epsilon == eps]) for m in ("standard", "robust")]
        print(f"{eps:8.2f}  {row[0]:9.3f}  {row[1]:9.3f}")
    if args.out:
        write_curve_csv(points, args.out)
        print(f"wrote {len(points)} rows to {args.out}")


if __name__ == "__main__":
    main()
