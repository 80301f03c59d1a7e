"""NestedLoRA vs the unbiased NeuralEF baseline on a PSD matrix across training budgets."""

from __future__ import annotations

import argparse

import numpy as np

from nestsvd import experiment as xp
from nestsvd import training as tr


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--budgets", type=int, nargs="+", default=[100, 300, 1000, 20000])
    p.add_argument("--seeds", type=int, default=3)
    args = p.parse_args()
    raw = {"problem": {"kind": "matrix", "random": {"rows": 8, "cols": 6, "seed": 0}, "evd": True}, "modes": 3}
    print(f"{'budget':>7} {'method':>11} {'mean max-angle':>15} {'mean max-rel-err %':>19}")
    for budget in args.budgets:
        for method in ("nestedlora", "neuralef"):
            angles, errs = [], []
            for seed in range(args.seeds):
                cfg = xp.resolve_config({**raw, "method": method, "train": {"iterations": budget}}, seed=seed)
                exp = xp.build_experiment(cfg)
                res = tr.train(exp.train_config, exp.objective, exp.sampler)
                rep = xp.evaluate(cfg, res.ema_params, exp.objective.specs)
                angles.append(max(rep.angle_distances))
                errs.append(max(rep.relative_errors))
            print(f"{budget:7d} {method:>11} {np.mean(angles):15.2e} {np.mean(errs):19.3e}")


if __name__ == "__main__":
    main()
