"""Shared helpers for the experiment scripts."""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from nestsvd import experiment as xp

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def parser(description: str, config: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", default=str(CONFIGS / config))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None, help="override train.iterations")
    p.add_argument("--out", default=None)
    return p


def load(args, **overrides):
    cfg, _ = xp.load_config_file(args.config, args.seed, args.out)
    if args.iterations is not None:
        cfg["train"]["iterations"] = args.iterations
    for key, value in overrides.items():
        cfg[key] = value
    return cfg


def run_and_summarize(cfg) -> xp.ev.EvalReport:
    truth, _ = xp.truth_spectrum(cfg)
    start = time.perf_counter()
    report, _ = xp.run_experiment(cfg, cfg["output_dir"])
    print(f"{cfg['problem']['kind']}: {cfg['train']['iterations']} iterations in {time.perf_counter() - start:.1f} s")
    print(f"{'mode':>4} {'truth':>10} {'estimate':>10} {'norm':>10} {'angle':>8}")
    for i, t in enumerate(truth):
        print(f"{i:4d} {t:10.5f} {report.eigenvalue_estimates[i]:10.5f} "
              f"{report.norm_spectrum[i]:10.5f} {report.angle_distances[i]:8.4f}")
    print(f"orthogonality error {report.orthogonality_error:.3e}; "
          f"group subspace distances {np.round(report.subspace_distances, 4).tolist()}")
    print(f"artifacts in {cfg['output_dir']}")
    return report
