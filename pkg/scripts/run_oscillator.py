"""Shifted 2D harmonic oscillator: modes past the positive spectrum should shrink to zero."""

from __future__ import annotations

import numpy as np
from _common import load, parser, run_and_summarize

from nestsvd import experiment as xp


def main():
    args = parser(__doc__, "oscillator.json").parse_args()
    cfg = load(args)
    report = run_and_summarize(cfg)
    truth, _ = xp.truth_spectrum(cfg)
    norms = np.sqrt(np.clip(report.norm_spectrum, 0, None))
    for i, (t, n) in enumerate(zip(truth, norms)):
        tag = "kept" if t > 0 else "pruned"
        print(f"mode {i}: shifted eigenvalue {t:+.1f}, ||f|| = {n:.4f} ({tag})")


if __name__ == "__main__":
    main()
