"""Discrete canonical dependence kernel: the binary pmf plus seeded random pmfs."""

from __future__ import annotations

from _common import load, parser, run_and_summarize

from nestsvd import experiment as xp


def main():
    p = parser(__doc__, "cdk_binary.json")
    p.add_argument("--random-seeds", type=int, nargs="*", default=[1, 2, 3])
    p.add_argument("--shape", type=int, nargs=2, default=[8, 6])
    args = p.parse_args()
    run_and_summarize(load(args))
    for s in args.random_seeds:
        raw = {"problem": {"kind": "discrete_cdk", "random": {"rows": args.shape[0], "cols": args.shape[1], "seed": s}},
               "modes": 3, "train": {"iterations": args.iterations or 5000},
               "output_dir": f"{args.out or 'runs'}/cdk_random_{s}"}
        run_and_summarize(xp.resolve_config(raw, seed=args.seed))


if __name__ == "__main__":
    main()
