"""Matrix SVD with tabular models under each mask mode."""

from __future__ import annotations

from _common import load, parser, run_and_summarize


def main():
    p = parser(__doc__, "matrix_svd.json")
    p.add_argument("--masks", nargs="+", default=["joint", "sequential", "none"])
    args = p.parse_args()
    for mode in args.masks:
        cfg = load(args)
        cfg["masks"] = {"mode": mode, "weights": None}
        cfg["output_dir"] = f"{cfg['output_dir']}/{mode}"
        print(f"--- masks = {mode}")
        run_and_summarize(cfg)


if __name__ == "__main__":
    main()
