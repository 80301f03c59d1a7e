"""2D hydrogen atom: first two shells (4 modes) with an MLP and Fourier features."""

from __future__ import annotations

from _common import load, parser, run_and_summarize


def main():
    args = parser(__doc__, "hydrogen.json").parse_args()
    run_and_summarize(load(args))


if __name__ == "__main__":
    main()
