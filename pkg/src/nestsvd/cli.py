"""Command-line entry point: ``nestsvd run|oracle|gradcheck <config.json>``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import experiment as xp
from .errors import InputError, NumericalError, TrainingAborted

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nestsvd", description="Learn top singular/eigen functions with nested LoRA.")
    p.add_argument("command", choices=("run", "oracle", "gradcheck"))
    p.add_argument("config", help="experiment config (JSON)")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    p.add_argument("--threads", type=int, default=None, help="evaluation workers (default $NESTSVD_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _write_csv(path: Path, rows: list[dict]):
    if not rows:
        path.write_text("")
        return
    fields = list(rows[0])
    for r in rows[1:]:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _config_failure(path, text, exc) -> int:
    line = xp.error_line(text, getattr(exc, "key", None)) if text else None
    where = f"{path}:{line}" if line else str(path)
    print(f"config error: {where}: {exc}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_run(args) -> int:
    try:
        cfg, _ = xp.load_config_file(args.config, args.seed, args.out)
    except InputError as exc:
        return _config_failure(args.config, _read(args.config), exc)
    out = Path(cfg["output_dir"])
    try:
        report, _ = xp.run_experiment(cfg, out, args.threads)
    except TrainingAborted as exc:
        print(f"training aborted: {exc} {exc.report}", file=sys.stderr)
        return EXIT_ABORT
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        cfg, _ = xp.load_config_file(args.config, args.seed, args.out)
        spectrum, functions = xp.oracle_tables(cfg)
    except InputError as exc:
        return _config_failure(args.config, _read(args.config), exc)
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "spectrum.csv", spectrum)
    _write_csv(out / "functions.csv", functions)
    for row in spectrum:
        print(f"{row['mode']}\t{row['value']!r}\tgroup {row['group_id']}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    try:
        cfg, _ = xp.load_config_file(args.config, args.seed, args.out)
        res = xp.gradcheck(cfg, args.threads)
    except InputError as exc:
        return _config_failure(args.config, _read(args.config), exc)
    except NumericalError as exc:
        print(f"gradcheck failed: {exc}", file=sys.stderr)
        return EXIT_GRADCHECK
    print(f"checked {res.checked} parameters; max relative error {res.max_rel_error:.3e}")
    if not res.passed:
        print(f"gradcheck failed at model '{res.worst_model}' parameter index {res.worst_index}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError:
        return ""


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None:
        os.environ["NESTSVD_THREADS"] = str(args.threads)
    if not Path(args.config).exists():
        print(f"config error: {args.config}: file not found", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"run": cmd_run, "oracle": cmd_oracle, "gradcheck": cmd_gradcheck}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
