"""Command line entry point: ``pertopt {train,attack,probe,curve} [path=value ...]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .config import ConfigError, to_yaml
from .experiments import attack_config, attack_task, curve_config, curve_task, probe_config, probe_task, train_config, train_task
from .launch import launch, read_metrics, resolve_jobs
from .solvers import CURVE_HEADER

log = logging.getLogger("pertopt")

COMMANDS = {
    "train": (train_config, train_task),
    "attack": (attack_config, attack_task),
    "probe": (probe_config, probe_task),
    "curve": (curve_config, curve_task),
}


def write_curve(records, path: Path) -> int:
    """Merge the metrics of successful curve jobs into one CSV sorted by (model, epsilon)."""
    rows = []
    for r in records:
        if r.ok:
            rows.extend(read_metrics(r.run_dir / "metrics.csv"))
    rows.sort(key=lambda row: (row["model"], float(row["epsilon"])))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CURVE_HEADER) + "\n")
        for row in rows:
            fh.write(",".join(row[k] for k in CURVE_HEADER) + "\n")
    return len(rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pertopt", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("overrides", nargs="*", help="path=value[,value...] config overrides")
    parser.add_argument("-m", "--multirun", action="store_true", help="sweep over comma-separated override values")
    parser.add_argument("--parallelism", type=int, default=1, metavar="N", help="maximum concurrent jobs")
    parser.add_argument("--output-root", default=None, help="defaults to $PERTOPT_OUTPUT_ROOT or ./outputs")
    parser.add_argument("--show-config", action="store_true", help="print the resolved config(s) and exit")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    make_config, task = COMMANDS[args.command]
    root = make_config()
    try:
        if args.show_config:
            for tokens, cfg in resolve_jobs(root, args.overrides, args.multirun):
                print(f"# {' '.join(tokens) or '(no overrides)'}")
                print(to_yaml(cfg), end="")
            return 0
        records = launch(root, task, args.overrides, args.multirun, args.parallelism, args.output_root)
    except (ConfigError, ValueError) as exc:
        print(f"pertopt {args.command}: {exc}", file=sys.stderr)
        return 2
    for r in records:
        status = "ok" if r.ok else f"FAILED ({r.error})"
        print(f"[{r.job_index}] {' '.join(r.overrides) or '(no overrides)'} -> {r.run_dir} {status}")
    if args.command == "curve":
        path = records[0].run_dir.parent / "curve.csv"
        n = write_curve(records, path)
        print(f"curve: {n} rows -> {path}")
    return 0 if all(r.ok for r in records) else 1


if __name__ == "__main__":
    sys.exit(main())
