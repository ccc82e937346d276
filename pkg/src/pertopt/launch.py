"""Single-run and multirun job launching with self-documenting run directories.

Layout of one launch::

    <output root>/<YYYY-MM-DD_HH-MM-SS>/<job index>/
        config.yaml      fully resolved config, written before the task starts
        overrides.yaml   the override tokens that produced it
        metrics.csv      rows returned by the task
        error.txt        traceback, only if the task raised

The output root is ``$PERTOPT_OUTPUT_ROOT`` if set, else ``./outputs``.
"""

from __future__ import annotations

import csv
import datetime as dt
import inspect
import itertools
import logging
import os
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .config import ConfigError, ConfigNode, Registry, apply_override, default_registry, from_yaml, parse_overrides, to_yaml

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "PERTOPT_OUTPUT_ROOT"
TIMESTAMP_FORMAT = "%Y-%m-%d_%H-%M-%S"


@dataclass
class RunRecord:
    run_dir: Path
    config: ConfigNode
    overrides: list[str]
    seed: int
    job_index: int
    metrics: list[dict] = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def output_root(explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "outputs"))


def _fresh_dir(root: Path, now: dt.datetime | None = None) -> Path:
    stamp = (now or dt.datetime.now()).strftime(TIMESTAMP_FORMAT)
    root.mkdir(parents=True, exist_ok=True)
    for n in itertools.count():
        candidate = root / (stamp if n == 0 else f"{stamp}_{n}")
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            continue


def _format_cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        header = list(rows[0])
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            if list(row) != header:
                raise ValueError(f"metrics row keys {list(row)} differ from header {header}")
            w.writerow([_format_cell(row[k]) for k in header])


def read_metrics(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _as_rows(metrics) -> list[dict]:
    if metrics is None:
        return []
    if isinstance(metrics, dict):
        return [metrics]
    return list(metrics)


def _wants_run_dir(task: Callable) -> bool:
    try:
        params = [
            p
            for p in inspect.signature(task).parameters.values()
            if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD, p.VAR_POSITIONAL)
        ]
    except (TypeError, ValueError):
        return False
    return len(params) >= 2 or any(p.kind == p.VAR_POSITIONAL for p in params)


def resolve_jobs(config: ConfigNode, overrides: Sequence[str] = (), multirun: bool = False, registry: Registry | None = None):
    """Expand overrides into ``(tokens, resolved config)`` pairs in cartesian order.

    The first override varies slowest. All configs are resolved up front, so
    a bad path fails before any job runs.
    """
    registry = registry or default_registry
    specs = parse_overrides(overrides, registry)
    if not multirun:
        for spec in specs:
            if len(spec.values) != 1:
                raise ConfigError(f"override {spec.key} has {len(spec.values)} values; sweeps need multirun")
    jobs = []
    for combo in itertools.product(*(spec.values for spec in specs)):
        cfg = config
        tokens = []
        for spec, value in zip(specs, combo):
            cfg = apply_override(cfg, spec.path, value, registry)
            tokens.append(spec.token(value))
        jobs.append((tokens, cfg))
    return jobs


def launch(
    config: ConfigNode,
    task: Callable,
    overrides: Sequence[str] = (),
    multirun: bool = False,
    parallelism: int = 1,
    output_dir=None,
    registry: Registry | None = None,
) -> list[RunRecord]:
    """Run ``task`` once per resolved config and return records in job order.

    ``task`` receives the resolved config, plus the run directory if it takes
    a second positional argument, and returns a metrics row, a list of rows or
    ``None``. A failing job leaves ``error.txt`` behind; the other jobs still run.
    """
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")
    jobs = resolve_jobs(config, overrides, multirun, registry)
    sweep_dir = _fresh_dir(output_root(output_dir))
    pass_dir = _wants_run_dir(task)

    def run(index: int) -> RunRecord:
        tokens, cfg = jobs[index]
        run_dir = sweep_dir / str(index)
        run_dir.mkdir()
        (run_dir / "config.yaml").write_text(to_yaml(cfg))
        (run_dir / "overrides.yaml").write_text(to_yaml(list(tokens)))
        seed = cfg.fields.get("seed", 0)
        record = RunRecord(run_dir, cfg, list(tokens), seed if isinstance(seed, int) else 0, index)
        try:
            result = task(cfg, run_dir) if pass_dir else task(cfg)
            record.metrics = _as_rows(result)
            write_metrics(run_dir / "metrics.csv", record.metrics)
        except Exception as exc:  # noqa: BLE001 - recorded per job, launch continues
            record.error = f"{type(exc).__name__}: {exc}"
            (run_dir / "error.txt").write_text(traceback.format_exc())
            log.warning("job %d (%s) failed: %s", index, " ".join(tokens) or "no overrides", record.error)
        return record

    if parallelism == 1 or len(jobs) == 1:
        records = [run(i) for i in range(len(jobs))]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(run, range(len(jobs))))
    failed = [r for r in records if not r.ok]
    if failed:
        log.warning("%s", failure_summary(records))
    return records


def failure_summary(records: Sequence[RunRecord]) -> str:
    failed = [r for r in records if not r.ok]
    if not failed:
        return f"all {len(records)} jobs succeeded"
    lines = [f"{len(failed)} of {len(records)} jobs failed:"]
    lines += [f"  job {r.job_index} [{' '.join(r.overrides)}] {r.error} (see {r.run_dir / 'error.txt'})" for r in failed]
    return "\n".join(lines)


def load_run_config(path, registry: Registry | None = None) -> ConfigNode:
    """Read ``config.yaml`` from a run directory (or the file itself)."""
    path = Path(path)
    if path.is_dir():
        path = path / "config.yaml"
    return from_yaml(path.read_text(), registry)


def rerun(path, task: Callable, output_dir=None, registry: Registry | None = None) -> RunRecord:
    """Launch ``task`` again from a saved ``config.yaml``."""
    cfg = load_run_config(path, registry)
    return launch(cfg, task, output_dir=output_dir, registry=registry)[0]
