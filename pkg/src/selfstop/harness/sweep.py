"""One-axis ablation sweeps over (value, seed) grids."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .config import ExperimentConfig, format_value, parse_value
from .runner import run_experiment

log = logging.getLogger(__name__)

AXES = {
    "patience": "stop.patience",
    "window": "stop.window",
    "lr_generator": "generator.lr",
    "lr_ae": "ae.lr",
}
SUMMARY_COLUMNS = ("value", "runs", "mean_es_pg", "std_es_pg", "mean_es_sg", "std_es_sg")


@dataclass
class SweepRow:
    value: object
    es_pg: list
    es_sg: list

    def summary(self) -> tuple:
        pg, sg = np.asarray(self.es_pg, float), np.asarray(self.es_sg, float)
        return (self.value, len(pg), float(pg.mean()), float(pg.std()), float(sg.mean()), float(sg.std()))


def _coerce(axis, values):
    key = AXES[axis]
    return [parse_value(key, v) if isinstance(v, str) else v for v in values]


def ablation_sweep(base: ExperimentConfig, axis: str, values, seeds=(0,), out_dir=None, jobs: int = 1) -> list[tuple]:
    """Run ``base`` once per (value, seed) and summarise ES gaps per value.

    Runs go to ``out_dir/<axis>=<value>/seed=<seed>``; ``summary.csv`` holds
    one row per value. ``jobs`` > 1 runs experiments on worker threads.
    """
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {tuple(AXES)}")
    values = list(dict.fromkeys(_coerce(axis, values)))
    if not values:
        raise ConfigError("sweep needs at least one value")
    if base["image"] is None:
        raise ConfigError("sweeps report gaps and need a ground-truth image")
    out_dir = Path(out_dir if out_dir is not None else base["output"])
    key = AXES[axis]
    tasks = []
    for v in values:
        for s in seeds:
            cfg = base.with_values({key: v, "seed": int(s)})
            tasks.append((v, s, cfg, out_dir / f"{axis}={format_value(v)}" / f"seed={s}"))

    def one(task):
        v, s, cfg, d = task
        log.info("sweep %s=%s seed=%s", axis, v, s)
        return run_experiment(cfg, d).gaps

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            gaps = list(pool.map(one, tasks))
    else:
        gaps = [one(t) for t in tasks]

    rows = {}
    for (v, _, _, _), g in zip(tasks, gaps):
        row = rows.setdefault(v, SweepRow(v, [], []))
        row.es_pg.append(g.es_pg)
        row.es_sg.append(g.es_sg)
    summary = [rows[v].summary() for v in values]
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.csv", "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in summary:
            w.writerow([format_value(r[0]), r[1], *(repr(x) for x in r[2:])])
    return summary
