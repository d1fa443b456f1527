"""Command line entry point: ``selfstop run|sweep|gaps|spectrum``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from ..errors import ConfigError, NumericalError, SelfStopError, ShapeError
from ..metrics import compute_gaps, log_spectrum
from ..stopper import StopConfig, replay
from ..trace import RunTrace
from .config import ExperimentConfig
from .imageio import ImageFormatError, load_image, save_image
from .runner import run_experiment
from .sweep import AXES, ablation_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("selfstop")


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _seeds(text):
    try:
        return [int(s) for s in _csv_list(text)]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {text!r}") from None


def _add_common(p):
    p.add_argument("config", nargs="?", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
    p.add_argument("--output", help="run directory (overrides `output`)")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for independent runs")


def _base_config(args):
    sets = list(args.set)
    if args.output:
        sets.append(f"output={args.output}")
    return ExperimentConfig.build(args.config, sets)


def cmd_run(args) -> int:
    cfg = _base_config(args)
    images = _csv_list(args.images) if args.images else [cfg["image"]]
    seeds = _seeds(args.seeds) if args.seeds else [cfg["seed"]]
    root = Path(cfg["output"])
    jobs = []
    for img in images:
        for s in seeds:
            d = root
            if len(images) > 1:
                d = d / Path(img).stem
            if len(seeds) > 1:
                d = d / f"seed={s}"
            jobs.append((cfg.with_values({"image": img, "seed": s}), d))

    def one(job):
        c, d = job
        out = run_experiment(c, d)
        dec = out.result.decision
        msg = {"run_dir": str(d), "decision": dec.reason, "selected_index": dec.selected_index}
        if out.gaps is not None:
            msg.update(es_pg=out.gaps.es_pg, es_sg=out.gaps.es_sg, baseline_pg=out.gaps.baseline_pg)
        return msg

    if args.jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    for r in results:
        print(json.dumps(r, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _base_config(args)
    seeds = _seeds(args.seeds) if args.seeds else [cfg["seed"]]
    rows = ablation_sweep(cfg, args.axis, _csv_list(args.values), seeds=seeds, jobs=args.jobs)
    print("value,runs,mean_es_pg,std_es_pg,mean_es_sg,std_es_sg")
    for r in rows:
        print(",".join(str(v) for v in r))
    return EXIT_OK


def cmd_gaps(args) -> int:
    trace = RunTrace.from_csv(args.trace)
    if args.detected is not None:
        detected = args.detected
    else:
        scores = trace.column("ae_loss")
        stop = StopConfig(window=args.window, patience=args.patience, max_iters=max(len(scores), args.window + 1))
        detected = replay(scores, stop).selected_index
    print(json.dumps(compute_gaps(trace, detected).to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_spectrum(args) -> int:
    spec = log_spectrum(load_image(args.image))
    out = args.out or str(Path(args.image).with_suffix("")) + "_spectrum.png"
    save_image(spec, out)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="selfstop", description="Autoencoder-based early stopping for image priors")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment (or a seed/image grid)")
    _add_common(p)
    p.add_argument("--images", help="comma-separated image paths or phantom names")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="one-axis ablation sweep")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=sorted(AXES))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gaps", help="detection gaps of a recorded trace.csv")
    p.add_argument("trace")
    p.add_argument("--detected", type=int, help="detected iteration; default replays the stop rule")
    p.add_argument("--window", type=int, default=256)
    p.add_argument("--patience", type=int, default=500)
    p.set_defaults(fn=cmd_gaps)

    p = sub.add_parser("spectrum", help="write the log-magnitude spectrum of an image")
    p.add_argument("image")
    p.add_argument("-o", "--out")
    p.set_defaults(fn=cmd_spectrum)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except NumericalError as exc:
        print(f"selfstop: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ShapeError, ImageFormatError, FileNotFoundError) as exc:
        print(f"selfstop: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SelfStopError as exc:
        print(f"selfstop: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
