"""Command-line entry point: ``slowfast-vr run`` and ``slowfast-vr list-experiments``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .experiments import (
    ConfigError,
    OutputError,
    default_jobs,
    emit_csv,
    iter_bundled,
    load_configs,
    run_experiment,
)
from .micro import NumericalBlowupError
from .models import ModelError, UnsupportedModelError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BLOWUP = 2
EXIT_IO = 3

log = logging.getLogger("slowfast_vr")


def _resolve_config(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    stem = name[:-5] if name.endswith(".json") else name
    for bundled, path in iter_bundled():
        if bundled == stem:
            return path
    raise ConfigError(f"no config file or bundled experiment named {name!r}")


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slowfast-vr", description="Variance-reduced HMM experiments for slow-fast SDEs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True, help="config file, bundled experiment name, or a .meta.json sidecar")
    run.add_argument("--out", help="output CSV (single run) or directory (multi-run config)")
    run.add_argument("--jobs", type=_positive, help="worker processes (default: $SLOWFAST_VR_JOBS or 1)")
    run.add_argument("--seed", type=_seed, help="override master_seed")

    sub.add_parser("list-experiments", help="list bundled experiment configs")
    return parser


def _outputs(configs, out):
    if len(configs) == 1:
        cfg = configs[0]
        if out is not None:
            return [Path(out)]
        return [Path(cfg.raw.get("output") or f"{cfg.name}.csv")]
    base = Path(out) if out is not None else Path(".")
    return [base / f"{cfg.name}.csv" for cfg in configs]


def cmd_run(args) -> int:
    configs = load_configs(_resolve_config(args.config))
    if args.seed is not None:
        configs = [c.with_seed(args.seed) for c in configs]
    jobs = args.jobs if args.jobs is not None else default_jobs()
    for cfg, path in zip(configs, _outputs(configs, args.out)):
        log.info("running %s (%s, %d realizations)", cfg.name, cfg.kind, cfg.realizations)
        table = run_experiment(cfg, jobs=jobs)
        for written in emit_csv(table, path):
            print(written)
    return EXIT_OK


def cmd_list(args) -> int:
    for name, path in iter_bundled():
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            doc = {}
        runs = doc.get("runs")
        n = f"{len(runs)} runs" if runs else "1 run"
        print(f"{name:8s} {n:8s} {doc.get('description', '')}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handler = cmd_run if args.command == "run" else cmd_list
    try:
        return handler(args)
    except (ConfigError, ModelError, UnsupportedModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalBlowupError as exc:
        print(f"numerical blowup: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except OutputError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
