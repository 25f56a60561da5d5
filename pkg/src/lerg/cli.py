"""Command-line entry point: ``lerg --config run.cfg --stage all --out runs/x``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from .binio import ArtifactError
from .config import ConfigError, load_config
from .graph import DatasetError
from .pipeline import STAGES, MissingArtifact, Pipeline


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lerg", description=__doc__)
    ap.add_argument("--config", required=True, help="key = value config file")
    ap.add_argument("--stage", default="all", choices=STAGES + ("all",))
    ap.add_argument("--out", default="runs/default", help="artifact directory")
    ap.add_argument("--seed", type=int, default=None, help="overrides every seed in the config")
    ap.add_argument("--dry-run", action="store_true", help="list file accesses without running")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _thread_limit():
    n = os.environ.get("LERG_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def run_stage(stage: str, config_path, out, seed: int | None = None, dry_run: bool = False) -> int:
    cfg = load_config(config_path)
    if seed is not None:
        if seed < 0 or seed >= 2**64:
            raise ConfigError("seed must fit in u64")
        cfg.override_seed(seed)
    pipe = Pipeline(cfg, Path(out))
    if dry_run:
        print(pipe.describe(stage))
        return 0
    pipe.out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(pipe.out / ".lock"))
    try:
        with lock.acquire(timeout=0), _thread_limit():
            pipe.run(stage)
    except Timeout:
        raise RuntimeError(f"another stage is running in {pipe.out}")
    if stage in ("all", "report", "eval"):
        print(f"config {pipe.config_hash}: artifacts in {pipe.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return run_stage(args.stage, args.config, args.out, args.seed, args.dry_run)
    except (ConfigError, MissingArtifact, ArtifactError, DatasetError, RuntimeError) as exc:
        print(f"lerg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
