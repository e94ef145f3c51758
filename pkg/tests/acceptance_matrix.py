"""Training-run matrix backing the heavyweight acceptance criteria.

Criteria 4-7 need 15 desk-scale training runs (3 seeds x {default scheme,
two ablation schemes, two k=4 alignments}).  This module trains them into a
cache directory, reusing any run whose metrics file already exists, so the
matrix survives interruptions and repeated pytest sessions.

Standalone use (2 parallel workers by default):

    python3 tests/acceptance_matrix.py --cache /path/to/cache
"""
from __future__ import annotations

import argparse
import csv
import os
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from asymstereo import RunConfig

SEEDS = (0, 1, 2)
METRICS_FILE = "val_metrics.csv"


def matrix_configs(cache: Path) -> dict[str, RunConfig]:
    base = RunConfig()  # the default desk-scale config
    cfgs = {}
    for seed in SEEDS:
        cfgs[f"c4_two_phase_s{seed}"] = base.replaced(seed=seed)
        cfgs[f"c5_none_s{seed}"] = base.replaced(
            seed=seed, fusion_scheme="none")
        cfgs[f"c5_g1_to_g2_s{seed}"] = base.replaced(
            seed=seed, fusion_scheme="g1_to_g2")
        cfgs[f"c6_downL_upR_k4_s{seed}"] = base.replaced(seed=seed, k=4)
        cfgs[f"c6_downL_downL_k4_s{seed}"] = base.replaced(
            seed=seed, k=4, degrade_left_for_cat=True)
    return {name: cfg.replaced(out_dir=str(cache / name))
            for name, cfg in cfgs.items()}


@dataclass
class RunInfo:
    name: str
    final_epe: float
    final_d1: float
    final_gt3px: float
    init_epe: float
    checkpoint: Path


def _read_metrics(run_dir: Path) -> dict[str, dict]:
    with open(run_dir / METRICS_FILE, newline="") as fh:
        return {row["which"]: row for row in csv.DictReader(fh)}


def load_run(cache: Path, name: str) -> RunInfo:
    rows = _read_metrics(cache / name)
    return RunInfo(
        name=name,
        final_epe=float(rows["final"]["epe"]),
        final_d1=float(rows["final"]["d1"]),
        final_gt3px=float(rows["final"]["gt3px"]),
        init_epe=float(rows["initial_regression"]["epe"]),
        checkpoint=cache / name / "checkpoint.pkl",
    )


def train_one(cache: Path, name: str) -> RunInfo:
    from asymstereo.train import train_run
    cfg = matrix_configs(cache)[name]
    train_run(cfg, progress_every=500)
    return load_run(cache, name)


def pending_runs(cache: Path) -> list[str]:
    return [name for name in matrix_configs(cache)
            if not (cache / name / METRICS_FILE).exists()]


def ensure_runs(cache: Path, workers: int | None = None,
                quiet: bool = False) -> dict[str, RunInfo]:
    """Train any missing matrix runs (in worker subprocesses), then load all."""
    cache = Path(cache)
    cache.mkdir(parents=True, exist_ok=True)
    todo = pending_runs(cache)
    if todo:
        if workers is None:
            workers = int(os.environ.get("ASTEREO_ACCEPT_WORKERS", "2"))
        if not quiet:
            print(f"[acceptance matrix] training {len(todo)} run(s) with "
                  f"{workers} worker(s); cache: {cache}", flush=True)
        running: list[tuple[str, subprocess.Popen]] = []
        queue = list(todo)
        while queue or running:
            while queue and len(running) < max(1, workers):
                name = queue.pop(0)
                proc = subprocess.Popen(
                    [sys.executable, __file__, "--cache", str(cache),
                     "--one", name],
                    stdout=subprocess.DEVNULL, stderr=subprocess.STDOUT)
                running.append((name, proc))
            time.sleep(2.0)
            still = []
            for name, proc in running:
                code = proc.poll()
                if code is None:
                    still.append((name, proc))
                elif code != 0:
                    raise RuntimeError(f"matrix run {name} failed ({code})")
                elif not quiet:
                    print(f"[acceptance matrix] finished {name}", flush=True)
            running = still
    return {name: load_run(cache, name) for name in matrix_configs(cache)}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--cache", required=True)
    parser.add_argument("--one", help="train a single named run")
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)
    cache = Path(args.cache)
    if args.one:
        train_one(cache, args.one)
        return 0
    infos = ensure_runs(cache, workers=args.workers)
    for name, info in sorted(infos.items()):
        print(f"{name}: final EPE {info.final_epe:.4f} "
              f"(init {info.init_epe:.4f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
