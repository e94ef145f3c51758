"""Command-line entry points.

Commands: ``train``, ``eval``, ``ablate``, ``analyze-distortion``,
``export-plots``.  Exit codes: 0 success, 1 usage error, 2 runtime error.
``ASTEREO_DATA_DIR`` supplies a default dataset root for ``eval``.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import RunConfig
from .errors import ParameterError


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; this CLI uses 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _parse_k_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ParameterError(f"bad k list {text!r}; expected e.g. '1,2,4'")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replaced(seed=args.seed)
    if args.out:
        cfg = cfg.replaced(out_dir=args.out)
    return cfg


def _cmd_train(args) -> int:
    from .train import train_run
    result = train_run(_load_config(args), progress_every=args.progress_every)
    print(f"checkpoint: {result.checkpoint}")
    print(f"val EPE {result.final_val.epe:.4f}  D1 {result.final_val.d1:.4f}  "
          f">3px {result.final_val.gt3px:.4f}  "
          f"(initial regression EPE {result.init_val.epe:.4f})")
    return 0


def _eval_samples(args, cfg):
    data_root = args.data or os.environ.get("ASTEREO_DATA_DIR")
    if data_root:
        from .stereo_io import list_samples, load_sample
        split = args.split
        ids = list_samples(data_root, split)
        return [load_sample(data_root, split, sid) for sid in ids]
    from .train import build_dataset
    return build_dataset(cfg, "val")


def _cmd_eval(args) -> int:
    from .train import eval_sweep, restore_model, write_rows_csv
    model, cfg = restore_model(args.checkpoint)
    samples = _eval_samples(args, cfg)
    rows = eval_sweep(model, cfg, _parse_k_list(args.k_list), samples)
    out = Path(args.out or Path(args.checkpoint).parent)
    write_rows_csv(rows, out / "eval_sweep.csv")
    print(f"wrote {out / 'eval_sweep.csv'}")
    for row in rows:
        print(f"k={row['k']}: EPE {row['epe']:.4f}  D1 {row['d1']:.4f}  "
              f">3px {row['gt3px']:.4f}")
    return 0


def _cmd_ablate(args) -> int:
    from .train import run_ablation
    cfg = _load_config(args)
    out = Path(args.out or cfg.out_dir)
    rows = run_ablation(cfg, args.axis, out,
                        progress_every=args.progress_every)
    print(f"wrote {out / ('ablation_' + args.axis + '.csv')}")
    for row in rows:
        print(f"{row['variant']}: EPE {row['epe']:.4f}")
    return 0


def _cmd_analyze_distortion(args) -> int:
    from .distortion import (distortion_study, plot_distortion,
                             write_distortion_csv)
    from .train import build_dataset, restore_model
    model, cfg = restore_model(args.checkpoint)
    k_list = _parse_k_list(args.k_list)
    # scene size must be divisible by 32 and by every requested factor
    import math
    unit = math.lcm(32, *k_list)
    study_cfg = cfg
    if cfg.height % unit or cfg.width % unit:
        study_cfg = cfg.replaced(height=unit, width=2 * unit)
    samples = build_dataset(study_cfg.replaced(k=1, grayscale=False), "val")
    reports = distortion_study(model, samples, k_list,
                               grayscale=args.grayscale)
    out = Path(args.out or Path(args.checkpoint).parent)
    write_distortion_csv(reports, out / "distortion.csv")
    plot_distortion(reports, out / "distortion.png")
    print(f"wrote {out / 'distortion.csv'} and distortion.png")
    for r in reports:
        print(f"k={r.k}: corr favors degraded-symmetric "
              f"{r.pct_corr_favor_degr:.3f}, group-wise "
              f"{r.pct_cat_favor_degr:.3f}")
    return 0


def _cmd_export_plots(args) -> int:
    from .plots import export_plots
    written = export_plots(args.csv_dir, args.out)
    for p in written:
        print(f"wrote {p}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="asymstereo",
                     description="Stereo matching for unequal-quality pairs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", help="run config file (key = value lines)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--progress-every", type=int, default=100)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a k sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset root (default: $ASTEREO_DATA_DIR, "
                                  "else a synthetic val split)")
    p.add_argument("--split", default="val")
    p.add_argument("--k-list", default="1,2,4,8")
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate variants along one axis")
    p.add_argument("--config", help="base run config")
    p.add_argument("--axis", required=True,
                   choices=["input_alignment", "peak_count", "fusion_scheme"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--progress-every", type=int, default=0)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("analyze-distortion",
                       help="cost-distribution distortion study")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k-list", default="1,2,4,6")
    p.add_argument("--grayscale", action="store_true",
                   help="include grayscale conversion in the degradations")
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=_cmd_analyze_distortion)

    p = sub.add_parser("export-plots", help="render result CSVs to images")
    p.add_argument("--csv-dir", required=True)
    p.add_argument("--out", help="output directory (default: csv dir)")
    p.set_defaults(fn=_cmd_export_plots)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"asymstereo: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
