"""A miniature end-to-end run: train, sweep the degradation factor, plot.

Uses a reduced budget (300 steps, small dataset) so it finishes in a few
minutes on a laptop CPU; the shipped defaults (RunConfig()) are the full
desk-scale recipe.  The same flow is available from the command line:

    asymstereo train --config cfg.txt
    asymstereo eval --checkpoint runs/demo/checkpoint.pkl --k-list 1,2,4,8
    asymstereo export-plots --csv-dir runs/demo
"""
from pathlib import Path

from asymstereo import RunConfig
from asymstereo.plots import export_plots
from asymstereo.train import (build_dataset, eval_sweep, restore_model,
                              train_run, write_rows_csv)

OUT = Path(__file__).parent / "output" / "04_training"

cfg = RunConfig(steps=300, n_train=96, n_val=8, out_dir=str(OUT / "run"),
                ckpt_every=0)
print(f"training {cfg.steps} steps at {cfg.height}x{cfg.width}, "
      f"k={cfg.k} grayscale={cfg.grayscale} ...")
result = train_run(cfg, progress_every=50)
print(f"final val EPE {result.final_val.epe:.3f} px "
      f"(initial-regression baseline {result.init_val.epe:.3f} px)")

model, cfg = restore_model(result.checkpoint)
rows = eval_sweep(model, cfg, k_list=[1, 2, 4, 8],
                  val_samples=build_dataset(cfg, "val"))
write_rows_csv(rows, OUT / "run" / "eval_sweep.csv")
print("\n k | EPE    | D1     | >3px")
for r in rows:
    print(f" {r['k']} | {r['epe']:.3f} | {r['d1']:.4f} | {r['gt3px']:.4f}")

written = export_plots(OUT / "run")
print(f"\nplots: {[str(p) for p in written]}")
