"""Render result CSVs (sweeps, ablations, distortion studies) to images."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _plot_eval_sweep(rows: list[dict], out_path: Path):
    ks = [int(r["k"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, [float(r["epe"]) for r in rows], "o-", label="final")
    if "init_epe" in rows[0]:
        ax.plot(ks, [float(r["init_epe"]) for r in rows], "s--",
                label="initial regression")
    ax.set_xlabel("right-view downsampling factor")
    ax.set_ylabel("EPE (px)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def _plot_ablation(rows: list[dict], out_path: Path):
    names = [r["variant"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(rows)), [float(r["epe"]) for r in rows])
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("EPE (px)")
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def _plot_distortion(rows: list[dict], out_path: Path):
    ks = [int(r["k"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, [float(r["pct_corr_favor_degr"]) for r in rows], "o-",
            label="correlation volume")
    ax.plot(ks, [float(r["pct_cat_favor_degr"]) for r in rows], "s-",
            label="group-wise volume")
    ax.axhline(0.5, color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("right-view downsampling factor")
    ax.set_ylabel("fraction favoring degraded-symmetric")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


# schema sniffing: required column set -> renderer
_SCHEMAS = (
    ({"k", "pct_corr_favor_degr", "pct_cat_favor_degr"}, _plot_distortion),
    ({"variant", "epe"}, _plot_ablation),
    ({"k", "epe"}, _plot_eval_sweep),
)


def export_plots(csv_dir, out_dir=None) -> list[Path]:
    """Render every recognized CSV under ``csv_dir`` to a PNG.

    Raises ``FileNotFoundError`` when there is nothing to plot.
    """
    csv_dir = Path(csv_dir)
    out_dir = Path(out_dir) if out_dir else csv_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for csv_path in sorted(csv_dir.rglob("*.csv")):
        rows = _read_csv(csv_path)
        if not rows:
            continue
        columns = set(rows[0].keys())
        for required, renderer in _SCHEMAS:
            if required <= columns:
                out_path = out_dir / (csv_path.stem + ".png")
                renderer(rows, out_path)
                written.append(out_path)
                break
    if not written:
        raise FileNotFoundError(f"nothing to plot under {csv_dir}")
    return written
