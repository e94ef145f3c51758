"""Training, evaluation sweeps, and ablation drivers.

Everything here is reproducible from ``(RunConfig, seed)``: dataset sample
seeds, batch order, and weight initialization all derive from the config.
Training runs single-threaded; at these tensor sizes intra-op threading
costs more than it saves, and one writer keeps runs bit-reproducible.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, save_checkpoint, load_checkpoint
from .data import (AlignmentConfig, DegradationSpec, MetricsReport,
                   SceneParams, StereoSample, aggregate_metrics,
                   compute_metrics, make_synthetic_pair, redegrade)
from .errors import NumericsError, ParameterError
from .fusion import PreparedInputs, VolumeFusionNet, build_model, prepare_batch
from .losses import total_loss

TRAIN_SEED_BASE = 100_000
VAL_SEED_BASE = 900_000


def scene_params(cfg: RunConfig) -> SceneParams:
    return SceneParams(height=cfg.height, width=cfg.width, d_max=cfg.d_max,
                       shape_count=cfg.shape_count,
                       texture_scale=cfg.texture_scale)


def degradation(cfg: RunConfig) -> DegradationSpec:
    return DegradationSpec(downsample_factor=cfg.k, grayscale=cfg.grayscale)


def alignment(cfg: RunConfig) -> AlignmentConfig:
    return AlignmentConfig(degrade_left_for_corr=cfg.degrade_left_for_corr,
                           degrade_left_for_cat=cfg.degrade_left_for_cat)


def build_dataset(cfg: RunConfig, split: str) -> list[StereoSample]:
    """Deterministic synthetic split; sample seeds derive from the run seed."""
    base = {"train": TRAIN_SEED_BASE, "val": VAL_SEED_BASE}[split]
    count = {"train": cfg.n_train, "val": cfg.n_val}[split]
    params = scene_params(cfg)
    spec = degradation(cfg)
    return [make_synthetic_pair(cfg.seed * 1_000_000 + base + i, params, spec)
            for i in range(count)]


@dataclass
class PreparedDataset:
    """Alignment-processed tensors for a whole split, sliceable by index."""

    inputs: PreparedInputs
    gt: torch.Tensor    # (N, H, W) float32
    mask: torch.Tensor  # (N, H, W) bool
    samples: list[StereoSample]

    def take(self, idx: np.ndarray):
        index = torch.from_numpy(np.ascontiguousarray(idx))
        picked = PreparedInputs(**{
            name: getattr(self.inputs, name).index_select(0, index)
            for name in PreparedInputs.__dataclass_fields__})
        return picked, self.gt.index_select(0, index), self.mask.index_select(0, index)

    def __len__(self) -> int:
        return self.gt.shape[0]


def prepare_dataset(samples: list[StereoSample],
                    align: AlignmentConfig) -> PreparedDataset:
    return PreparedDataset(
        inputs=prepare_batch(samples, align),
        gt=torch.from_numpy(np.stack([s.gt_disparity for s in samples])).float(),
        mask=torch.from_numpy(np.stack([s.valid_mask for s in samples])),
        samples=samples,
    )


def _batch_stream(n: int, batch_size: int, seed: int):
    """Reshuffled epochs of batch indices, deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield order[i:i + batch_size]


def evaluate_model(model: VolumeFusionNet, samples: list[StereoSample],
                   align: AlignmentConfig, batch_size: int = 4):
    """Aggregate metrics of the final and of the initial-regression disparity."""
    final_reports, init_reports = [], []
    with torch.inference_mode():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            out = model(prepare_batch(chunk, align))
            final = out.final.squeeze(1).numpy()
            init = out.init_disp_full.squeeze(1).numpy()
            for j, s in enumerate(chunk):
                final_reports.append(
                    compute_metrics(final[j], s.gt_disparity, s.valid_mask))
                init_reports.append(
                    compute_metrics(init[j], s.gt_disparity, s.valid_mask))
    return aggregate_metrics(final_reports), aggregate_metrics(init_reports)


@dataclass
class TrainResult:
    checkpoint: Path
    log_csv: Path
    final_val: MetricsReport
    init_val: MetricsReport
    steps: int


LOG_COLUMNS = ["step", "lr", "total", "l_gru1", "l_gru2_init", "l_gru2_iters",
               "batch_epe"]


def train_run(cfg: RunConfig, progress_every: int = 0) -> TrainResult:
    """Train from scratch per the config; returns paths and final val metrics.

    Writes ``config.txt``, per-step ``train_log.csv``, periodic checkpoints,
    a final ``checkpoint.pkl``, and ``val_metrics.csv`` under ``cfg.out_dir``.
    A non-finite loss aborts immediately; the last periodic checkpoint stays
    on disk.
    """
    torch.set_num_threads(1)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.to_file(out_dir / "config.txt")

    torch.manual_seed(cfg.seed)
    model = build_model(cfg)
    align = alignment(cfg)
    train_ds = prepare_dataset(build_dataset(cfg, "train"), align)
    val_samples = build_dataset(cfg, "val")

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = None
    if cfg.steps > 0:
        sched = torch.optim.lr_scheduler.OneCycleLR(
            opt, max_lr=cfg.lr, total_steps=cfg.steps)
    batches = _batch_stream(len(train_ds), cfg.batch_size, cfg.seed)

    ckpt_path = out_dir / "checkpoint.pkl"
    log_path = out_dir / "train_log.csv"
    with open(log_path, "w", newline="") as log_fh:
        log = csv.writer(log_fh)
        log.writerow(LOG_COLUMNS)
        for step in range(cfg.steps):
            inputs, gt, mask = train_ds.take(next(batches))
            out = model(inputs)
            breakdown = total_loss(out.init_disp_full, out.cor_disps_full,
                                   out.cat_disps_full, gt, mask)
            if not torch.isfinite(breakdown.total):
                raise NumericsError(
                    f"non-finite loss at step {step}; last periodic checkpoint "
                    f"retained in {out_dir}")
            opt.zero_grad()
            breakdown.total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            opt.step()
            if sched is not None:
                sched.step()
            with torch.no_grad():
                err = (out.final.squeeze(1) - gt).abs() * mask
                batch_epe = float(err.sum() / mask.sum())
            terms = [breakdown.total, breakdown.l_gru1, breakdown.l_gru2_init,
                     breakdown.l_gru2_iters]
            log.writerow([step, f"{opt.param_groups[0]['lr']:.8f}"]
                         + [f"{float(t.detach()):.6f}" for t in terms]
                         + [f"{batch_epe:.6f}"])
            log_fh.flush()
            if cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0:
                save_checkpoint(out_dir / f"checkpoint_step{step + 1:06d}.pkl",
                                model, cfg, step + 1, opt, sched)
            if progress_every and (step + 1) % progress_every == 0:
                print(f"[{out_dir.name}] step {step + 1}/{cfg.steps} "
                      f"loss {float(breakdown.total.detach()):.3f} "
                      f"epe {batch_epe:.3f}", flush=True)

    save_checkpoint(ckpt_path, model, cfg, cfg.steps, opt, sched)
    final_val, init_val = evaluate_model(model, val_samples, align,
                                         cfg.batch_size)
    with open(out_dir / "val_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["which", "epe", "d1", "gt3px", "n_valid"])
        for name, r in (("final", final_val), ("initial_regression", init_val)):
            w.writerow([name, f"{r.epe:.6f}", f"{r.d1:.6f}",
                        f"{r.gt3px:.6f}", r.n_valid])
    return TrainResult(checkpoint=ckpt_path, log_csv=log_path,
                       final_val=final_val, init_val=init_val, steps=cfg.steps)


def restore_model(ckpt_path) -> tuple[VolumeFusionNet, RunConfig]:
    """Rebuild the model a checkpoint describes and load its weights."""
    payload = load_checkpoint(ckpt_path)
    cfg = payload["config"]
    model = build_model(cfg)
    model.load_state_dict(payload["params"])
    model.eval()
    return model, cfg


def eval_sweep(model: VolumeFusionNet, cfg: RunConfig, k_list,
               val_samples: list[StereoSample] | None = None) -> list[dict]:
    """Per-degradation-factor metrics rows, re-degrading the same scenes."""
    if val_samples is None:
        val_samples = build_dataset(cfg, "val")
    align = alignment(cfg)
    rows = []
    for k in k_list:
        if cfg.height % k or cfg.width % k:
            raise ParameterError(f"k={k} incompatible with sample size "
                                 f"{cfg.height}x{cfg.width}")
        spec = DegradationSpec(downsample_factor=k, grayscale=cfg.grayscale)
        degraded = [redegrade(s, spec) for s in val_samples]
        final, init = evaluate_model(model, degraded, align, cfg.batch_size)
        rows.append({"k": k, "epe": final.epe, "d1": final.d1,
                     "gt3px": final.gt3px, "init_epe": init.epe,
                     "n_valid": final.n_valid})
    return rows


def write_rows_csv(rows: list[dict], path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if rows:
            writer.writerow(list(rows[0].keys()))
            for row in rows:
                writer.writerow([_fmt(v) for v in row.values()])


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


ABLATION_AXES = ("input_alignment", "peak_count", "fusion_scheme")

_ALIGNMENT_VARIANTS = (
    # (name, degrade_left_for_corr, degrade_left_for_cat)
    ("upR_for_corr__upR_for_cat", False, False),
    ("downL_for_corr__downL_for_cat", True, True),
    ("upR_for_corr__downL_for_cat", False, True),
    ("downL_for_corr__upR_for_cat", True, False),
)


def ablation_variants(cfg: RunConfig, axis: str) -> list[tuple[str, RunConfig]]:
    if axis == "input_alignment":
        return [(name, cfg.replaced(degrade_left_for_corr=corr,
                                    degrade_left_for_cat=cat))
                for name, corr, cat in _ALIGNMENT_VARIANTS]
    if axis == "peak_count":
        return [(f"K{k}", cfg.replaced(peak_count=k)) for k in (1, 2, 3, 4)]
    if axis == "fusion_scheme":
        from .config import FUSION_SCHEMES
        return [(s, cfg.replaced(fusion_scheme=s)) for s in FUSION_SCHEMES]
    raise ParameterError(f"unknown ablation axis {axis!r}; "
                         f"expected one of {ABLATION_AXES}")


def config_diff(base: RunConfig, variant: RunConfig) -> dict:
    base_d, var_d = base.to_dict(), variant.to_dict()
    return {key: (base_d[key], var_d[key]) for key in base_d
            if base_d[key] != var_d[key] and key != "out_dir"}


def run_ablation(cfg: RunConfig, axis: str, out_dir,
                 progress_every: int = 0) -> list[dict]:
    """Train and evaluate every variant along one axis under identical seeds.

    Emits a ranked CSV plus a config-diff audit showing each variant differs
    from the base only along the requested axis.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    audit_lines = []
    for name, var_cfg in ablation_variants(cfg, axis):
        var_cfg = var_cfg.replaced(out_dir=str(out_dir / name))
        diff = config_diff(cfg, var_cfg)
        audit_lines.append(f"{name}: " + (", ".join(
            f"{k}={old!r}->{new!r}" for k, (old, new) in sorted(diff.items()))
            or "(base)"))
        result = train_run(var_cfg, progress_every=progress_every)
        rows.append({"variant": name, "epe": result.final_val.epe,
                     "d1": result.final_val.d1,
                     "gt3px": result.final_val.gt3px,
                     "init_epe": result.init_val.epe})
    rows.sort(key=lambda r: r["epe"])
    write_rows_csv(rows, out_dir / f"ablation_{axis}.csv")
    (out_dir / "config_diff.txt").write_text("\n".join(audit_lines) + "\n")
    return rows
