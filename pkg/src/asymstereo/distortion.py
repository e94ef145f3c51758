"""Matching-cost distribution distortion analysis.

Quantifies how far a cost volume built from imperfect inputs drifts from the
one built from two pristine views, per pixel, as the KL divergence between
the softmax-normalized cost profiles (in nats).  The study compares two ways
of coping with a degraded right view -- leaving the left view pristine
("asymmetric") versus degrading it to match ("degraded-symmetric") -- for
both the correlation volume and the regularized group-wise volume.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import (DegradationSpec, StereoSample, degrade_left_for_corr,
                   degrade_right, replicate_channels, upsample_right_for_cat)
from .errors import DimensionError, ParameterError
from .fusion import PreparedInputs, VolumeFusionNet, _to_tensor

TIE_EPS = 1e-12
PROB_FLOOR = 1e-12


def distribution_distortion(c_test: torch.Tensor,
                            c_ref: torch.Tensor) -> torch.Tensor:
    """Per-pixel KL(softmax(c_test) || softmax(c_ref)) over the disparity axis.

    Computed in float64; probabilities are floored at 1e-12 inside the log.
    Input volumes are ``(B, D, H, W)``; the result is ``(B, H, W)`` in nats.
    """
    if c_test.shape != c_ref.shape:
        raise DimensionError(
            f"volume shapes differ: {tuple(c_test.shape)} vs {tuple(c_ref.shape)}")
    p = torch.softmax(c_test.double(), dim=1)
    q = torch.softmax(c_ref.double(), dim=1)
    log_ratio = p.clamp_min(PROB_FLOOR).log() - q.clamp_min(PROB_FLOOR).log()
    return (p * log_ratio).sum(dim=1)


@dataclass
class DistortionReport:
    """Distortion maps and favor rates for one downsampling factor.

    Maps are stacked per sample, ``(S, H/4, W/4)``, in nats.  The favor
    percentages count valid pixels whose degraded-symmetric distortion is
    strictly smaller than the asymmetric one; ties (within 1e-12) contribute
    one half to each side.
    """

    k: int
    dd_corr_asym: np.ndarray
    dd_corr_degr: np.ndarray
    dd_cat_asym: np.ndarray
    dd_cat_degr: np.ndarray
    pct_corr_favor_degr: float
    pct_cat_favor_degr: float
    n_valid: int


def _favor_rate(dd_degr: np.ndarray, dd_asym: np.ndarray,
                valid: np.ndarray) -> float:
    diff = dd_degr[valid] - dd_asym[valid]
    ties = np.abs(diff) <= TIE_EPS
    favor = (diff < 0) & ~ties
    return float((favor.sum() + 0.5 * ties.sum()) / diff.size)


def _variant_inputs(sample: StereoSample, spec: DegradationSpec):
    """Build the pristine, asymmetric, and degraded-symmetric input triplets."""
    if sample.right_pristine is None:
        raise ParameterError("distortion study requires pristine right views")
    left = _to_tensor(sample.left)
    right_pri = _to_tensor(sample.right_pristine)
    right_up = _to_tensor(replicate_channels(
        upsample_right_for_cat(degrade_right(sample.right_pristine, spec), spec)))
    left_deg = _to_tensor(replicate_channels(degrade_left_for_corr(sample.left, spec)))
    ideal = PreparedInputs(left, right_pri, left, right_pri, left)
    asym = PreparedInputs(left, right_up, left, right_up, left)
    degr = PreparedInputs(left_deg, right_up, left_deg, right_up, left)
    return ideal, asym, degr


def _quarter_mask(mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    blocks = mask.reshape(h // 4, 4, w // 4, 4).mean(axis=(1, 3))
    return blocks > 0.5


def distortion_study(model: VolumeFusionNet, samples: list[StereoSample],
                     k_list: list[int], grayscale: bool = False,
                     use_regularized_cat: bool = True) -> list[DistortionReport]:
    """Measure both volumes' distortion under the two coping strategies.

    For each factor ``k``, cost volumes are built from (a) two pristine
    views, (b) a degraded right view upsampled back, left pristine, and
    (c) as (b) but with the left view degraded to match.  Distortion of (b)
    and (c) is evaluated against (a) and favor rates are aggregated over the
    valid pixels of all samples.
    """
    reports = []
    for k in k_list:
        spec = DegradationSpec(downsample_factor=k, grayscale=grayscale)
        maps = {key: [] for key in
                ("corr_asym", "corr_degr", "cat_asym", "cat_degr")}
        valids = []
        with torch.inference_mode():
            for sample in samples:
                ideal, asym, degr = _variant_inputs(sample, spec)
                _, corr_a, cat_a = model.compute_volumes(ideal)
                _, corr_b, cat_b = model.compute_volumes(asym)
                _, corr_c, cat_c = model.compute_volumes(degr)
                if not use_regularized_cat:
                    # mean over groups of the raw volume, same shape as regularized
                    cat_a, cat_b, cat_c = (
                        _raw_cat(model, v) for v in (ideal, asym, degr))
                maps["corr_asym"].append(distribution_distortion(corr_b, corr_a)[0].numpy())
                maps["corr_degr"].append(distribution_distortion(corr_c, corr_a)[0].numpy())
                maps["cat_asym"].append(distribution_distortion(cat_b, cat_a)[0].numpy())
                maps["cat_degr"].append(distribution_distortion(cat_c, cat_a)[0].numpy())
                valids.append(_quarter_mask(sample.valid_mask))
        stacked = {key: np.stack(vals) for key, vals in maps.items()}
        valid = np.stack(valids)
        reports.append(DistortionReport(
            k=k,
            dd_corr_asym=stacked["corr_asym"],
            dd_corr_degr=stacked["corr_degr"],
            dd_cat_asym=stacked["cat_asym"],
            dd_cat_degr=stacked["cat_degr"],
            pct_corr_favor_degr=_favor_rate(stacked["corr_degr"],
                                            stacked["corr_asym"], valid),
            pct_cat_favor_degr=_favor_rate(stacked["cat_degr"],
                                           stacked["cat_asym"], valid),
            n_valid=int(valid.sum()),
        ))
    return reports


def _raw_cat(model: VolumeFusionNet, inputs: PreparedInputs) -> torch.Tensor:
    from .volumes import build_groupwise_volume
    bundle = model.extractors.bundle(
        inputs.img_cor_l, inputs.img_cor_r,
        inputs.img_cat_l, inputs.img_cat_r, inputs.img_ctx)
    raw = build_groupwise_volume(bundle.f_cat_l[4], bundle.f_cat_r4,
                                 model.num_bins, model.extractors.cfg.groups)
    return raw.mean(dim=1)


def write_distortion_csv(reports: list[DistortionReport], path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "pct_corr_favor_degr", "pct_cat_favor_degr",
                         "mean_dd_corr_asym", "mean_dd_corr_degr",
                         "mean_dd_cat_asym", "mean_dd_cat_degr", "n_valid"])
        for r in reports:
            writer.writerow([
                r.k, f"{r.pct_corr_favor_degr:.6f}", f"{r.pct_cat_favor_degr:.6f}",
                f"{r.dd_corr_asym.mean():.6f}", f"{r.dd_corr_degr.mean():.6f}",
                f"{r.dd_cat_asym.mean():.6f}", f"{r.dd_cat_degr.mean():.6f}",
                r.n_valid])


def plot_distortion(reports: list[DistortionReport], path):
    """Favor-rate curves over the downsampling factor sweep."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ks = [r.k for r in reports]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, [r.pct_corr_favor_degr for r in reports], "o-",
            label="correlation volume")
    ax.plot(ks, [r.pct_cat_favor_degr for r in reports], "s-",
            label="group-wise volume")
    ax.axhline(0.5, color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("right-view downsampling factor")
    ax.set_ylabel("fraction favoring degraded-symmetric inputs")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=130)
    plt.close(fig)
