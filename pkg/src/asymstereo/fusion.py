"""Two-branch recurrent refinement with a phased volume hand-off.

One gated convolutional recurrent branch refines a multi-peak local slice of
the correlation volume; a second branch refines disparity by indexing the
regularized group-wise volume.  The refined local volume is withheld from
the disparity branch for the first ``phase_split`` iterations (scheme
``two_phase``), or always/never passed under the ablation schemes.  Final
disparities are upsampled to full resolution with a learned convex
combination over 3x3 coarse neighborhoods.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import FUSION_SCHEMES, RunConfig
from .data import (AlignmentConfig, StereoSample, degrade_left_for_corr,
                   replicate_channels, upsample_right_for_cat)
from .errors import ConfigError, DimensionError, NumericsError
from .features import ExtractorConfig, FeatureBundle, FeatureExtractors
from .volumes import (PeakSet, build_correlation_volume, build_groupwise_volume,
                      CostVolumeRegularizer, find_peak_disparities,
                      gather_multi_window, gather_window, initial_disparity,
                      scatter_peaks_dense, top_k_peaks)

UPSAMPLE_FACTOR = 4


@dataclass(frozen=True)
class FusionConfig:
    iterations: int = 16
    phase_split: int = 8
    peak_count: int = 3
    r_schedule: tuple = (4, 4, 4, 4, 2, 2, 2, 2, 1, 1, 1, 1, 1, 1, 1, 1)
    r_cat: int = 4
    fusion_scheme: str = "two_phase"
    hidden_dim: int = 16
    motion_dim: int = 32

    def __post_init__(self):
        if len(self.r_schedule) != self.iterations:
            raise ConfigError("r_schedule length must equal iterations")
        if not 1 <= self.phase_split <= self.iterations:
            raise ConfigError("phase_split must lie in [1, iterations]")
        if self.peak_count < 1 or min(self.r_schedule) < 1 or self.r_cat < 1:
            raise ConfigError("peak_count and radii must be >= 1")
        if self.fusion_scheme not in FUSION_SCHEMES:
            raise ConfigError(f"unknown fusion scheme {self.fusion_scheme!r}")
        if max(self.r_schedule) != self.r_schedule[0]:
            raise ConfigError("r_schedule must start at its maximum radius")

    @property
    def r_pad(self) -> int:
        return self.r_schedule[0]

    @property
    def lane_count(self) -> int:
        return self.peak_count * (2 * self.r_pad + 1)


@dataclass
class FusionState:
    """Evolving state of both branches at quarter resolution."""

    volume: torch.Tensor          # refined multi-peak costs, (B, lanes, H4, W4)
    peaks: PeakSet
    disp: torch.Tensor            # (B, 1, H4, W4), quarter-res units
    hidden_vol: list[torch.Tensor]
    hidden_disp: list[torch.Tensor]
    iteration: int = 0


@dataclass
class FusionInputs:
    """Per-forward constants consumed by every iteration."""

    c_corr: torch.Tensor
    c_cat: torch.Tensor
    inj_vol: list
    inj_disp: list


@dataclass
class PreparedInputs:
    """Alignment-processed images, ready for the extractors (B, 3, H, W)."""

    img_cor_l: torch.Tensor
    img_cor_r: torch.Tensor
    img_cat_l: torch.Tensor
    img_cat_r: torch.Tensor
    img_ctx: torch.Tensor

    def to(self, **kwargs) -> "PreparedInputs":
        return PreparedInputs(**{k: v.to(**kwargs) for k, v in self.__dict__.items()})


@dataclass
class PipelineOutput:
    init_disp_q: torch.Tensor
    init_disp_full: torch.Tensor
    cor_disps_q: list = field(default_factory=list)
    cor_disps_full: list = field(default_factory=list)
    cat_disps_q: list = field(default_factory=list)
    cat_disps_full: list = field(default_factory=list)
    c_corr: torch.Tensor | None = None
    c_cat: torch.Tensor | None = None

    @property
    def final(self) -> torch.Tensor:
        return self.cat_disps_full[-1] if self.cat_disps_full else self.init_disp_full


def two_phase_gate(iteration: int, cfg: FusionConfig,
                   volume: torch.Tensor) -> torch.Tensor:
    """What the disparity branch sees of the refined volume this iteration."""
    scheme = cfg.fusion_scheme
    if scheme in ("none", "g2_to_g1"):
        return torch.zeros_like(volume)
    if scheme in ("g1_to_g2", "both"):
        return volume
    return volume if iteration >= cfg.phase_split else torch.zeros_like(volume)


def volume_branch_sees_disparity(scheme: str) -> bool:
    """Whether the volume branch receives the current disparity estimate."""
    return scheme in ("g2_to_g1", "both", "two_phase")


def regress_cor_disparity(values: torch.Tensor, peaks: PeakSet) -> torch.Tensor:
    """Soft-argmax over all valid lanes of a refined multi-peak volume.

    Each lane's disparity is its peak center plus offset; padded lanes are
    excluded from the softmax.  Returns ``(B, 1, H4, W4)``.
    """
    neg = torch.finfo(values.dtype).min / 4
    logits = torch.where(peaks.lane_valid, values, torch.full_like(values, neg))
    probs = torch.softmax(logits, dim=1)
    return (probs * peaks.lane_disp).sum(1, keepdim=True)


def convex_upsample(disp: torch.Tensor, mask_logits: torch.Tensor,
                    factor: int = UPSAMPLE_FACTOR) -> torch.Tensor:
    """Learned convex-combination upsampling of a quarter-res disparity.

    ``mask_logits`` has ``9 * factor**2`` channels; softmax over the 3x3
    neighborhood makes each output pixel a convex combination of (replicate-
    padded) coarse neighbors, then values are scaled by ``factor`` to convert
    coarse-grid disparity units to full-resolution pixels.
    """
    b, _, h, w = disp.shape
    mask = mask_logits.view(b, 9, factor, factor, h, w).softmax(dim=1)
    neigh = F.unfold(F.pad(disp, (1, 1, 1, 1), mode="replicate"), 3)
    neigh = neigh.view(b, 9, 1, 1, h, w)
    up = (mask * neigh).sum(1)
    up = up.permute(0, 3, 1, 4, 2).reshape(b, 1, h * factor, w * factor)
    return up * factor


def _pool2x(x):
    # exact 2x2 averaging; the bilinear path has a much faster CPU backward
    # than avg_pool2d
    return F.interpolate(x, scale_factor=0.5, mode="bilinear",
                         align_corners=False, recompute_scale_factor=False)


def _interp_to(x, ref):
    return F.interpolate(x, ref.shape[2:], mode="bilinear", align_corners=True)


class ConvGRU(nn.Module):
    """Gated convolutional recurrent cell with additive context-gate biases."""

    def __init__(self, hidden_dim: int, input_dim: int):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.conv_zr = nn.Conv2d(hidden_dim + input_dim, 2 * hidden_dim, 3, padding=1)
        self.conv_q = nn.Conv2d(hidden_dim + input_dim, hidden_dim, 3, padding=1)

    def forward(self, h, cz, cr, cq, *x_list):
        x = torch.cat(x_list, dim=1)
        hx = torch.cat([h, x], dim=1)
        zr = self.conv_zr(hx)
        z = torch.sigmoid(zr[:, : self.hidden_dim] + cz)
        r = torch.sigmoid(zr[:, self.hidden_dim :] + cr)
        q = torch.tanh(self.conv_q(torch.cat([r * h, x], dim=1)) + cq)
        return (1 - z) * h + z * q


class RecurrentBranch(nn.Module):
    """A 3-scale recurrent update block with coarse-to-fine chaining.

    The coarsest cell runs first; each finer cell receives the pooled finer
    hidden state and the upsampled coarser one, and the 1/4-scale cell also
    receives encoded per-iteration inputs.  Produces a residual update and
    upsampling-mask logits.
    """

    def __init__(self, in_channels: int, hidden_dim: int, motion_dim: int,
                 inject_dim: int, out_channels: int):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.enc1 = nn.Conv2d(in_channels, motion_dim, 1)
        self.enc2 = nn.Conv2d(motion_dim, motion_dim, 3, padding=1)
        self.inject = nn.ModuleList(
            [nn.Conv2d(inject_dim, 3 * hidden_dim, 3, padding=1) for _ in range(3)])
        self.gru4 = ConvGRU(hidden_dim, motion_dim + hidden_dim)
        self.gru8 = ConvGRU(hidden_dim, 2 * hidden_dim)
        self.gru16 = ConvGRU(hidden_dim, hidden_dim)
        self.trunk = nn.Sequential(
            nn.Conv2d(hidden_dim, 32, 3, padding=1), nn.SiLU())
        self.delta_head = nn.Conv2d(32, out_channels, 3, padding=1)
        self.mask_head = nn.Conv2d(32, 9 * UPSAMPLE_FACTOR ** 2, 1)

    def injections(self, bundle: FeatureBundle) -> list:
        return [conv(bundle.ctx_injection(s)).chunk(3, dim=1)
                for conv, s in zip(self.inject, (4, 8, 16))]

    def mask_logits(self, hidden4: torch.Tensor) -> torch.Tensor:
        return self.mask_head(self.trunk(hidden4))

    def forward(self, hidden: list, inj: list, x: torch.Tensor):
        h4, h8, h16 = hidden
        h16 = self.gru16(h16, *inj[2], _pool2x(h8))
        h8 = self.gru8(h8, *inj[1], _pool2x(h4), _interp_to(h16, h8))
        motion = F.silu(self.enc2(F.silu(self.enc1(x))))
        h4 = self.gru4(h4, *inj[0], motion, _interp_to(h8, h4))
        t = self.trunk(h4)
        return [h4, h8, h16], self.delta_head(t), self.mask_head(t)


def _guard_finite(t: torch.Tensor, what: str, iteration: int):
    if not torch.isfinite(t).all():
        raise NumericsError(f"non-finite {what} at iteration {iteration}")


class VolumeFusionNet(nn.Module):
    """End-to-end model: extractors, both volumes, and the fused recurrence."""

    def __init__(self, ext_cfg: ExtractorConfig, fus_cfg: FusionConfig, d_max: int):
        super().__init__()
        if d_max % 4:
            raise ConfigError("d_max must be a multiple of 4")
        if fus_cfg.hidden_dim > ext_cfg.c_ctx // 2:
            raise ConfigError("hidden_dim cannot exceed the context tanh half")
        self.cfg = fus_cfg
        self.num_bins = d_max // 4
        self.extractors = FeatureExtractors(ext_cfg)
        self.regularizer = CostVolumeRegularizer(
            ext_cfg.groups, {s: ext_cfg.c_cat[s] for s in (8, 16, 32)})
        lanes = fus_cfg.lane_count
        inject_dim = ext_cfg.c_ctx - ext_cfg.c_ctx // 2
        self.volume_branch = RecurrentBranch(
            lanes + fus_cfg.peak_count + 1, fus_cfg.hidden_dim,
            fus_cfg.motion_dim, inject_dim, lanes)
        self.disp_branch = RecurrentBranch(
            (2 * fus_cfg.r_cat + 1) + lanes + 1, fus_cfg.hidden_dim,
            fus_cfg.motion_dim, inject_dim, 1)

    # -- building blocks ----------------------------------------------------

    def compute_volumes(self, inputs: PreparedInputs):
        """Extract features and build both cost volumes."""
        bundle = self.extractors.bundle(
            inputs.img_cor_l, inputs.img_cor_r,
            inputs.img_cat_l, inputs.img_cat_r, inputs.img_ctx)
        c_corr = build_correlation_volume(bundle.f_cor_l, bundle.f_cor_r,
                                          self.num_bins)
        raw = build_groupwise_volume(bundle.f_cat_l[4], bundle.f_cat_r4,
                                     self.num_bins, self.extractors.cfg.groups)
        c_cat = self.regularizer(raw, {s: bundle.f_cat_l[s] for s in (8, 16, 32)})
        return bundle, c_corr, c_cat

    def make_fusion_inputs(self, bundle: FeatureBundle, c_corr, c_cat) -> FusionInputs:
        return FusionInputs(
            c_corr=c_corr, c_cat=c_cat,
            inj_vol=self.volume_branch.injections(bundle),
            inj_disp=self.disp_branch.injections(bundle))

    def init_state(self, c_corr, c_cat, bundle: FeatureBundle) -> FusionState:
        """Seed both branches: peaks and windows from the correlation volume,
        disparity from the regularized volume, hidden states from context."""
        cfg = self.cfg
        peaks = top_k_peaks(c_corr, cfg.peak_count, cfg.r_schedule[0],
                            pad_radius=cfg.r_pad)
        disp0 = initial_disparity(c_cat).unsqueeze(1)
        hidden = [bundle.ctx_hidden(s, cfg.hidden_dim) for s in (4, 8, 16)]
        return FusionState(volume=peaks.windows, peaks=peaks, disp=disp0,
                           hidden_vol=list(hidden), hidden_disp=list(hidden),
                           iteration=0)

    def volume_refine_step(self, state: FusionState, fin: FusionInputs):
        """One refinement of the multi-peak volume.

        After the first iteration, peaks are re-extracted from the refined
        volume and their windows re-gathered from the correlation volume at
        the scheduled radius (zero-padded to constant width).
        """
        cfg = self.cfg
        if state.iteration == 0:
            peaks = state.peaks
        else:
            dense = scatter_peaks_dense(state.volume, state.peaks, self.num_bins)
            centers = find_peak_disparities(dense, cfg.peak_count)
            peaks = gather_multi_window(fin.c_corr, centers,
                                        cfg.r_schedule[state.iteration],
                                        cfg.r_pad)
        if volume_branch_sees_disparity(cfg.fusion_scheme):
            disp_in = state.disp
        else:
            disp_in = torch.zeros_like(state.disp)
        x = torch.cat([peaks.windows, peaks.disp, disp_in], dim=1)
        hidden, delta, mask_logits = self.volume_branch(
            state.hidden_vol, fin.inj_vol, x)
        _guard_finite(delta, "volume update", state.iteration)
        new_state = replace(state, volume=state.volume + delta, peaks=peaks,
                            hidden_vol=hidden)
        return new_state, mask_logits

    def disparity_step(self, state: FusionState, fin: FusionInputs):
        """One disparity refinement; consumes the gated refined volume."""
        cfg = self.cfg
        gated = two_phase_gate(state.iteration, cfg, state.volume)
        c_l = gather_window(fin.c_cat, state.disp, cfg.r_cat)
        x = torch.cat([c_l, gated, state.disp], dim=1)
        hidden, delta, mask_logits = self.disp_branch(
            state.hidden_disp, fin.inj_disp, x)
        _guard_finite(delta, "disparity update", state.iteration)
        disp = (state.disp + delta).clamp(0.0, self.num_bins - 1)
        new_state = replace(state, disp=disp, hidden_disp=hidden,
                            iteration=state.iteration + 1)
        return new_state, mask_logits

    def upsample_disparity(self, disp_q: torch.Tensor,
                           hidden: torch.Tensor) -> torch.Tensor:
        """Quarter-res disparity to full resolution (pixels) via the learned
        convex mask predicted from the disparity branch's 1/4 hidden state."""
        return convex_upsample(disp_q, self.disp_branch.mask_logits(hidden))

    # -- full pipeline --------------------------------------------------------

    def forward(self, inputs: PreparedInputs,
                iterations: int | None = None) -> PipelineOutput:
        cfg = self.cfg
        n_iters = cfg.iterations if iterations is None else iterations
        if not 0 <= n_iters <= cfg.iterations:
            raise ConfigError(f"iterations must lie in [0, {cfg.iterations}]")
        bundle, c_corr, c_cat = self.compute_volumes(inputs)
        fin = self.make_fusion_inputs(bundle, c_corr, c_cat)
        state = self.init_state(c_corr, c_cat, bundle)
        out = PipelineOutput(init_disp_q=state.disp, init_disp_full=None,
                             c_corr=c_corr, c_cat=c_cat)
        disps = [state.disp]
        masks = [self.disp_branch.mask_logits(state.hidden_disp[0])]
        for _ in range(n_iters):
            state, mask_vol = self.volume_refine_step(state, fin)
            d_cor = regress_cor_disparity(state.volume, state.peaks)
            out.cor_disps_q.append(d_cor)
            disps.append(d_cor)
            masks.append(mask_vol)
            state, mask_disp = self.disparity_step(state, fin)
            out.cat_disps_q.append(state.disp)
            disps.append(state.disp)
            masks.append(mask_disp)
        # one batched convex upsampling for the init + all iteration outputs
        full = convex_upsample(torch.cat(disps, 0), torch.cat(masks, 0))
        chunks = full.chunk(len(disps), 0)
        out.init_disp_full = chunks[0]
        out.cor_disps_full = list(chunks[1::2])
        out.cat_disps_full = list(chunks[2::2])
        return out


# ---------------------------------------------------------------------------
# Sample preparation and entry points
# ---------------------------------------------------------------------------

def _to_tensor(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(
        np.ascontiguousarray(img.transpose(2, 0, 1))).float().unsqueeze(0)


def prepare_inputs(sample: StereoSample,
                   alignment: AlignmentConfig = AlignmentConfig()) -> PreparedInputs:
    """Apply the configured view alignment and tensorize one sample.

    The degraded right view is always bilinearly upsampled to the nominal
    grid; the left view is optionally information-degraded (round-trip
    resampling plus grayscale) per feature family.  Grayscale images are
    replicated to 3 channels.  Context always sees the pristine left view.
    """
    spec = sample.degradation
    right_up = replicate_channels(upsample_right_for_cat(sample.right, spec))
    left = sample.left
    if alignment.degrade_left_for_corr or alignment.degrade_left_for_cat:
        left_deg = replicate_channels(degrade_left_for_corr(left, spec))
    return PreparedInputs(
        img_cor_l=_to_tensor(left_deg if alignment.degrade_left_for_corr else left),
        img_cor_r=_to_tensor(right_up),
        img_cat_l=_to_tensor(left_deg if alignment.degrade_left_for_cat else left),
        img_cat_r=_to_tensor(right_up),
        img_ctx=_to_tensor(left),
    )


def prepare_batch(samples: list, alignment: AlignmentConfig = AlignmentConfig()) -> PreparedInputs:
    parts = [prepare_inputs(s, alignment) for s in samples]
    return PreparedInputs(**{
        name: torch.cat([getattr(p, name) for p in parts], dim=0)
        for name in PreparedInputs.__dataclass_fields__})


def forward_pipeline(model: VolumeFusionNet, sample: StereoSample,
                     alignment: AlignmentConfig = AlignmentConfig(),
                     iterations: int | None = None) -> PipelineOutput:
    """Run the full pipeline on one sample (batch of 1)."""
    return model(prepare_inputs(sample, alignment), iterations=iterations)


def build_model(cfg: RunConfig) -> VolumeFusionNet:
    """Construct the network a run config describes (seeding is the caller's)."""
    ext = ExtractorConfig(
        c_cor=cfg.c_cor,
        c_cat={4: cfg.c_cat4, 8: cfg.c_cat8, 16: cfg.c_cat16, 32: cfg.c_cat32},
        c_ctx=cfg.c_ctx, groups=cfg.groups)
    fus = FusionConfig(
        iterations=cfg.iterations, phase_split=cfg.phase_split,
        peak_count=cfg.peak_count, r_schedule=tuple(cfg.r_schedule),
        r_cat=cfg.r_cat, fusion_scheme=cfg.fusion_scheme,
        hidden_dim=cfg.hidden_dim, motion_dim=cfg.motion_dim)
    return VolumeFusionNet(ext, fus, cfg.d_max)
