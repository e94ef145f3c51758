"""Cost volume construction, regularization, and lookup primitives.

All volumes live at quarter resolution with ``D = d_max / 4`` disparity bins.
Positions where the matched right-view column ``x - d`` would fall outside
the frame are zero-filled rather than edge-clamped, so no similarity
evidence is fabricated there.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimensionError, NumericsError

GUIDE_SCALES = (8, 16, 32)


def build_correlation_volume(f_l: torch.Tensor, f_r: torch.Tensor,
                             num_bins: int) -> torch.Tensor:
    """Per-disparity inner products of unit-norm features.

    Returns ``(B, D, H, W)`` with ``volume[:, d, y, x] = <f_l(x, y), f_r(x - d, y)>``
    and zeros where ``x - d < 0``.
    """
    if f_l.shape != f_r.shape:
        raise DimensionError(f"feature shapes differ: {f_l.shape} vs {f_r.shape}")
    b, _, h, w = f_l.shape
    volume = f_l.new_zeros((b, num_bins, h, w))
    for d in range(num_bins):
        if d < w:
            volume[:, d, :, d:] = (f_l[:, :, :, d:] * f_r[:, :, :, : w - d]).sum(1)
    return volume


def build_groupwise_volume(f_l: torch.Tensor, f_r: torch.Tensor,
                           num_bins: int, groups: int) -> torch.Tensor:
    """Group-wise per-disparity dot products, scaled by ``1 / groups``.

    Channels are split into ``groups`` contiguous groups; entry
    ``(g, d, y, x)`` is the scaled dot product of group ``g`` at matched
    columns.  Returns ``(B, G, D, H, W)``, zero-filled out of frame.
    """
    if f_l.shape != f_r.shape:
        raise DimensionError(f"feature shapes differ: {f_l.shape} vs {f_r.shape}")
    b, c, h, w = f_l.shape
    if c % groups:
        raise DimensionError(f"{c} channels not divisible by {groups} groups")
    gl = f_l.view(b, groups, c // groups, h, w)
    gr = f_r.view(b, groups, c // groups, h, w)
    volume = f_l.new_zeros((b, groups, num_bins, h, w))
    for d in range(num_bins):
        if d < w:
            prod = (gl[:, :, :, :, d:] * gr[:, :, :, :, : w - d]).sum(2)
            volume[:, :, d, :, d:] = prod / groups
    return volume


def _gn3(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(4, channels), channels)


class _FeatureGate(nn.Module):
    """Sigmoid channel gate computed from left-view guidance features."""

    def __init__(self, guide_channels: int, volume_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(guide_channels, volume_channels, 3, padding=1)

    def forward(self, volume, guide):
        gate = torch.sigmoid(self.conv(guide))
        return volume * gate.unsqueeze(2)


def _conv3(c_in: int, c_out: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(c_in, c_out, 3, stride=stride, padding=1),
        _gn3(c_out), nn.SiLU())


class CostVolumeRegularizer(nn.Module):
    """3-level 3D encoder-decoder over (disparity, y, x).

    The raw group-wise volume enters with ``G`` channels; encoder levels at
    1/8, 1/16, 1/32 are gated by the matching-scale left-view pyramid
    features and serve as the decoder's skip connections.  Output is a
    single-channel cost volume at the input resolution.
    """

    WIDTHS = (16, 32, 48)

    def __init__(self, in_groups: int, guide_channels: dict[int, int]):
        super().__init__()
        w1, w2, w3 = self.WIDTHS
        stem_c = 8
        self.stem = _conv3(in_groups, stem_c)
        self.enc1 = _conv3(stem_c, w1, stride=2)
        self.enc2 = _conv3(w1, w2, stride=2)
        self.enc3 = _conv3(w2, w3, stride=2)
        self.gate1 = _FeatureGate(guide_channels[8], w1)
        self.gate2 = _FeatureGate(guide_channels[16], w2)
        self.gate3 = _FeatureGate(guide_channels[32], w3)
        self.dec2 = _conv3(w3 + w2, w2)
        self.dec1 = _conv3(w2 + w1, w1)
        self.dec0 = _conv3(w1 + stem_c, stem_c)
        self.head = nn.Conv3d(stem_c, 1, 3, padding=1)

    @staticmethod
    def _up_to(x, ref):
        return F.interpolate(x, size=ref.shape[2:], mode="trilinear",
                             align_corners=False)

    def forward(self, raw: torch.Tensor,
                guides: dict[int, torch.Tensor]) -> torch.Tensor:
        if raw.dim() != 5:
            raise DimensionError(f"expected (B, G, D, H, W) volume, got {tuple(raw.shape)}")
        x0 = self.stem(raw)
        x1 = self.gate1(self.enc1(x0), guides[8])
        x2 = self.gate2(self.enc2(x1), guides[16])
        x3 = self.gate3(self.enc3(x2), guides[32])
        y2 = self.dec2(torch.cat([self._up_to(x3, x2), x2], dim=1))
        y1 = self.dec1(torch.cat([self._up_to(y2, x1), x1], dim=1))
        y0 = self.dec0(torch.cat([self._up_to(y1, x0), x0], dim=1))
        return self.head(y0).squeeze(1)


def initial_disparity(volume: torch.Tensor) -> torch.Tensor:
    """Soft-argmax over the disparity axis of a ``(B, D, H, W)`` volume.

    Returns quarter-resolution disparity in ``[0, D - 1]``.
    """
    if not torch.isfinite(volume).all():
        raise NumericsError("non-finite cost volume in disparity regression")
    probs = torch.softmax(volume, dim=1)
    bins = torch.arange(volume.shape[1], dtype=volume.dtype,
                        device=volume.device)
    return torch.einsum("bdhw,d->bhw", probs, bins)


def gather_window(volume: torch.Tensor, center: torch.Tensor,
                  radius: int) -> torch.Tensor:
    """Sample ``2r + 1`` disparity taps around a fractional center.

    Linear interpolation along the disparity axis; taps outside
    ``[0, D - 1]`` contribute zero.  ``center`` is ``(B, H, W)`` or
    ``(B, 1, H, W)``; returns ``(B, 2r + 1, H, W)``.
    """
    if center.dim() == 4:
        center = center.squeeze(1)
    b, num_bins, h, w = volume.shape
    offsets = torch.arange(-radius, radius + 1, dtype=volume.dtype,
                           device=volume.device)
    pos = center.unsqueeze(1) + offsets.view(1, -1, 1, 1)
    lo = pos.floor()
    frac = pos - lo
    lo_idx = lo.long()
    hi_idx = lo_idx + 1
    v_lo = volume.gather(1, lo_idx.clamp(0, num_bins - 1))
    v_hi = volume.gather(1, hi_idx.clamp(0, num_bins - 1))
    w_lo = (1.0 - frac) * ((lo_idx >= 0) & (lo_idx <= num_bins - 1)).to(volume.dtype)
    w_hi = frac * ((hi_idx >= 0) & (hi_idx <= num_bins - 1)).to(volume.dtype)
    return w_lo * v_lo + w_hi * v_hi


def find_peak_disparities(volume: torch.Tensor, k: int) -> torch.Tensor:
    """Top-``k`` strict local maxima along the disparity axis.

    Boundary bins compare one-sided.  Peaks are ranked by descending cost
    with ties broken toward the smaller disparity; pixels with fewer than
    ``k`` local maxima are padded with the global argmax.  Returns integer
    bin indices as ``(B, k, H, W)`` in the volume's dtype.
    """
    b, num_bins, h, w = volume.shape
    if num_bins == 1:
        return volume.new_zeros((b, k, h, w))
    up = volume[:, 1:] > volume[:, :-1]    # v[d] > v[d-1]
    down = volume[:, :-1] > volume[:, 1:]  # v[d] > v[d+1]
    is_peak = torch.cat(
        [down[:, :1], up[:, :-1] & down[:, 1:], up[:, -1:]], dim=1)
    neg = torch.finfo(volume.dtype).min
    scores = torch.where(is_peak, volume, torch.full_like(volume, neg))
    _, order = torch.sort(scores, dim=1, descending=True, stable=True)
    top = order[:, :k]
    ranks = torch.arange(k, device=volume.device).view(1, k, 1, 1)
    n_peaks = is_peak.sum(dim=1, keepdim=True)
    global_argmax = volume.argmax(dim=1, keepdim=True)
    disp = torch.where(ranks < n_peaks, top, global_argmax.expand_as(top))
    return disp.to(volume.dtype)


@dataclass
class PeakSet:
    """Per-pixel disparity hypotheses with concatenated cost windows.

    ``windows`` stacks one ``(2 * pad_radius + 1)``-tap window per peak; when
    the gather radius is smaller than the padded radius, outer lanes are
    zero and flagged invalid so downstream softmaxes can ignore them.
    """

    disp: torch.Tensor        # (B, K, H, W) peak bins
    windows: torch.Tensor     # (B, K * (2 * pad_radius + 1), H, W)
    lane_disp: torch.Tensor   # per-lane disparity, same shape as windows
    lane_valid: torch.Tensor  # bool, same shape as windows
    radius: int
    pad_radius: int

    @property
    def peak_count(self) -> int:
        return self.disp.shape[1]


def gather_multi_window(volume: torch.Tensor, peaks: torch.Tensor,
                        radius: int, pad_radius: int | None = None) -> PeakSet:
    """Gather a cost window around each peak, zero-padded to a fixed width."""
    pad_radius = radius if pad_radius is None else pad_radius
    if pad_radius < radius:
        raise DimensionError("pad_radius must be >= gather radius")
    b, num_bins, h, w = volume.shape
    k = peaks.shape[1]
    width = 2 * pad_radius + 1
    windows = volume.new_zeros((b, k * width, h, w))
    lane_disp = volume.new_zeros((b, k * width, h, w))
    lane_valid = torch.zeros((b, k * width, h, w), dtype=torch.bool,
                             device=volume.device)
    offsets = torch.arange(-radius, radius + 1, dtype=volume.dtype,
                           device=volume.device)
    for i in range(k):
        center = peaks[:, i]
        sl = slice(i * width + (pad_radius - radius),
                   i * width + (pad_radius + radius) + 1)
        windows[:, sl] = gather_window(volume, center, radius)
        taps = center.unsqueeze(1) + offsets.view(1, -1, 1, 1)
        lane_disp[:, sl] = taps
        lane_valid[:, sl] = (taps >= 0) & (taps <= num_bins - 1)
    return PeakSet(disp=peaks, windows=windows, lane_disp=lane_disp,
                   lane_valid=lane_valid, radius=radius, pad_radius=pad_radius)


def top_k_peaks(volume: torch.Tensor, k: int, radius: int,
                pad_radius: int | None = None) -> PeakSet:
    """Extract top-``k`` peaks and gather their cost windows from ``volume``."""
    peaks = find_peak_disparities(volume, k)
    return gather_multi_window(volume, peaks, radius, pad_radius)


def scatter_peaks_dense(values: torch.Tensor, peaks: PeakSet,
                        num_bins: int) -> torch.Tensor:
    """Project refined multi-peak costs back onto dense disparity bins.

    ``values`` holds one cost per lane of ``peaks`` (same shape as its
    windows).  Each valid lane writes at its integer lane disparity;
    overlapping lanes keep the maximum.  Unobserved bins take a very
    negative sentinel so peak search never selects them.
    """
    b, lanes, h, w = values.shape
    neg = torch.finfo(values.dtype).min / 4
    dense = values.new_full((b, num_bins, h, w), neg)
    idx = peaks.lane_disp.long().clamp(0, num_bins - 1)
    src = torch.where(peaks.lane_valid, values, torch.full_like(values, neg))
    dense.scatter_reduce_(1, idx, src, reduce="amax", include_self=True)
    return dense
