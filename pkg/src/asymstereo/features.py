"""Trainable convolutional feature extractors.

Three families feed the matching pipeline:

* correlation features at 1/4 scale, L2-normalized per pixel so downstream
  inner products are bounded by 1;
* a multi-scale pyramid (1/4 .. 1/32) whose 1/4 level builds the group-wise
  volume and whose coarser levels guide its 3D regularization;
* context features from the high-quality left view at 1/4, 1/8, 1/16, each
  carrying a tanh-bounded hidden-state initializer half and an injection half.

Extractors are weight-shared across views: the same module is applied to
both images.  All normalization is GroupNorm, so outputs are independent of
batch composition and deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimensionError

CAT_SCALES = (4, 8, 16, 32)
CTX_SCALES = (4, 8, 16)


@dataclass(frozen=True)
class ExtractorConfig:
    c_cor: int = 64
    c_cat: dict = field(default_factory=lambda: {4: 32, 8: 48, 16: 64, 32: 96})
    c_ctx: int = 64
    groups: int = 8

    def __post_init__(self):
        if self.c_cat[4] % self.groups:
            raise DimensionError("c_cat[4] must be divisible by groups")
        low = min([self.c_cor, self.c_ctx] + list(self.c_cat.values()))
        if low < self.groups:
            raise DimensionError("all channel counts must be >= groups")


def _gn(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = _gn(channels)
        self.norm2 = _gn(channels)

    def forward(self, x):
        y = F.silu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return F.silu(x + y)


def _down(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=2, padding=1), _gn(c_out), nn.SiLU())


def _check_input(img: torch.Tensor, multiple: int):
    if img.dim() != 4 or img.shape[1] != 3:
        raise DimensionError(f"expected (B, 3, H, W) input, got {tuple(img.shape)}")
    if img.shape[2] % multiple or img.shape[3] % multiple:
        raise DimensionError(
            f"input size {img.shape[2]}x{img.shape[3]} must be a multiple of {multiple}"
        )


class CorrelationExtractor(nn.Module):
    """3 -> c_cor features at 1/4 scale, unit-norm along channels."""

    def __init__(self, c_cor: int):
        super().__init__()
        self.stem = nn.Sequential(_down(3, 32), ResidualBlock(32))
        self.body = nn.Sequential(_down(32, 48), ResidualBlock(48))
        self.proj = nn.Conv2d(48, c_cor, 1)

    def forward(self, img):
        _check_input(img, 4)
        x = self.proj(self.body(self.stem(img)))
        return F.normalize(x, dim=1, eps=1e-8)


class PyramidExtractor(nn.Module):
    """Multi-scale features at 1/4, 1/8, 1/16, 1/32."""

    def __init__(self, c_cat: dict):
        super().__init__()
        self.stem = nn.Sequential(_down(3, 24), ResidualBlock(24))
        self.levels = nn.ModuleList()
        c_prev = 24
        for s in CAT_SCALES:
            self.levels.append(nn.Sequential(_down(c_prev, c_cat[s]),
                                             ResidualBlock(c_cat[s])))
            c_prev = c_cat[s]

    def forward(self, img) -> dict[int, torch.Tensor]:
        _check_input(img, 32)
        x = self.stem(img)
        out = {}
        for s, level in zip(CAT_SCALES, self.levels):
            x = level(x)
            out[s] = x
        return out


class ContextExtractor(nn.Module):
    """Left-view context at 1/4, 1/8, 1/16.

    Each scale's output has ``c_ctx`` channels: the first half is tanh-bounded
    (hidden-state initializer), the second half a smooth gate injection.
    """

    def __init__(self, c_ctx: int):
        super().__init__()
        self.stem = nn.Sequential(_down(3, 32), ResidualBlock(32))
        self.enter = nn.Sequential(_down(32, c_ctx), ResidualBlock(c_ctx))
        self.step8 = nn.Sequential(_down(c_ctx, c_ctx), ResidualBlock(c_ctx))
        self.step16 = nn.Sequential(_down(c_ctx, c_ctx), ResidualBlock(c_ctx))
        self.heads = nn.ModuleDict(
            {str(s): nn.Conv2d(c_ctx, c_ctx, 3, padding=1) for s in CTX_SCALES})

    def forward(self, img) -> dict[int, torch.Tensor]:
        _check_input(img, 16)
        x4 = self.enter(self.stem(img))
        x8 = self.step8(x4)
        x16 = self.step16(x8)
        out = {}
        for s, x in zip(CTX_SCALES, (x4, x8, x16)):
            y = self.heads[str(s)](x)
            half = y.shape[1] // 2
            out[s] = torch.cat([torch.tanh(y[:, :half]), F.silu(y[:, half:])], dim=1)
        return out


@dataclass
class FeatureBundle:
    f_cor_l: torch.Tensor
    f_cor_r: torch.Tensor
    f_cat_l: dict[int, torch.Tensor]
    f_cat_r4: torch.Tensor
    f_ctx: dict[int, torch.Tensor]

    def ctx_hidden(self, scale: int, width: int | None = None) -> torch.Tensor:
        """Tanh-bounded initializer half (optionally the first ``width`` channels)."""
        half = self.f_ctx[scale].shape[1] // 2
        upper = half if width is None else min(width, half)
        return self.f_ctx[scale][:, :upper]

    def ctx_injection(self, scale: int) -> torch.Tensor:
        half = self.f_ctx[scale].shape[1] // 2
        return self.f_ctx[scale][:, half:]


class FeatureExtractors(nn.Module):
    """The three weight-shared extractor families behind one module."""

    def __init__(self, cfg: ExtractorConfig):
        super().__init__()
        self.cfg = cfg
        self.correlation = CorrelationExtractor(cfg.c_cor)
        self.pyramid = PyramidExtractor(cfg.c_cat)
        self.context = ContextExtractor(cfg.c_ctx)

    def extract_cor(self, img) -> torch.Tensor:
        return self.correlation(img)

    def extract_cat(self, img) -> dict[int, torch.Tensor]:
        return self.pyramid(img)

    def extract_context(self, img) -> dict[int, torch.Tensor]:
        return self.context(img)

    def bundle(self, img_cor_l, img_cor_r, img_cat_l, img_cat_r, img_ctx) -> FeatureBundle:
        cat_l = self.extract_cat(img_cat_l)
        cat_r = self.extract_cat(img_cat_r)
        return FeatureBundle(
            f_cor_l=self.extract_cor(img_cor_l),
            f_cor_r=self.extract_cor(img_cor_r),
            f_cat_l=cat_l,
            f_cat_r4=cat_r[4],
            f_ctx=self.extract_context(img_ctx),
        )
