"""Supervision of both refinement branches, plus a gradient-check harness.

Both branches are supervised at full resolution against the ground-truth
disparity over the valid mask.  Iteration terms are geometrically weighted:
the final iteration has weight exactly 1 and consecutive iterations differ
by a factor of ``gamma``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import EvaluationError, NumericsError

DEFAULT_GAMMA = 0.9
SMOOTH_L1_BETA = 1.0


@dataclass
class LossBreakdown:
    """Branch losses as 0-dim tensors (so ``total`` can drive backward)."""

    l_gru1: torch.Tensor
    l_gru2_init: torch.Tensor
    l_gru2_iters: torch.Tensor
    total: torch.Tensor
    per_iteration: list  # (index, mean |cor err|, mean |cat err|), floats


def _masked_mean_abs(pred: torch.Tensor, gt: torch.Tensor,
                     mask: torch.Tensor) -> torch.Tensor:
    # multiply-and-divide instead of boolean indexing: no nonzero() scan
    count = mask.sum()
    if count == 0:
        raise EvaluationError("loss requested over an empty valid mask")
    diff = (pred.squeeze(1) - gt).abs()
    return (diff * mask).sum() / count


def _iteration_mean_errors(disps: list, gt: torch.Tensor,
                           mask: torch.Tensor) -> torch.Tensor:
    """Per-iteration mean absolute error over the mask, shape ``(N,)``."""
    count = mask.sum()
    if count == 0:
        raise EvaluationError("loss requested over an empty valid mask")
    if not disps:
        return gt.new_zeros((0,))
    preds = torch.stack([d.squeeze(1) for d in disps])      # (N, B, H, W)
    diff = (preds - gt.unsqueeze(0)).abs() * mask.unsqueeze(0)
    return diff.sum(dim=(1, 2, 3)) / count


def _gamma_weights(n: int, gamma: float, like: torch.Tensor) -> torch.Tensor:
    return like.new_tensor([gamma ** (n - i) for i in range(1, n + 1)])


def loss_gru1(cor_disps: list, gt: torch.Tensor, mask: torch.Tensor,
              gamma: float = DEFAULT_GAMMA) -> torch.Tensor:
    """Geometrically weighted L1 over the volume branch's regressed disparities."""
    means = _iteration_mean_errors(cor_disps, gt, mask)
    return (_gamma_weights(len(cor_disps), gamma, gt) * means).sum()


def _smooth_l1(diff: torch.Tensor, beta: float = SMOOTH_L1_BETA) -> torch.Tensor:
    a = diff.abs()
    return torch.where(a < beta, 0.5 * a * a / beta, a - 0.5 * beta)


def loss_gru2(init_disp: torch.Tensor, cat_disps: list, gt: torch.Tensor,
              mask: torch.Tensor, gamma: float = DEFAULT_GAMMA):
    """Smooth-L1 on the initial regression plus weighted L1 over iterations.

    Returns ``(init_term, iteration_term)``.
    """
    count = mask.sum()
    if count == 0:
        raise EvaluationError("loss requested over an empty valid mask")
    init_term = (_smooth_l1(init_disp.squeeze(1) - gt) * mask).sum() / count
    means = _iteration_mean_errors(cat_disps, gt, mask)
    iter_term = (_gamma_weights(len(cat_disps), gamma, gt) * means).sum()
    return init_term, iter_term


def total_loss(init_disp: torch.Tensor, cor_disps: list, cat_disps: list,
               gt: torch.Tensor, mask: torch.Tensor,
               gamma: float = DEFAULT_GAMMA) -> LossBreakdown:
    """Sum of both branch losses with per-iteration diagnostics."""
    count = mask.sum()
    if count == 0:
        raise EvaluationError("loss requested over an empty valid mask")
    cor_means = _iteration_mean_errors(cor_disps, gt, mask)
    cat_means = _iteration_mean_errors(cat_disps, gt, mask)
    l1 = (_gamma_weights(len(cor_disps), gamma, gt) * cor_means).sum()
    l2_init = (_smooth_l1(init_disp.squeeze(1) - gt) * mask).sum() / count
    l2_iters = (_gamma_weights(len(cat_disps), gamma, gt) * cat_means).sum()
    per_iter = [(i + 1, float(c), float(d)) for i, (c, d) in
                enumerate(zip(cor_means.detach(), cat_means.detach()))]
    return LossBreakdown(
        l_gru1=l1, l_gru2_init=l2_init, l_gru2_iters=l2_iters,
        total=l1 + l2_init + l2_iters, per_iteration=per_iter)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    failures: list  # (param name, flat index, analytic, numeric, rel err)

    @property
    def ok(self) -> bool:
        return not self.failures


def gradcheck(scalar_fn, named_params, n_samples: int = 200,
              step: float = 1e-4, tol: float = 1e-3,
              seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``scalar_fn`` re-evaluates the checked scalar from scratch on every call;
    ``named_params`` is an iterable of ``(name, tensor)`` leaf parameters.
    Up to ``n_samples`` parameter entries are sampled uniformly across all
    tensors.  Relative error uses ``|a - f| / max(|a|, |f|, 1e-8)``.
    """
    named_params = [(n, p) for n, p in named_params]
    value = scalar_fn()
    if not torch.isfinite(value):
        raise NumericsError("gradcheck objective is non-finite")
    grads = torch.autograd.grad(value, [p for _, p in named_params],
                                allow_unused=True)
    sizes = [p.numel() for _, p in named_params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    bounds = np.cumsum([0] + sizes)

    max_rel = 0.0
    failures = []
    for flat in sorted(int(i) for i in picks):
        t = int(np.searchsorted(bounds, flat, side="right") - 1)
        j = flat - int(bounds[t])
        name, param = named_params[t]
        with torch.no_grad():
            orig = param.view(-1)[j].item()
            param.view(-1)[j] = orig + step
            f_hi = float(scalar_fn())
            param.view(-1)[j] = orig - step
            f_lo = float(scalar_fn())
            param.view(-1)[j] = orig
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise NumericsError(f"non-finite objective perturbing {name}[{j}]")
        numeric = (f_hi - f_lo) / (2.0 * step)
        analytic = 0.0 if grads[t] is None else float(grads[t].view(-1)[j])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
        if rel > tol:
            failures.append((name, j, analytic, numeric, rel))
    return GradCheckReport(max_rel_err=max_rel, n_checked=len(picks),
                           failures=failures)
