import numpy as np
import pytest
import torch

from asymstereo import (build_correlation_volume, build_groupwise_volume,
                        gather_window, initial_disparity, top_k_peaks)
from asymstereo.errors import DimensionError, NumericsError
from asymstereo.features import ExtractorConfig
from asymstereo.volumes import (CostVolumeRegularizer, find_peak_disparities,
                                gather_multi_window, scatter_peaks_dense)


def unit_features(rng, b=1, c=6, h=4, w=8):
    f = torch.from_numpy(rng.standard_normal((b, c, h, w)))
    return torch.nn.functional.normalize(f, dim=1)


# ---------------------------------------------------------------------------
# brute-force oracles
# ---------------------------------------------------------------------------

def correlation_oracle(f_l, f_r, num_bins):
    b, c, h, w = f_l.shape
    out = np.zeros((b, num_bins, h, w))
    for bi in range(b):
        for d in range(num_bins):
            for y in range(h):
                for x in range(w):
                    if x - d >= 0:
                        out[bi, d, y, x] = float(
                            (f_l[bi, :, y, x] * f_r[bi, :, y, x - d]).sum())
    return out


def groupwise_oracle(f_l, f_r, num_bins, groups):
    b, c, h, w = f_l.shape
    per = c // groups
    out = np.zeros((b, groups, num_bins, h, w))
    for bi in range(b):
        for g in range(groups):
            sl = slice(g * per, (g + 1) * per)
            for d in range(num_bins):
                for y in range(h):
                    for x in range(w):
                        if x - d >= 0:
                            dot = float((f_l[bi, sl, y, x]
                                         * f_r[bi, sl, y, x - d]).sum())
                            out[bi, g, d, y, x] = dot / groups
    return out


def gather_oracle(volume, center, radius):
    b, num_bins, h, w = volume.shape
    out = np.zeros((b, 2 * radius + 1, h, w))
    for bi in range(b):
        for t, off in enumerate(range(-radius, radius + 1)):
            for y in range(h):
                for x in range(w):
                    pos = float(center[bi, y, x]) + off
                    lo = int(np.floor(pos))
                    frac = pos - lo
                    val = 0.0
                    if 0 <= lo <= num_bins - 1:
                        val += (1 - frac) * float(volume[bi, lo, y, x])
                    if 0 <= lo + 1 <= num_bins - 1:
                        val += frac * float(volume[bi, lo + 1, y, x])
                    out[bi, t, y, x] = val
    return out


def peaks_oracle(volume, k):
    """Exhaustive per-pixel peak enumeration with the stated tie-break."""
    b, num_bins, h, w = volume.shape
    out = np.zeros((b, k, h, w))
    for bi in range(b):
        for y in range(h):
            for x in range(w):
                prof = volume[bi, :, y, x].numpy()
                peaks = []
                for d in range(num_bins):
                    left_ok = d == 0 or prof[d] > prof[d - 1]
                    right_ok = d == num_bins - 1 or prof[d] > prof[d + 1]
                    if left_ok and right_ok:
                        peaks.append(d)
                peaks.sort(key=lambda d: (-prof[d], d))
                fill = int(np.argmax(prof))
                chosen = (peaks + [fill] * k)[:k]
                out[bi, :, y, x] = chosen
    return out


def softargmax_oracle(volume):
    b, num_bins, h, w = volume.shape
    out = np.zeros((b, h, w))
    for bi in range(b):
        for y in range(h):
            for x in range(w):
                prof = volume[bi, :, y, x].numpy()
                e = np.exp(prof - prof.max())
                p = e / e.sum()
                out[bi, y, x] = (p * np.arange(num_bins)).sum()
    return out


# ---------------------------------------------------------------------------
# correlation volume
# ---------------------------------------------------------------------------

class TestCorrelationVolume:
    def test_identical_views_unit_score_at_zero(self, rng):
        f = unit_features(rng)
        vol = build_correlation_volume(f, f, 6)
        np.testing.assert_allclose(vol[:, 0].numpy(), 1.0, atol=1e-9)

    def test_magnitude_bounded_by_one(self, rng):
        f_l, f_r = unit_features(rng), unit_features(rng)
        vol = build_correlation_volume(f_l, f_r, 6)
        assert vol.abs().max() <= 1 + 1e-9

    def test_matches_loop_oracle(self, rng):
        f_l, f_r = unit_features(rng, b=2), unit_features(rng, b=2)
        vol = build_correlation_volume(f_l, f_r, 5)
        expect = correlation_oracle(f_l, f_r, 5)
        np.testing.assert_allclose(vol.numpy(), expect, atol=1e-9)

    def test_self_similarity_peaks_at_zero(self, rng):
        f = unit_features(rng, c=8, h=4, w=8)
        vol = build_correlation_volume(f, f, 6)
        assert (vol.argmax(dim=1) == 0).all()

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(DimensionError):
            build_correlation_volume(unit_features(rng),
                                     unit_features(rng, w=6), 4)


class TestGroupwiseVolume:
    def test_single_group_equals_full_product(self, rng):
        f_l, f_r = unit_features(rng), unit_features(rng)
        gw = build_groupwise_volume(f_l, f_r, 5, groups=1)
        full = build_correlation_volume(f_l, f_r, 5)
        np.testing.assert_allclose(gw[:, 0].numpy(), full.numpy(), atol=1e-9)

    def test_self_correlation_gives_group_norms(self, rng):
        f = unit_features(rng, c=6)
        gw = build_groupwise_volume(f, f, 4, groups=3)
        grouped = f.view(1, 3, 2, 4, 8)
        expect = (grouped ** 2).sum(2) / 3
        np.testing.assert_allclose(gw[:, :, 0].numpy(), expect.numpy(),
                                   atol=1e-9)

    def test_matches_loop_oracle(self, rng):
        f_l = unit_features(rng, c=6, h=3, w=6)
        f_r = unit_features(rng, c=6, h=3, w=6)
        gw = build_groupwise_volume(f_l, f_r, 4, groups=2)
        expect = groupwise_oracle(f_l, f_r, 4, groups=2)
        np.testing.assert_allclose(gw.numpy(), expect, atol=1e-9)

    def test_group_sum_identity_with_correlation(self, rng):
        # summing groups and multiplying by G recovers the full inner product
        f_l, f_r = unit_features(rng, c=8), unit_features(rng, c=8)
        gw = build_groupwise_volume(f_l, f_r, 5, groups=4)
        full = build_correlation_volume(f_l, f_r, 5)
        np.testing.assert_allclose((gw.sum(1) * 4).numpy(), full.numpy(),
                                   atol=1e-9)

    def test_indivisible_channels_rejected(self, rng):
        with pytest.raises(DimensionError):
            build_groupwise_volume(unit_features(rng, c=6),
                                   unit_features(rng, c=6), 4, groups=4)


# ---------------------------------------------------------------------------
# lookup primitives
# ---------------------------------------------------------------------------

class TestGatherWindow:
    def test_integer_center_gives_exact_slices(self, rng):
        vol = torch.from_numpy(rng.standard_normal((1, 8, 4, 6)))
        center = torch.full((1, 4, 6), 3.0)
        win = gather_window(vol, center, 1)
        np.testing.assert_allclose(win.numpy(), vol[:, 2:5].numpy(),
                                   atol=1e-12)

    def test_half_center_averages_neighbors(self, rng):
        vol = torch.from_numpy(rng.standard_normal((1, 8, 2, 2)))
        center = torch.full((1, 2, 2), 5.5)
        win = gather_window(vol, center, 1)
        expect = 0.5 * (vol[:, 4:7] + vol[:, 5:8])
        np.testing.assert_allclose(win.numpy(), expect.numpy(), atol=1e-12)

    def test_matches_loop_oracle(self, rng):
        vol = torch.from_numpy(rng.standard_normal((2, 8, 3, 5)))
        center = torch.from_numpy(rng.uniform(-2, 9, size=(2, 3, 5)))
        win = gather_window(vol, center, 2)
        np.testing.assert_allclose(win.numpy(),
                                   gather_oracle(vol, center, 2), atol=1e-9)

    def test_out_of_range_taps_are_zero(self, rng):
        vol = torch.ones((1, 4, 2, 2), dtype=torch.float64)
        center = torch.full((1, 2, 2), 0.0)
        win = gather_window(vol, center, 2)
        np.testing.assert_allclose(win[:, 0].numpy(), 0.0)  # tap at d=-2
        np.testing.assert_allclose(win[:, 2].numpy(), 1.0)  # tap at d=0


class TestTopKPeaks:
    def test_unimodal_pads_with_single_mode(self):
        prof = torch.tensor([0.0, 1.0, 3.0, 2.0, 0.5, 0.1])
        vol = prof.view(1, 6, 1, 1).expand(1, 6, 2, 2).clone()
        ps = top_k_peaks(vol, 3, 1)
        np.testing.assert_array_equal(ps.disp.numpy(),
                                      np.full((1, 3, 2, 2), 2.0))

    def test_equal_peaks_tie_break_to_smaller(self):
        prof = torch.zeros(24)
        prof[5] = prof[20] = 2.0
        vol = prof.view(1, 24, 1, 1)
        ps = top_k_peaks(vol, 2, 1)
        assert ps.disp[0, 0, 0, 0] == 5.0
        assert ps.disp[0, 1, 0, 0] == 20.0

    def test_matches_exhaustive_enumeration(self, rng):
        for trial in range(20):
            vol = torch.from_numpy(rng.standard_normal((1, 12, 4, 4)))
            ps = top_k_peaks(vol, 3, 1)
            expect = peaks_oracle(vol, 3)
            np.testing.assert_array_equal(ps.disp.numpy(), expect)

    def test_k1_is_global_argmax_when_local(self, rng):
        for trial in range(10):
            vol = torch.from_numpy(rng.standard_normal((1, 10, 3, 3)))
            ps = top_k_peaks(vol, 1, 1)
            gmax = vol.argmax(dim=1)
            # global max that is also a local max must be selected
            np.testing.assert_array_equal(ps.disp[:, 0].long().numpy(),
                                          gmax.numpy())

    def test_windows_match_gather(self, rng):
        vol = torch.from_numpy(rng.standard_normal((1, 10, 3, 3)))
        ps = top_k_peaks(vol, 2, 2)
        first = gather_window(vol, ps.disp[:, 0], 2)
        np.testing.assert_allclose(ps.windows[:, :5].numpy(), first.numpy(),
                                   atol=1e-12)

    def test_padded_lanes_flagged_invalid(self, rng):
        vol = torch.from_numpy(rng.standard_normal((1, 10, 2, 2)))
        peaks = find_peak_disparities(vol, 2)
        ps = gather_multi_window(vol, peaks, radius=1, pad_radius=3)
        width = 7
        assert ps.windows.shape[1] == 2 * width
        # outer padding lanes must be zero and invalid
        assert not ps.lane_valid[:, 0].any()
        assert not ps.lane_valid[:, 1].any()
        np.testing.assert_allclose(ps.windows[:, :2].numpy(), 0.0)

    def test_scatter_restores_peak_costs(self, rng):
        vol = torch.from_numpy(rng.standard_normal((1, 10, 3, 3)))
        ps = top_k_peaks(vol, 2, 1)
        dense = scatter_peaks_dense(ps.windows, ps, 10)
        # the peak bins must carry their original costs
        got = dense.gather(1, ps.disp.long())
        expect = vol.gather(1, ps.disp.long())
        np.testing.assert_allclose(got.numpy(), expect.numpy(), atol=1e-12)


class TestInitialDisparity:
    def test_peaked_volume_returns_peak(self):
        vol = torch.zeros((1, 16, 2, 2), dtype=torch.float64)
        vol[:, 7] = 50.0
        out = initial_disparity(vol)
        np.testing.assert_allclose(out.numpy(), 7.0, atol=1e-3)

    def test_uniform_volume_gives_midpoint(self):
        vol = torch.zeros((1, 48, 2, 2), dtype=torch.float64)
        out = initial_disparity(vol)
        np.testing.assert_allclose(out.numpy(), 23.5, atol=1e-12)

    def test_matches_softmax_loop(self, rng):
        vol = torch.from_numpy(rng.standard_normal((2, 9, 3, 4)))
        out = initial_disparity(vol)
        np.testing.assert_allclose(out.numpy(), softargmax_oracle(vol),
                                   atol=1e-9)

    def test_output_in_bin_range(self, rng):
        vol = torch.from_numpy(rng.standard_normal((1, 8, 4, 4)) * 10)
        out = initial_disparity(vol)
        assert out.min() >= 0 and out.max() <= 7

    def test_non_finite_rejected(self):
        vol = torch.zeros((1, 4, 2, 2))
        vol[0, 0, 0, 0] = float("nan")
        with pytest.raises(NumericsError):
            initial_disparity(vol)


# ---------------------------------------------------------------------------
# regularizer
# ---------------------------------------------------------------------------

def micro_regularizer(rng):
    torch.manual_seed(0)
    cfg = ExtractorConfig(c_cat={4: 8, 8: 8, 16: 8, 32: 8}, groups=4)
    reg = CostVolumeRegularizer(4, {8: 8, 16: 8, 32: 8}).double()
    raw = torch.from_numpy(rng.standard_normal((1, 4, 2, 16, 32)))
    guides = {8: torch.from_numpy(rng.standard_normal((1, 8, 8, 16))),
              16: torch.from_numpy(rng.standard_normal((1, 8, 4, 8))),
              32: torch.from_numpy(rng.standard_normal((1, 8, 2, 4)))}
    return reg, raw, guides


class TestRegularizer:
    def test_output_shape(self, rng):
        reg, raw, guides = micro_regularizer(rng)
        out = reg(raw, guides)
        assert out.shape == (1, 2, 16, 32)

    def test_gradients_reach_inputs_and_guides(self, rng):
        reg, raw, guides = micro_regularizer(rng)
        raw.requires_grad_(True)
        for g in guides.values():
            g.requires_grad_(True)
        reg(raw, guides).square().sum().backward()
        assert raw.grad.abs().sum() > 0
        for g in guides.values():
            assert g.grad.abs().sum() > 0

    def test_finite_difference_gradients(self, rng):
        from asymstereo import gradcheck
        reg, raw, guides = micro_regularizer(rng)

        def objective():
            probe = reg(raw, guides)
            return (probe * weight).sum()

        torch.manual_seed(1)
        weight = torch.randn(1, 2, 16, 32, dtype=torch.float64)
        report = gradcheck(objective, reg.named_parameters(), n_samples=60,
                           step=1e-4, tol=1e-3)
        assert report.max_rel_err <= 1e-3, report.failures[:3]
