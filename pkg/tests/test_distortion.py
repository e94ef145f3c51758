import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from asymstereo import distribution_distortion, distortion_study
from asymstereo.distortion import write_distortion_csv, plot_distortion
from asymstereo.errors import DimensionError
from test_fusion import micro_model, micro_sample


class TestDistributionDistortion:
    def test_identical_costs_zero(self, rng):
        c = torch.from_numpy(rng.standard_normal((1, 8, 4, 4)))
        dd = distribution_distortion(c, c.clone())
        assert dd.abs().max() <= 1e-9

    def test_shift_invariance(self, rng):
        c = torch.from_numpy(rng.standard_normal((1, 8, 4, 4)))
        shifted = c + 3.7
        dd = distribution_distortion(shifted, c)
        assert dd.abs().max() <= 1e-9

    def test_three_bin_hand_case(self):
        p = np.array([0.5, 0.3, 0.2])
        q = np.array([0.2, 0.3, 0.5])
        c_test = torch.from_numpy(np.log(p)).view(1, 3, 1, 1)
        c_ref = torch.from_numpy(np.log(q)).view(1, 3, 1, 1)
        dd = float(distribution_distortion(c_test, c_ref)[0, 0, 0])
        assert dd == pytest.approx(0.2748, abs=1e-4)
        # hand value: sum_i p_i ln(p_i / q_i) = 0.3 * ln(2.5)
        assert dd == pytest.approx(0.3 * np.log(2.5), abs=1e-12)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_nonnegative(self, seed):
        r = np.random.default_rng(seed)
        a = torch.from_numpy(r.standard_normal((1, 6, 3, 3)) * 3)
        b = torch.from_numpy(r.standard_normal((1, 6, 3, 3)) * 3)
        assert distribution_distortion(a, b).min() >= -1e-15

    def test_shape_mismatch_rejected(self, rng):
        a = torch.zeros((1, 4, 2, 2))
        b = torch.zeros((1, 5, 2, 2))
        with pytest.raises(DimensionError):
            distribution_distortion(a, b)


class TestDistortionStudy:
    def _samples(self, n=2):
        return [micro_sample(seed=10 + i, k=1, grayscale=False)
                for i in range(n)]

    def test_factor_one_is_a_tie(self):
        model, _ = micro_model()
        reports = distortion_study(model, self._samples(1), [1])
        assert reports[0].pct_corr_favor_degr == pytest.approx(0.5)
        assert reports[0].pct_cat_favor_degr == pytest.approx(0.5)
        assert reports[0].dd_corr_asym.max() == 0.0

    def test_duplicated_samples_same_percentages(self):
        model, _ = micro_model()
        once = distortion_study(model, self._samples(2), [2])
        twice = distortion_study(model, self._samples(2) * 2, [2])
        assert once[0].pct_corr_favor_degr == pytest.approx(
            twice[0].pct_corr_favor_degr)
        assert once[0].pct_cat_favor_degr == pytest.approx(
            twice[0].pct_cat_favor_degr)

    def test_report_shapes_and_rates(self):
        model, _ = micro_model()
        reports = distortion_study(model, self._samples(2), [2, 4])
        assert [r.k for r in reports] == [2, 4]
        for r in reports:
            assert r.dd_corr_asym.shape == (2, 8, 16)
            assert 0.0 <= r.pct_corr_favor_degr <= 1.0
            assert 0.0 <= r.pct_cat_favor_degr <= 1.0
            assert (r.dd_corr_asym >= 0).all()
            assert (r.dd_cat_degr >= 0).all()

    def test_incompatible_factor_rejected(self):
        model, _ = micro_model()
        with pytest.raises(DimensionError):
            distortion_study(model, self._samples(1), [6])  # 64 % 6 != 0

    def test_csv_and_plot_outputs(self, tmp_path):
        model, _ = micro_model()
        reports = distortion_study(model, self._samples(1), [1, 2])
        write_distortion_csv(reports, tmp_path / "distortion.csv")
        plot_distortion(reports, tmp_path / "distortion.png")
        text = (tmp_path / "distortion.csv").read_text().splitlines()
        assert text[0].startswith("k,pct_corr_favor_degr")
        assert len(text) == 3
        assert (tmp_path / "distortion.png").stat().st_size > 0
