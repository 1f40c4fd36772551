import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gaze2seg import saliency as sal
from gaze2seg.errors import ValidationError
from gaze2seg.saliency import (SaliencyParams, compute_saliency, most_salient_pixel,
                               multi_scale_saliency, patch_distance,
                               refine_with_foci, resample_area, saliency_window,
                               single_scale_saliency)
from oracles import saliency_all_pairs


class TestPatchDistance:
    def test_identical(self):
        a = np.full((7, 7), 0.3)
        assert patch_distance(a, a, (0, 0), (0.4, 0.1), 3.0) == 0.0

    def test_unit_offset_same_position(self):
        assert patch_distance(np.zeros((7, 7)), np.ones((7, 7)), (0.2, 0.2), (0.2, 0.2), 3.0) == 1.0

    def test_position_damping(self):
        d = patch_distance(np.zeros((3, 3)), np.ones((3, 3)), (0, 0), (0.6, 0.8), 3.0)
        assert d == pytest.approx(0.25)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            patch_distance(np.zeros((7, 7)), np.zeros((5, 5)), (0, 0), (0, 0), 3.0)


class TestSingleScale:
    def test_constant_window_is_zero(self):
        s = single_scale_saliency(np.full((12, 12), 42.0), 1.0, SaliencyParams(patch_size=3))
        assert not s.any()

    def test_bright_block_is_most_salient(self):
        img = np.zeros((8, 8))
        img[3:5, 3:5] = 1.0
        params = SaliencyParams(patch_size=3, k=8, scales=(1.0,))
        s = single_scale_saliency(img, 1.0, params, native=True)
        np.testing.assert_allclose(s, saliency_all_pairs(img, 3, 8, 3.0), rtol=0, atol=1e-9)
        block = np.zeros_like(img, bool)
        block[3:5, 3:5] = True
        assert s[block].min() > s[~block].max()

    @pytest.mark.parametrize("k", [3, 10, 200])
    def test_matches_brute_force(self, k):
        rng = np.random.default_rng(k)
        img = rng.normal(size=(12, 11))
        params = SaliencyParams(patch_size=5, k=k, lam=2.0)
        s = single_scale_saliency(img, 1.0, params, native=True)
        np.testing.assert_allclose(s, saliency_all_pairs(img, 5, k, 2.0), rtol=0, atol=1e-9)

    def test_chunked_candidate_path(self, monkeypatch):
        # force the GEMM pre-selection and chunk boundaries on a small window
        monkeypatch.setattr(sal, "_CANDIDATE_SLACK", 2)
        monkeypatch.setattr(sal, "_ROW_CHUNK", 7)
        rng = np.random.default_rng(3)
        img = rng.integers(0, 4, size=(10, 12)).astype(float)
        params = SaliencyParams(patch_size=3, k=6, lam=3.0)
        s = single_scale_saliency(img, 1.0, params, native=True)
        np.testing.assert_allclose(s, saliency_all_pairs(img, 3, 6, 3.0), rtol=0, atol=1e-9)

    def test_scale_smaller_than_patch_skipped(self):
        assert single_scale_saliency(np.zeros((10, 10)), 0.5, SaliencyParams()) is None

    def test_downsampled_field_resized_back(self):
        rng = np.random.default_rng(0)
        s = single_scale_saliency(rng.normal(size=(20, 24)), 0.5, SaliencyParams(patch_size=3))
        assert s.shape == (20, 24)

    def test_area_resample_preserves_mean(self):
        rng = np.random.default_rng(1)
        img = rng.normal(size=(20, 30))
        assert resample_area(img, (7, 11)).mean() == pytest.approx(img.mean())


class TestMultiScale:
    def test_mean_of_scales(self, monkeypatch):
        fields = {1.0: 0.2, 0.5: 0.6}
        monkeypatch.setattr(sal, "single_scale_saliency",
                            lambda w, r, p, native=False: np.full(np.shape(w), fields[r]))
        mean, per = multi_scale_saliency(np.zeros((4, 4)), SaliencyParams(scales=(1.0, 0.5)))
        np.testing.assert_allclose(mean, 0.4)
        assert sorted(per) == [0.5, 1.0]

    def test_unusable_scales_dropped(self):
        rng = np.random.default_rng(2)
        mean, per = multi_scale_saliency(rng.normal(size=(10, 10)), SaliencyParams())
        assert sorted(per) == [0.8, 1.0]
        np.testing.assert_allclose(mean, (per[1.0] + per[0.8]) / 2)

    def test_no_usable_scale(self):
        with pytest.raises(ValidationError, match="enlarge"):
            multi_scale_saliency(np.zeros((5, 5)), SaliencyParams())


class TestRefine:
    def test_far_corner_fully_attenuated(self):
        mean = np.full((3, 3), 0.5)
        mean[0, 0] = 0.9
        smap = refine_with_foci(mean, SaliencyParams(foci_threshold=0.99))
        assert smap.foci.sum() == 1
        assert smap.values[0, 0] == 0.9
        assert smap.values[2, 2] == 0.0
        assert smap.values[0, 2] == pytest.approx(0.5 * (1 - 2 / np.hypot(2, 2)))

    def test_uniform_field_unchanged(self):
        smap = refine_with_foci(np.full((4, 5), 0.3), SaliencyParams())
        np.testing.assert_array_equal(smap.values, 0.3)


windows = arrays(np.float64, st.tuples(st.integers(7, 14), st.integers(7, 14)),
                 elements=st.floats(-1000, 1000, allow_nan=False))


class TestProperties:
    params = SaliencyParams(patch_size=3, k=8, scales=(1.0, 0.5))

    @settings(max_examples=40, deadline=None)
    @given(windows)
    def test_refined_bounded_by_mean(self, img):
        smap = compute_saliency(img, self.params)
        assert np.all(smap.values <= smap.mean + 1e-15)
        assert np.all(smap.values >= 0) and np.all(smap.mean <= 1)

    @settings(max_examples=40, deadline=None)
    @given(windows, st.floats(-500, 500), st.floats(0.01, 100))
    def test_affine_intensity_invariance(self, img, shift, gain):
        a = compute_saliency(img, self.params).values
        b = compute_saliency(img * gain + shift, self.params).values
        span = np.ptp(img)
        if span * gain < 1e-6 or span < 1e-6:
            return
        np.testing.assert_allclose(a, b, atol=1e-6)


class TestMostSalient:
    def test_tie_break_row_major(self):
        v = np.zeros((3, 3))
        v[1, 2] = v[2, 0] = 1.0
        assert most_salient_pixel(v) == (1, 2)

    def test_restricted(self):
        v = np.arange(9.0).reshape(3, 3)
        restrict = np.zeros((3, 3), bool)
        restrict[0, :2] = True
        assert most_salient_pixel(v, restrict) == (0, 1)

    def test_empty_restriction(self):
        with pytest.raises(ValueError):
            most_salient_pixel(np.zeros((2, 2)), np.zeros((2, 2), bool))


def test_saliency_window_clipped():
    assert saliency_window((2, 2), 3.0, 2.0, (1.0, 1.0), (10, 8)) == (0, 0, 8, 8)
    assert saliency_window((5, 4), 1.0, 1.0, (0.5, 0.5), (20, 20)) == (0, 1, 9, 10)
