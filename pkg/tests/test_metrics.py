import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from gaze2seg.errors import ValidationError
from gaze2seg.metrics import (boundary, dice, dice_from_counts, evaluate, hausdorff_mm,
                              overlap_counts)
from oracles import hausdorff_all_pairs


class TestDice:
    def test_identity(self):
        m = np.zeros((4, 4), bool)
        m[1:3, 1:3] = True
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), bool)
        b = a.copy()
        a[0, 0] = b[3, 3] = True
        assert dice(a, b) == 0.0

    def test_direct_formula(self):
        assert dice_from_counts(4, 6, 3) == 0.6
        a = np.zeros(10, bool)
        b = np.zeros(10, bool)
        a[:4] = True
        b[1:7] = True
        assert overlap_counts(a, b) == {"prediction": 4, "reference": 6, "intersection": 3}
        assert dice(a, b) == 0.6

    def test_both_empty(self):
        assert dice(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            dice(np.zeros((3, 3)), np.zeros((3, 4)))

    @given(arrays(bool, (6, 7)), arrays(bool, (6, 7)))
    def test_symmetric(self, a, b):
        assert dice(a, b) == dice(b, a)


class TestHausdorff:
    def test_identity(self):
        m = np.zeros((6, 6), bool)
        m[2:5, 1:4] = True
        assert hausdorff_mm(m, m, (1.0, 1.0)) == 0.0

    def test_single_voxels_in_plane(self):
        a = np.zeros((1, 8, 8), bool)
        b = a.copy()
        a[0, 2, 1] = True
        b[0, 2, 6] = True
        assert hausdorff_mm(a, b, (1.5, 0.58, 0.58)) == 2.9

    def test_dilated_square(self):
        a = np.zeros((16, 16), bool)
        a[3:13, 3:13] = True
        b = ndimage.binary_dilation(a)  # cross structuring element
        assert hausdorff_mm(a, b, (1.0, 1.0)) == 1.0
        assert hausdorff_all_pairs(a, b, np.array([1.0, 1.0])) == 1.0
        # a square (8-neighbour) dilation reaches the corners diagonally
        square = ndimage.binary_dilation(a, np.ones((3, 3), bool))
        assert hausdorff_mm(a, square, (1.0, 1.0)) == pytest.approx(np.sqrt(2))

    def test_anisotropic_slices(self):
        a = np.zeros((5, 3, 3), bool)
        b = a.copy()
        a[0, 1, 1] = True
        b[4, 1, 1] = True
        assert hausdorff_mm(a, b, (1.5, 0.58, 0.58)) == pytest.approx(6.0)

    def test_empty_is_error(self):
        a = np.zeros((4, 4), bool)
        b = a.copy()
        b[1, 1] = True
        with pytest.raises(ValidationError, match="empty"):
            hausdorff_mm(a, b, (1.0, 1.0))

    def test_spacing_length(self):
        m = np.ones((2, 2, 2), bool)
        with pytest.raises(ValidationError):
            hausdorff_mm(m, m, (1.0, 1.0))

    def test_boundary_is_in_plane(self):
        m = np.ones((3, 4, 4), bool)
        b = boundary(m)
        # the middle slice's interior is not boundary despite the z-faces
        assert not b[1, 1:3, 1:3].any()
        assert b[1, 0].all()

    @settings(max_examples=60, deadline=None)
    @given(arrays(bool, st.tuples(st.integers(1, 6), st.integers(2, 12), st.integers(2, 12))),
           arrays(bool, st.tuples(st.integers(1, 6), st.integers(2, 12), st.integers(2, 12))),
           st.sampled_from([(1.0, 1.0, 1.0), (1.5, 0.58, 0.58), (2.0, 0.7, 0.9)]))
    def test_matches_brute_force(self, a, b, spacing):
        shape = tuple(min(x, y) for x, y in zip(a.shape, b.shape))
        a = a[:shape[0], :shape[1], :shape[2]]
        b = b[:shape[0], :shape[1], :shape[2]]
        if not a.any() or not b.any():
            return
        got = hausdorff_mm(a, b, spacing)
        assert got == pytest.approx(hausdorff_all_pairs(a, b, np.array(spacing)), abs=1e-12)
        assert got == hausdorff_mm(b, a, spacing)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(arrays(bool, (8, 8)).filter(lambda m: m.any()), min_size=3, max_size=3))
    def test_triangle_inequality(self, masks):
        a, b, c = masks
        sp = (0.58, 0.7)
        assert hausdorff_mm(a, c, sp) <= hausdorff_mm(a, b, sp) + hausdorff_mm(b, c, sp) + 1e-12

    def test_brute_force_on_32_cube(self):
        rng = np.random.default_rng(4)
        zz, yy, xx = np.mgrid[:32, :32, :32]
        a = (zz - 16) ** 2 + (yy - 15) ** 2 + (xx - 17) ** 2 <= 100
        b = (zz - 14) ** 2 / 1.2 + (yy - 17) ** 2 + (xx - 15) ** 2 <= 90
        b |= rng.random(a.shape) > 0.999
        sp = (1.5, 0.58, 0.58)
        assert hausdorff_mm(a, b, sp) == pytest.approx(hausdorff_all_pairs(a, b, np.array(sp)),
                                                        abs=1e-12)


class TestEvaluate:
    def test_identical_masks(self):
        m = np.zeros((3, 8, 8), bool)
        m[1, 2:5, 2:6] = True
        rep = evaluate(m, m, (0.58, 0.58, 1.5))
        assert rep.dsc == 1.0 and rep.hd_mm == 0.0
        assert json.loads(rep.to_json())["counts"]["intersection"] == 12

    def test_restricted_to_slices(self):
        ref = np.zeros((3, 8, 8), bool)
        ref[:, 2:5, 2:5] = True
        pred = np.zeros_like(ref)
        pred[1, 2:5, 2:5] = True
        assert evaluate(pred, ref, (1, 1, 1)).dsc == pytest.approx(0.5)
        rep = evaluate(pred, ref, (1, 1, 1), slices=[1])
        assert rep.dsc == 1.0 and rep.hd_mm == 0.0
        assert any("restricted" in n for n in rep.notes)

    def test_empty_prediction_noted(self):
        ref = np.zeros((2, 4, 4), bool)
        ref[0, 1, 1] = True
        rep = evaluate(np.zeros_like(ref), ref, (1, 1, 1))
        assert rep.dsc == 0.0 and rep.hd_mm is None
        assert "hausdorff undefined: empty mask" in rep.notes

    def test_per_region_rows(self):
        ref = np.zeros((2, 6, 6), bool)
        ref[1, 1:4, 1:4] = True
        region = np.zeros((6, 6), bool)
        region[1:4, 1:3] = True
        rep = evaluate(ref, ref, (0.5, 0.5, 2.0), regions=[(1, 1, region)])
        row = rep.per_region[0]
        assert row["slice"] == 1 and row["dsc"] == pytest.approx(2 * 6 / 15)
        assert row["hd_mm"] == pytest.approx(0.5)
