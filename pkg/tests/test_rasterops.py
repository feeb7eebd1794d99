"""Tests for raster transforms: inpainting, morphology, resize, augmentation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from binsight.errors import NotInpainted, NothingToInpaint, ShapeMismatch
from binsight.geometry import NO_POINT, DepthMap, LabelMask
from binsight.rasterops import (
    AugmentSpec,
    ResizeRecord,
    augment,
    close,
    dilate,
    erode,
    inpaint,
    inverse_resize,
    open,
    resize_with_record,
    standardize,
)


def make_dm(rows, provenance=None):
    """DepthMap from a nested list; NaN marks invalid pixels."""
    heights = np.asarray(rows, dtype=np.float64)
    return DepthMap(
        resolution_mm=1.0,
        origin_x_mm=0.0,
        origin_y_mm=0.0,
        heights=heights,
        valid=~np.isnan(heights),
        provenance=provenance,
    )


def make_mask(rows, valid=None):
    labels = np.asarray(rows, dtype=np.uint8)
    if valid is None:
        valid = np.ones(labels.shape, dtype=bool)
    return LabelMask(labels, np.asarray(valid, dtype=bool))


def random_holey_dm(rng, h, w, invalid_frac):
    heights = rng.uniform(-50, 150, (h, w))
    valid = rng.random((h, w)) >= invalid_frac
    if not valid.any():
        valid[rng.integers(0, h), rng.integers(0, w)] = True
    heights[~valid] = np.nan
    return make_dm(heights)


NAN = float("nan")


# ---------------------------------------------------------------------------
# Inpainting
# ---------------------------------------------------------------------------

class TestInpaint:
    def test_fills_with_the_mean_of_valid_neighbors(self):
        dm = make_dm([[2.0, 4.0], [6.0, NAN]])
        out, _ = inpaint(dm, 3)
        assert out.heights[1, 1] == (2.0 + 4.0 + 6.0) / 3

    def test_fully_valid_map_is_returned_unchanged(self):
        dm = make_dm([[1.0, 2.0], [3.0, 4.0]])
        out, _ = inpaint(dm, 3)
        assert np.array_equal(out.heights, dm.heights)
        assert out.valid.all()

    def test_majority_label_vote(self):
        dm = make_dm([[1.0, NAN], [2.0, 3.0]])
        mask = make_mask([[1, 0], [1, 0]])
        _, out_mask = inpaint(dm, 3, mask)
        assert out_mask.labels[0, 1] == 1  # neighbors voted {1, 1, 0}

    def test_tied_label_vote_goes_to_background(self):
        dm = make_dm([[5.0, NAN, 7.0]])
        mask = make_mask([[1, 0, 0]])
        _, out_mask = inpaint(dm, 3, mask)
        assert out_mask.labels[0, 1] == 0  # neighbors voted {1, 0}

    def test_all_invalid_raises(self):
        with pytest.raises(NothingToInpaint):
            inpaint(make_dm([[NAN, NAN]]), 3)

    def test_kernel_must_be_odd_and_at_least_three(self):
        dm = make_dm([[1.0, NAN]])
        for k in (1, 2, 4):
            with pytest.raises(ValueError):
                inpaint(dm, k)

    def test_mask_shape_mismatch_is_rejected(self):
        with pytest.raises(ShapeMismatch):
            inpaint(make_dm([[1.0, NAN]]), 3, make_mask([[1], [0]]))

    def test_single_valid_pixel_floods_the_whole_raster(self):
        heights = np.full((9, 9), np.nan)
        heights[4, 4] = 12.5
        out, _ = inpaint(make_dm(heights), 3)
        assert out.valid.all()
        assert (out.heights == 12.5).all()

    def test_filled_pixels_lose_their_provenance(self):
        prov = np.array([[3, 8], [1, 5]], dtype=np.int64)
        dm = make_dm([[1.0, NAN], [2.0, 3.0]], provenance=prov)
        out, _ = inpaint(dm, 3)
        assert out.provenance[0, 1] == NO_POINT
        assert out.provenance[0, 0] == 3
        assert out.provenance[1, 0] == 1

    def test_output_mask_is_fully_valid(self):
        dm = make_dm([[1.0, NAN], [2.0, 3.0]])
        _, out_mask = inpaint(dm, 3, make_mask([[1, 0], [1, 0]]))
        assert out_mask.valid.all()

    def test_matches_reference_fill_bit_for_bit(self):
        rng = np.random.default_rng(91)
        for trial in range(20):
            h = int(rng.integers(1, 14))
            w = int(rng.integers(1, 14))
            dm = random_holey_dm(rng, h, w, invalid_frac=float(rng.uniform(0.1, 0.5)))
            labels = rng.integers(0, 2, (h, w)).astype(np.uint8)
            k = int(rng.choice([3, 5]))
            out, out_mask = inpaint(dm, k, make_mask(labels))
            ref_h, ref_l = oracles.inpaint_reference(dm.heights, dm.valid, labels, k)
            assert out.heights.tolist() == ref_h
            assert out_mask.labels.tolist() == ref_l

    def test_original_pixels_survive_bit_identical(self):
        rng = np.random.default_rng(12)
        dm = random_holey_dm(rng, 20, 16, invalid_frac=0.4)
        out, _ = inpaint(dm, 5)
        assert np.array_equal(out.heights[dm.valid], dm.heights[dm.valid])
        assert not out.valid[~dm.valid].any() or out.valid.all()  # all filled
        assert out.valid.all()

    def test_filled_values_stay_within_the_valid_range(self):
        rng = np.random.default_rng(13)
        dm = random_holey_dm(rng, 20, 16, invalid_frac=0.5)
        out, _ = inpaint(dm, 3)
        lo, hi = dm.heights[dm.valid].min(), dm.heights[dm.valid].max()
        assert (out.heights >= lo).all() and (out.heights <= hi).all()

    def test_input_rasters_are_not_mutated(self):
        dm = make_dm([[1.0, NAN], [2.0, 3.0]])
        before = dm.heights.copy()
        before_valid = dm.valid.copy()
        inpaint(dm, 3)
        assert np.array_equal(dm.heights, before, equal_nan=True)
        assert np.array_equal(dm.valid, before_valid)


# ---------------------------------------------------------------------------
# Morphology
# ---------------------------------------------------------------------------

class TestMorphology:
    def test_dilate_grows_an_isolated_pixel_into_a_block(self):
        mask = np.zeros((5, 5), np.uint8)
        mask[2, 2] = 1
        out = dilate(make_mask(mask), 3)
        expected = np.zeros((5, 5), np.uint8)
        expected[1:4, 1:4] = 1
        assert np.array_equal(out.labels, expected)

    def test_dilate_of_all_zeros_is_all_zeros(self):
        out = dilate(make_mask(np.zeros((4, 6), np.uint8)), 3)
        assert not out.labels.any()

    def test_dilate_fills_a_single_hole_in_solid_ones(self):
        mask = np.ones((5, 5), np.uint8)
        mask[2, 2] = 0
        assert dilate(make_mask(mask), 3).labels.all()

    def test_erode_shrinks_a_block_to_its_center(self):
        out = erode(make_mask(np.ones((3, 3), np.uint8)), 3)
        expected = np.zeros((3, 3), np.uint8)
        expected[1, 1] = 1
        assert np.array_equal(out.labels, expected)

    def test_erode_strips_a_one_pixel_border(self):
        out = erode(make_mask(np.ones((10, 10), np.uint8)), 3)
        expected = np.zeros((10, 10), np.uint8)
        expected[1:9, 1:9] = 1
        assert np.array_equal(out.labels, expected)

    def test_erode_removes_an_isolated_pixel(self):
        mask = np.zeros((5, 5), np.uint8)
        mask[2, 2] = 1
        assert not erode(make_mask(mask), 3).labels.any()

    def test_close_fills_single_pixel_holes(self):
        mask = np.zeros((7, 7), np.uint8)
        mask[1:6, 1:6] = 1
        mask[3, 3] = 0
        out = close(make_mask(mask), 3)
        solid = np.zeros((7, 7), np.uint8)
        solid[1:6, 1:6] = 1
        assert np.array_equal(out.labels, solid)

    def test_close_preserves_isolated_specks(self):
        mask = np.zeros((7, 7), np.uint8)
        mask[3, 3] = 1
        out = close(make_mask(mask), 3)
        assert np.array_equal(out.labels, mask)

    def test_close_of_empty_mask_is_empty(self):
        assert not close(make_mask(np.zeros((6, 6), np.uint8)), 3).labels.any()

    def test_open_removes_isolated_specks(self):
        mask = np.zeros((7, 7), np.uint8)
        mask[3, 3] = 1
        assert not open(make_mask(mask), 3).labels.any()

    def test_open_leaves_a_solid_block_unchanged(self):
        mask = np.zeros((7, 7), np.uint8)
        mask[1:6, 1:6] = 1
        out = open(make_mask(mask), 3)
        assert np.array_equal(out.labels, mask)

    def test_open_preserves_single_pixel_holes(self):
        mask = np.ones((7, 7), np.uint8)
        mask[3, 3] = 0
        out = open(make_mask(mask), 3)
        assert out.labels[3, 3] == 0

    def test_kernel_validation(self):
        mask = make_mask(np.zeros((3, 3), np.uint8))
        for op in (dilate, erode, close, open):
            with pytest.raises(ValueError):
                op(mask, 2)

    def test_all_four_match_the_set_based_reference(self):
        rng = np.random.default_rng(55)
        pairs = [
            (dilate, oracles.dilate_reference),
            (erode, oracles.erode_reference),
            (close, oracles.close_reference),
            (open, oracles.open_reference),
        ]
        for _ in range(12):
            h = int(rng.integers(1, 33))
            w = int(rng.integers(1, 33))
            labels = (rng.random((h, w)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
            k = int(rng.choice([3, 5]))
            for op, ref in pairs:
                assert np.array_equal(op(make_mask(labels), k).labels, ref(labels, k))

    def test_erosion_is_dual_to_dilation_on_interiors(self):
        # Away from borders (where the zero-padding convention differs for
        # the complement), erode(m) == ~dilate(~m).
        rng = np.random.default_rng(8)
        for k in (3, 5):
            labels = (rng.random((24, 24)) < 0.5).astype(np.uint8)
            er = erode(make_mask(labels), k).labels
            dual = 1 - dilate(make_mask(1 - labels), k).labels
            assert np.array_equal(er[k:-k, k:-k], dual[k:-k, k:-k])


# ---------------------------------------------------------------------------
# Resize and its inverse
# ---------------------------------------------------------------------------

class TestResize:
    def test_small_frame_is_padded_right_and_bottom(self):
        dm = make_dm(np.arange(700 * 600, dtype=np.float64).reshape(700, 600))
        out, _, rec = resize_with_record(dm, None, 800)
        assert (rec.pad_right, rec.pad_bottom) == (200, 100)
        assert (rec.crop_right, rec.crop_bottom) == (0, 0)
        assert out.heights.shape == (800, 800)
        assert (out.heights[:700, :600] == dm.heights).all()
        assert (out.heights[700:, :] == 0).all()
        assert (out.heights[:, 600:] == 0).all()
        assert out.valid.all()

    def test_large_frame_is_cropped_to_the_top_left_window(self):
        dm = make_dm(np.arange(850 * 900, dtype=np.float64).reshape(850, 900))
        out, _, rec = resize_with_record(dm, None, 800)
        assert (rec.crop_right, rec.crop_bottom) == (100, 50)
        assert (rec.pad_right, rec.pad_bottom) == (0, 0)
        assert np.array_equal(out.heights, dm.heights[:800, :800])

    def test_exact_size_is_the_identity_with_a_zero_record(self):
        dm = make_dm(np.ones((800, 800)))
        out, _, rec = resize_with_record(dm, None, 800)
        assert (rec.pad_right, rec.pad_bottom, rec.crop_right, rec.crop_bottom) == (0, 0, 0, 0)
        assert np.array_equal(out.heights, dm.heights)

    def test_padded_mask_pixels_are_background_and_valid(self):
        dm = make_dm(np.ones((2, 3)))
        mask = make_mask(np.ones((2, 3), np.uint8))
        _, out_mask, _ = resize_with_record(dm, mask, 4)
        assert out_mask.labels[:2, :3].all()
        assert not out_mask.labels[2:, :].any()
        assert not out_mask.labels[:, 3:].any()
        assert out_mask.valid.all()

    def test_record_rejects_inconsistent_bookkeeping(self):
        with pytest.raises(ValueError):
            ResizeRecord(original_w=10, original_h=10, target_size=12, pad_right=1)
        with pytest.raises(ValueError):
            ResizeRecord(
                original_w=10, original_h=10, target_size=10, pad_right=2, crop_right=2
            )

    def test_inverse_of_pad_discards_the_padding(self):
        mask = make_mask(np.ones((800, 800), np.uint8))
        rec = ResizeRecord(600, 700, 800, pad_right=200, pad_bottom=100)
        out = inverse_resize(mask, rec)
        assert out.labels.shape == (700, 600)
        assert out.labels.all()

    def test_inverse_of_crop_repads_with_invalid_background(self):
        mask = make_mask(np.ones((800, 800), np.uint8))
        rec = ResizeRecord(900, 850, 800, crop_right=100, crop_bottom=50)
        out = inverse_resize(mask, rec)
        assert out.labels.shape == (850, 900)
        assert out.labels[:800, :800].all()
        assert not out.labels[800:, :].any() and not out.labels[:, 800:].any()
        assert not out.valid[800:, :].any() and not out.valid[:, 800:].any()

    def test_inverse_of_zero_record_is_identity(self):
        mask = make_mask((np.arange(16).reshape(4, 4) % 2).astype(np.uint8))
        out = inverse_resize(mask, ResizeRecord(4, 4, 4))
        assert np.array_equal(out.labels, mask.labels)

    def test_inverse_rejects_wrong_sized_masks(self):
        with pytest.raises(ShapeMismatch):
            inverse_resize(make_mask(np.zeros((3, 3), np.uint8)), ResizeRecord(4, 4, 4))

    @settings(max_examples=80)
    @given(
        w=st.integers(1, 40),
        h=st.integers(1, 40),
        target=st.integers(1, 40),
        seed=st.integers(0, 2**31),
    )
    def test_inverse_resize_undoes_resize(self, w, h, target, seed):
        rng = np.random.default_rng(seed)
        heights = rng.uniform(0, 10, (h, w))
        labels = rng.integers(0, 2, (h, w)).astype(np.uint8)
        dm = make_dm(heights)
        sized_dm, sized_mask, rec = resize_with_record(dm, make_mask(labels), target)
        back = inverse_resize(sized_mask, rec)
        assert back.labels.shape == (h, w)
        if rec.crop_right == 0 and rec.crop_bottom == 0:
            assert np.array_equal(back.labels, labels)
            assert back.valid.all()
        else:
            keep_h, keep_w = min(h, target), min(w, target)
            assert np.array_equal(back.labels[:keep_h, :keep_w], labels[:keep_h, :keep_w])
            assert not back.labels[keep_h:, :].any()
            assert not back.labels[:, keep_w:].any()
            assert not back.valid[keep_h:, :].any()
            assert not back.valid[:, keep_w:].any()


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

class TestStandardize:
    def test_two_value_example(self):
        out = standardize(make_dm([[1.0, 3.0]]))
        assert out.heights.tolist() == [[-1.0, 1.0]]

    def test_constant_image_maps_to_zeros(self):
        out = standardize(make_dm(np.full((4, 4), 7.25)))
        assert (out.heights == 0).all()

    def test_output_statistics(self):
        rng = np.random.default_rng(77)
        out = standardize(make_dm(rng.uniform(0, 300, (50, 40))))
        assert abs(out.heights.mean()) <= 1e-6
        assert abs(out.heights.std() - 1.0) <= 1e-6

    def test_invalid_pixels_are_rejected(self):
        with pytest.raises(NotInpainted):
            standardize(make_dm([[1.0, NAN]]))

    def test_provenance_rides_along(self):
        prov = np.array([[2, 9]], dtype=np.int64)
        out = standardize(make_dm([[1.0, 3.0]], provenance=prov))
        assert np.array_equal(out.provenance, prov)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

class TestAugment:
    def frame(self, h=4, w=6, seed=5):
        rng = np.random.default_rng(seed)
        dm = make_dm(rng.uniform(0, 9, (h, w)))
        mask = make_mask(rng.integers(0, 2, (h, w)).astype(np.uint8))
        return dm, mask

    def test_double_horizontal_flip_is_identity(self):
        dm, mask = self.frame()
        spec = AugmentSpec(flip_h=True)
        dm2, mask2 = augment(*augment(dm, mask, spec), spec)
        assert np.array_equal(dm2.heights, dm.heights)
        assert np.array_equal(mask2.labels, mask.labels)

    def test_four_quarter_turns_are_identity(self):
        dm, mask = self.frame()
        spec = AugmentSpec(rotation_deg=90)
        for _ in range(4):
            dm, mask = augment(dm, mask, spec)
        dm0, mask0 = self.frame()
        assert np.array_equal(dm.heights, dm0.heights)
        assert np.array_equal(mask.labels, mask0.labels)

    def test_rotation_swaps_the_frame_dimensions(self):
        dm, mask = self.frame(h=2, w=3)
        out_dm, out_mask = augment(dm, mask, AugmentSpec(rotation_deg=90))
        assert out_dm.heights.shape == (3, 2)
        assert out_mask.labels.shape == (3, 2)

    def test_flips_and_rotation_permute_pixels_exactly(self):
        dm, mask = self.frame()
        out_dm, out_mask = augment(
            dm, mask, AugmentSpec(flip_h=True, flip_v=True, rotation_deg=180)
        )
        expected = np.rot90(dm.heights[::-1, ::-1], 2)
        assert np.array_equal(out_dm.heights, expected)
        assert np.array_equal(out_mask.labels, np.rot90(mask.labels[::-1, ::-1], 2))

    def test_doubling_scale_replicates_each_pixel_in_a_2x2_block(self):
        dm, mask = self.frame(h=4, w=4)
        out_dm, out_mask = augment(dm, mask, AugmentSpec(scale=2.0))
        assert out_dm.heights.shape == (8, 8)
        for i in range(8):
            for j in range(8):
                assert out_dm.heights[i, j] == dm.heights[i // 2, j // 2]
                assert out_mask.labels[i, j] == mask.labels[i // 2, j // 2]

    def test_doubling_scale_preserves_the_label_histogram_ratio(self):
        dm, mask = self.frame(h=4, w=4)
        _, out_mask = augment(dm, mask, AugmentSpec(scale=2.0))
        assert out_mask.labels.sum() == 4 * mask.labels.sum()

    def test_halving_scale_keeps_every_other_pixel(self):
        dm, mask = self.frame(h=4, w=4)
        out_dm, out_mask = augment(dm, mask, AugmentSpec(scale=0.5))
        assert out_dm.heights.shape == (2, 2)
        for i in range(2):
            for j in range(2):
                assert out_dm.heights[i, j] == dm.heights[2 * i, 2 * j]

    def test_scaled_labels_stay_binary(self):
        dm, mask = self.frame(h=7, w=5)
        for scale in (0.5, 0.7, 1.3, 2.0):
            _, out_mask = augment(dm, mask, AugmentSpec(scale=scale))
            assert set(np.unique(out_mask.labels)) <= {0, 1}

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            AugmentSpec(rotation_deg=45)
        with pytest.raises(ValueError):
            AugmentSpec(scale=0.25)
        with pytest.raises(ValueError):
            AugmentSpec(scale=2.5)

    def test_shape_mismatch_is_rejected(self):
        dm, _ = self.frame(h=3, w=3)
        with pytest.raises(ShapeMismatch):
            augment(dm, make_mask(np.zeros((2, 2), np.uint8)), AugmentSpec())
