import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semcom import imgproc
from semcom.errors import BadMagic, ClassOutOfRange, IoFailure, ThresholdOrder

from reference_impls import ref_bilinear, ref_canny


class TestCanny:
    def test_constant_input_has_no_edges(self):
        edges = imgproc.canny_edges(np.full((16, 16), 0.7))
        assert edges.bits.sum() == 0

    def test_threshold_order_rejected(self):
        with pytest.raises(ThresholdOrder):
            imgproc.canny_edges(np.zeros((16, 16)), low=0.3, high=0.3)
        with pytest.raises(ThresholdOrder):
            imgproc.canny_edges(np.zeros((16, 16)), low=0.4, high=0.2)

    def test_vertical_step_gives_one_pixel_line(self):
        gray = np.zeros((16, 16))
        gray[:, 8:] = 1.0
        edges = imgproc.canny_edges(gray, sigma=1.0, low=0.05, high=0.2)
        expected = ref_canny(gray, 1.0, 0.05, 0.2)
        np.testing.assert_array_equal(edges.bits, expected)
        # one column, rows bounded away from the border
        cols = edges.bits.sum(axis=1)
        assert (cols[1:-1] == 1).all()
        assert cols[0] == 0 and cols[-1] == 0

    def test_matches_reference_on_nested_rectangles(self):
        inst = np.zeros((20, 24), dtype=np.int64)
        inst[3:17, 3:21] = 1
        inst[7:13, 8:16] = 2
        gray = inst / inst.max()
        edges = imgproc.canny_edges(gray)
        expected = ref_canny(gray, imgproc.CANNY_SIGMA, imgproc.CANNY_LOW, imgproc.CANNY_HIGH)
        np.testing.assert_array_equal(edges.bits, expected)
        # both boundaries are traced: edges near the outer and inner rects
        assert edges.bits[2:5, 6:18].any()
        assert edges.bits[6:9, 9:15].any()

    def test_matches_reference_on_random_blobs(self):
        rng = np.random.default_rng(7)
        inst = np.zeros((18, 18), dtype=np.int64)
        for k in range(1, 4):
            cy, cx = rng.integers(4, 14, size=2)
            inst[cy - 2 : cy + 3, cx - 3 : cx + 3] = k
        gray = inst / max(inst.max(), 1)
        edges = imgproc.canny_edges(gray)
        expected = ref_canny(gray, imgproc.CANNY_SIGMA, imgproc.CANNY_LOW, imgproc.CANNY_HIGH)
        np.testing.assert_array_equal(edges.bits, expected)

    def test_output_subset_of_low_threshold_magnitude(self):
        rng = np.random.default_rng(3)
        gray = rng.random((24, 24))
        edges = imgproc.canny_edges(gray, sigma=1.0, low=0.1, high=0.3)
        blurred = imgproc.gaussian_blur(gray, 1.0)
        gx, gy = imgproc.sobel_gradients(blurred)
        mag = np.hypot(gx, gy)
        assert (mag[edges.bits == 1] >= 0.1).all()


class TestOneHot:
    def test_single_class_all_ones(self):
        oh = imgproc.one_hot(np.zeros((4, 5), dtype=int), 1)
        assert oh.tensor.shape == (4, 5, 1)
        assert (oh.tensor == 1).all()

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        seg = rng.integers(0, 6, size=(12, 20))
        oh = imgproc.one_hot(seg, 6)
        np.testing.assert_array_equal(oh.argmax(), seg)

    def test_channel_sums(self):
        seg = np.array([[0, 1], [2, 0]])
        oh = imgproc.one_hot(seg, 3)
        assert tuple(oh.tensor.sum(axis=(0, 1))) == (2, 1, 1)

    def test_out_of_range_rejected(self):
        with pytest.raises(ClassOutOfRange):
            imgproc.one_hot(np.array([[0, 3]]), 3)

    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_property(self, k, seed):
        rng = np.random.default_rng(seed)
        seg = rng.integers(0, k, size=(6, 9))
        np.testing.assert_array_equal(imgproc.one_hot(seg, k).argmax(), seg)


class TestUpsample:
    def test_one_by_one_is_constant(self):
        out = imgproc.upsample_bilinear(np.array([[0.37]]), 5, 7)
        assert out.shape == (5, 7)
        np.testing.assert_allclose(out, 0.37)

    def test_same_size_is_identity(self):
        rng = np.random.default_rng(1)
        src = rng.random((6, 11))
        np.testing.assert_allclose(imgproc.upsample_bilinear(src, 6, 11), src)

    def test_checkerboard_2x2_to_4x4_matches_reference(self):
        src = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = imgproc.upsample_bilinear(src, 4, 4)
        np.testing.assert_allclose(out, ref_bilinear(src, 4, 4))
        # midpoint samples interpolate symmetrically around the 0.5 center
        np.testing.assert_allclose(out[1:3, 1:3], [[0.375, 0.625], [0.625, 0.375]])

    def test_exact_at_coinciding_sample_centers(self):
        # 3x upsampling maps input centers onto output pixels 1, 4, 7, ...
        rng = np.random.default_rng(2)
        src = rng.random((3, 4))
        out = imgproc.upsample_bilinear(src, 9, 12)
        np.testing.assert_allclose(out[1::3, 1::3], src)

    def test_range_bounded_and_constant_preserved(self):
        rng = np.random.default_rng(5)
        src = rng.random((3, 5))
        out = imgproc.upsample_bilinear(src, 17, 23)
        assert out.min() >= src.min() - 1e-12
        assert out.max() <= src.max() + 1e-12
        np.testing.assert_allclose(
            imgproc.upsample_bilinear(np.full((2, 2), 0.3), 8, 8), 0.3
        )


class TestNormalize:
    def test_constant_map_becomes_zeros(self):
        np.testing.assert_array_equal(
            imgproc.minmax_normalize(np.full((3, 3), 5.0)), np.zeros((3, 3))
        )

    def test_unit_range_unchanged(self):
        arr = np.array([[0.0, 0.25], [0.75, 1.0]])
        np.testing.assert_allclose(imgproc.minmax_normalize(arr), arr)

    def test_affine_example(self):
        arr = np.array([[2.0, 4.0], [6.0, 8.0]])
        np.testing.assert_allclose(
            imgproc.minmax_normalize(arr), [[0.0, 1.0 / 3.0], [2.0 / 3.0, 1.0]]
        )


class TestRasterIO:
    def test_write_read_round_trip_rgb(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(9, 13, 3), dtype=np.uint8)
        p = tmp_path / "img.ppm"
        imgproc.write_raster(p, img)
        np.testing.assert_array_equal(imgproc.read_raster(p), img)

    def test_write_read_round_trip_gray(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, size=(5, 6), dtype=np.uint8)
        p = tmp_path / "img.pgm"
        imgproc.write_raster(p, img)
        np.testing.assert_array_equal(imgproc.read_raster(p), img)

    def test_golden_single_pixel_bytes(self, tmp_path):
        p = tmp_path / "one.ppm"
        imgproc.write_raster(p, np.array([[[1, 2, 3]]], dtype=np.uint8))
        assert p.read_bytes() == b"P6\n1 1\n255\n\x01\x02\x03"

    def test_truncated_file_rejected(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P6\n4 4\n255\n\x00\x00")
        with pytest.raises(BadMagic):
            imgproc.read_raster(p)

    def test_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(BadMagic):
            imgproc.read_raster(p)

    def test_missing_file_is_io_failure(self, tmp_path):
        with pytest.raises(IoFailure):
            imgproc.read_raster(tmp_path / "absent.ppm")

    def test_non_u8_rejected(self, tmp_path):
        with pytest.raises(IoFailure):
            imgproc.write_raster(tmp_path / "x.ppm", np.zeros((2, 2, 3)))
