import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from acnescore.core import (
    ImageBuffer,
    Rect,
    SeverityLabel,
    clamp_score,
    luma,
    mean_luma,
)
from acnescore.errors import InvalidScore

from conftest import solid_image


class TestClampScore:
    def test_in_range_identity(self):
        assert clamp_score(3.2) == 3.2

    def test_lower_clamp(self):
        assert clamp_score(0.4) == 1.0

    def test_upper_clamp(self):
        assert clamp_score(6.1) == 5.0

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), float("-inf")])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(InvalidScore):
            clamp_score(bad)

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_idempotent_and_in_range(self, x):
        once = clamp_score(x)
        assert 1.0 <= once <= 5.0
        assert clamp_score(once) == once


class TestSeverityLabel:
    def test_values(self):
        assert [int(l) for l in SeverityLabel] == [1, 2, 3, 4, 5]

    @pytest.mark.parametrize("bad", [0, 6, -1, 7])
    def test_rejects_out_of_domain(self, bad):
        with pytest.raises(ValueError):
            SeverityLabel(bad)

    def test_display_names(self):
        assert SeverityLabel.ALMOST_CLEAR.display_name == "Almost Clear"
        assert SeverityLabel.SEVERE.display_name == "Severe"


class TestImageBuffer:
    def test_dimensions(self):
        img = solid_image(12, 7)
        assert (img.width, img.height) == (12, 7)
        assert img.pixels.shape == (7, 12, 3)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((4, 4, 4), dtype=np.uint8))

    def test_rejects_wrong_dtype(self):
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((4, 4, 3), dtype=np.float32))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            ImageBuffer(np.zeros((0, 4, 3), dtype=np.uint8))

    def test_pixels_immutable(self):
        img = solid_image(4, 4)
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 1

    def test_source_array_not_aliased(self):
        src = np.zeros((4, 4, 3), dtype=np.uint8)
        img = ImageBuffer(src)
        src[0, 0, 0] = 99
        assert img.pixels[0, 0, 0] == 0

    def test_crop(self):
        px = np.arange(4 * 6 * 3, dtype=np.uint8).reshape(4, 6, 3)
        img = ImageBuffer(px)
        crop = img.crop(Rect(1, 2, 3, 2))
        assert (crop.width, crop.height) == (3, 2)
        assert np.array_equal(crop.pixels, px[2:4, 1:4])

    def test_crop_out_of_bounds(self):
        img = solid_image(4, 4)
        with pytest.raises(ValueError):
            img.crop(Rect(2, 2, 4, 4))
        with pytest.raises(ValueError):
            img.crop(Rect(0, 0, 0, 1))


class TestRect:
    def test_area_and_edges(self):
        r = Rect(2, 3, 4, 5)
        assert (r.area, r.x2, r.y2) == (20, 6, 8)

    def test_intersect(self):
        a = Rect(0, 0, 10, 10)
        assert a.intersect(Rect(5, 5, 10, 10)) == Rect(5, 5, 5, 5)
        disjoint = a.intersect(Rect(20, 20, 5, 5))
        assert disjoint.area == 0

    def test_negative_extent_area_is_zero(self):
        assert Rect(0, 0, -3, 5).area == 0


class TestLuma:
    def test_pure_channels(self):
        assert math.isclose(mean_luma(solid_image(2, 2, (255, 0, 0))), 0.299 * 255)
        assert math.isclose(mean_luma(solid_image(2, 2, (0, 255, 0))), 0.587 * 255)
        assert math.isclose(mean_luma(solid_image(2, 2, (0, 0, 255))), 0.114 * 255)

    def test_gray_identity(self):
        assert math.isclose(mean_luma(solid_image(3, 3, (128, 128, 128))), 128.0)

    def test_per_pixel_shape(self):
        assert luma(solid_image(5, 4)).shape == (4, 5)
