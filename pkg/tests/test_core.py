import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardlabel.core import Criterion, Image, clamp_image, criterion_satisfied, l2_distance
from hardlabel.errors import ShapeError


def img(values, c=1, w=None, h=1):
    values = list(values)
    w = len(values) if w is None else w
    return Image(np.array(values, dtype=float), c, w, h)


class TestImage:
    def test_size_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            Image(np.zeros(5), 1, 2, 2)

    def test_nonpositive_dims_rejected(self):
        with pytest.raises(ShapeError):
            Image(np.zeros(0), 1, 0, 1)

    def test_buffer_is_frozen(self):
        image = img([0.1, 0.2])
        with pytest.raises(ValueError):
            image.data[0] = 5.0

    def test_from_chw_round_trip(self):
        arr = np.arange(24, dtype=float).reshape(2, 3, 4) / 24.0
        image = Image.from_chw(arr)
        assert image.dims == (2, 3, 4)
        assert np.array_equal(image.as_chw(), arr)


class TestL2Distance:
    def test_identical_images_have_zero_distance(self):
        a = img([0.3, 0.7, 0.1])
        assert l2_distance(a, a) == 0.0

    def test_single_pixel_unit_difference(self):
        a = img([0.0, 0.0, 0.0])
        b = img([0.0, 1.0, 0.0])
        assert l2_distance(a, b) == 1.0

    def test_matches_elementwise_sum_of_squares(self):
        # Independent reference: explicit per-element accumulation.
        rng = np.random.default_rng(42)
        a = Image(rng.uniform(0, 1, 12), 3, 2, 2)
        b = Image(rng.uniform(0, 1, 12), 3, 2, 2)
        total = 0.0
        for x, y in zip(a.data, b.data):
            total += (x - y) ** 2
        assert l2_distance(a, b) == pytest.approx(total ** 0.5, rel=1e-15)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            l2_distance(img([0.0, 0.0]), img([0.0, 0.0, 0.0]))

    @given(st.lists(st.floats(0, 1), min_size=4, max_size=4),
           st.lists(st.floats(0, 1), min_size=4, max_size=4),
           st.lists(st.floats(0, 1), min_size=4, max_size=4))
    @settings(max_examples=100, deadline=None)
    def test_metric_properties(self, xs, ys, zs):
        a, b, c = img(xs), img(ys), img(zs)
        assert l2_distance(a, b) == l2_distance(b, a)
        assert l2_distance(a, b) >= 0.0
        assert l2_distance(a, c) <= l2_distance(a, b) + l2_distance(b, c) + 1e-9


class TestCriterion:
    def test_targeted_hit(self):
        assert criterion_satisfied(Criterion(targeted=True, reference_label=3), 3)

    def test_untargeted_same_label_fails(self):
        assert not criterion_satisfied(Criterion(targeted=False, reference_label=3), 3)

    def test_untargeted_other_label_succeeds(self):
        assert criterion_satisfied(Criterion(targeted=False, reference_label=3), 7)

    @given(st.integers(0, 50))
    @settings(max_examples=30, deadline=None)
    def test_reference_label_identities(self, k):
        assert Criterion(targeted=True, reference_label=k).satisfied(k)
        assert not Criterion(targeted=False, reference_label=k).satisfied(k)


class TestClampImage:
    def test_clips_above(self):
        assert clamp_image(img([1.3])).data[0] == 1.0

    def test_clips_below(self):
        assert clamp_image(img([-0.2])).data[0] == 0.0

    def test_in_range_unchanged(self):
        a = img([0.0, 0.25, 1.0])
        assert np.array_equal(clamp_image(a).data, a.data)

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=8))
    @settings(max_examples=100, deadline=None)
    def test_idempotent(self, xs):
        once = clamp_image(img(xs))
        twice = clamp_image(once)
        assert np.array_equal(once.data, twice.data)
