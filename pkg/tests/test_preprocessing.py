import numpy as np
import pytest

from app.exceptions import ConfigurationError, ShapeMismatchError
from app.preprocessing import (
    PreprocessTransform,
    TransformKind,
    amplification_factor,
    apply,
    fit_transform,
    invert,
    quantize_round_even,
)


def _images(seed=0, shape=(4, 3, 2, 2)):
    return np.random.default_rng(seed).uniform(0, 1, shape)


class TestApplyInvert:
    """Affine transforms and their inverses."""

    def test_identity(self):
        t = PreprocessTransform.identity()
        x = np.full((1, 3, 2, 2), 0.5)
        np.testing.assert_array_equal(apply(t, x), x)
        np.testing.assert_array_equal(invert(t, x), x)

    def test_mean_pixel_subtract(self):
        t = PreprocessTransform.mean_pixel_subtract(np.full((3, 2, 2), 0.4))
        np.testing.assert_allclose(apply(t, np.full((1, 3, 2, 2), 0.5)), 0.1)
        np.testing.assert_allclose(invert(t, np.full((1, 3, 2, 2), 0.1)), 0.5)

    def test_per_channel_normalize(self, standardize):
        np.testing.assert_array_equal(apply(standardize, np.full((1, 3, 2, 2), 0.75)), 1.0)
        np.testing.assert_array_equal(invert(standardize, np.ones((1, 3, 2, 2))), 0.75)

    def test_per_channel_values_differ_by_channel(self):
        t = PreprocessTransform.per_channel_normalize([0.0, 0.5, 1.0], [1.0, 0.5, 0.25])
        out = apply(t, np.ones((1, 3, 1, 1)))
        np.testing.assert_allclose(out.ravel(), [1.0, 1.0, 0.0])

    def test_round_trip_within_one_ulp(self, standardize):
        x = _images()
        # one ulp of the pixel scale
        np.testing.assert_allclose(invert(standardize, apply(standardize, x)), x, rtol=0, atol=np.spacing(1.0))

    def test_round_trip_general_statistics(self):
        t = PreprocessTransform.per_channel_normalize([0.49, 0.48, 0.45], [0.25, 0.24, 0.26])
        x = _images(1)
        np.testing.assert_allclose(invert(t, apply(t, x)), x, rtol=0, atol=1e-15)

    def test_dtype_preserved(self, standardize):
        x = _images().astype(np.float32)
        assert apply(standardize, x).dtype == np.float32

    def test_channel_mismatch(self, standardize):
        with pytest.raises(ShapeMismatchError):
            apply(standardize, np.zeros((1, 1, 2, 2)))

    def test_mean_image_mismatch(self):
        t = PreprocessTransform.mean_pixel_subtract(np.zeros((3, 2, 2)))
        with pytest.raises(ShapeMismatchError):
            apply(t, np.zeros((1, 3, 4, 4)))


class TestValidation:
    def test_std_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            PreprocessTransform.per_channel_normalize([0.5], [0.0])

    def test_identity_has_no_parameters(self):
        with pytest.raises(ConfigurationError):
            PreprocessTransform(TransformKind.IDENTITY, mean=[0.5])

    def test_mean_pixel_needs_image_mean(self):
        with pytest.raises(ConfigurationError):
            PreprocessTransform.mean_pixel_subtract([0.5, 0.5, 0.5])


class TestAmplification:
    def test_standardization_amplifies_by_inverse_std(self, standardize):
        np.testing.assert_array_equal(amplification_factor(standardize), [4.0, 4.0, 4.0])

    def test_identity_and_mean_subtraction_do_not_amplify(self):
        assert amplification_factor(PreprocessTransform.identity()).tolist() == [1.0, 1.0, 1.0]
        t = PreprocessTransform.mean_pixel_subtract(np.full((3, 2, 2), 0.4))
        assert amplification_factor(t).tolist() == [1.0, 1.0, 1.0]

    @pytest.mark.parametrize("transform", [
        PreprocessTransform.identity(),
        PreprocessTransform.mean_pixel_subtract(np.full((3, 2, 2), 0.3)),
        PreprocessTransform.per_channel_normalize([0.4, 0.5, 0.6], [0.2, 0.25, 0.3]),
    ])
    def test_perturbation_scales_by_factor(self, transform):
        x = _images(2)
        delta = np.random.default_rng(3).uniform(-0.05, 0.05, x.shape)
        factor = amplification_factor(transform).reshape(1, -1, 1, 1)
        np.testing.assert_allclose(apply(transform, x + delta) - apply(transform, x), factor * delta,
                                   rtol=1e-9, atol=1e-12)

    def test_valid_range_is_image_of_unit_interval(self, standardize):
        lower, upper = standardize.valid_range((3, 2, 2))
        np.testing.assert_array_equal(lower, -2.0)
        np.testing.assert_array_equal(upper, 2.0)
        assert lower.shape == (1, 3, 2, 2)


class TestQuantize:
    def test_tie_rounds_to_even(self):
        assert quantize_round_even(np.array([0.5]))[0] == 128 / 255

    def test_endpoints_fixed(self):
        np.testing.assert_array_equal(quantize_round_even(np.array([0.0, 1.0])), [0.0, 1.0])

    def test_nearest_level(self):
        assert quantize_round_even(np.array([100.4 / 255]))[0] == 100 / 255

    def test_idempotent(self):
        once = quantize_round_even(_images(4))
        np.testing.assert_array_equal(quantize_round_even(once), once)

    def test_proximity(self):
        x = _images(5)
        assert np.abs(quantize_round_even(x) - x).max() <= 0.5 / 255 + 1e-12

    def test_perturbed_pair_stays_close(self):
        x = _images(6)
        delta = np.random.default_rng(7).uniform(-8 / 255, 8 / 255, x.shape)
        perturbed = np.clip(x + delta, 0, 1)
        gap = np.abs(quantize_round_even(perturbed) - quantize_round_even(x)).max()
        assert gap <= np.abs(perturbed - x).max() + 1 / 255 + 1e-12

    def test_rejects_out_of_range(self):
        with pytest.raises(ConfigurationError):
            quantize_round_even(np.array([1.2]))

    def test_keeps_float32(self):
        x = _images(8).astype(np.float32)
        assert quantize_round_even(x).dtype == np.float32


class TestFit:
    def test_per_channel_statistics(self):
        x = _images(9, (50, 3, 4, 4))
        t = fit_transform(TransformKind.PER_CHANNEL_NORMALIZE, x)
        np.testing.assert_allclose(t.mean, x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(t.std, x.std(axis=(0, 2, 3)))

    def test_mean_pixel(self):
        x = _images(10, (20, 3, 4, 4))
        t = fit_transform(TransformKind.MEAN_PIXEL_SUBTRACT, x)
        np.testing.assert_allclose(t.mean, x.mean(axis=0))

    def test_constant_channel_cannot_be_standardized(self):
        with pytest.raises(ConfigurationError):
            fit_transform(TransformKind.PER_CHANNEL_NORMALIZE, np.full((4, 3, 2, 2), 0.5))
