import numpy as np
from django.test import SimpleTestCase

from polsar.core import (
    UNLABELED,
    FeatureNormalizer,
    HermitianCov3,
    PolsarRaster,
    concat_bands,
    devectorize,
    devectorize_many,
    extract_pixel_samples,
    extract_samples,
    split_samples,
    stack_samples,
    vectorize_covariance,
    window_for_pixel,
    window_starts,
)
from polsar.exceptions import ConfigurationError, ValidationError
from polsar.seeding import derive_seed, make_rng

from .utils import random_hermitian_pd


def labeled_raster(height=8, width=10, num_classes=2, seed=0):
    rng = make_rng(seed, 'fixture')
    features = rng.random((height, width, 9)).astype(np.float32)
    labels = np.full((height, width), UNLABELED, dtype=np.uint8)
    labels[:, : width // 2] = 0
    labels[:, width // 2:] = num_classes - 1
    labels[0, 0] = UNLABELED
    return PolsarRaster(features, labels, 'band1')


def uniform_raster(size):
    """A fully labeled size x size raster of class 0."""
    return PolsarRaster(np.ones((size, size, 9), dtype=np.float32), np.zeros((size, size), dtype=np.uint8), 'band1')


class CovarianceTestCase(SimpleTestCase):
    def setUp(self):
        self.rng = make_rng(11, 'core')

    def test_vectorize_round_trip(self):
        """Test that devectorize(vectorize(C)) reproduces C exactly on 1,000 matrices"""
        for _ in range(1000):
            covariance = random_hermitian_pd(self.rng)
            # exactly Hermitian: real diagonal, conjugate triangles
            covariance = (covariance + covariance.conj().T) / 2
            features = vectorize_covariance(covariance)
            self.assertEqual(features.shape, (9,))
            np.testing.assert_array_equal(devectorize(features).entries, covariance)

    def test_feature_order(self):
        """Test the documented Feature9 ordering"""
        covariance = np.array([
            [1.0, 2 + 3j, 4 + 5j],
            [2 - 3j, 6.0, 7 + 8j],
            [4 - 5j, 7 - 8j, 9.0],
        ])
        np.testing.assert_array_equal(vectorize_covariance(covariance), [1, 2, 3, 4, 5, 6, 7, 8, 9])

    def test_non_hermitian_rejected(self):
        """Test that an asymmetric matrix is rejected"""
        covariance = np.eye(3, dtype=np.complex128)
        covariance[0, 1] = 1.0
        with self.assertRaises(ValidationError):
            vectorize_covariance(covariance)

    def test_devectorize_rejects_bad_vectors(self):
        """Test wrong length, negative diagonal and non-finite entries"""
        with self.assertRaises(ValidationError):
            devectorize(np.ones(8))
        with self.assertRaises(ValidationError):
            devectorize([-1.0, 0, 0, 0, 0, 1.0, 0, 0, 1.0])
        with self.assertRaises(ValidationError):
            devectorize([np.nan, 0, 0, 0, 0, 1.0, 0, 0, 1.0])

    def test_indefinite_covariance_rejected(self):
        """Test that a matrix with a clearly negative eigenvalue is rejected"""
        with self.assertRaises(ValidationError):
            HermitianCov3(np.array([[1.0, 2.0, 0], [2.0, 1.0, 0], [0, 0, 1.0]]))

    def test_devectorize_many_is_hermitian(self):
        """Test that batched devectorization is exactly Hermitian"""
        features = self.rng.standard_normal((5, 7, 9))
        covariances = devectorize_many(features)
        np.testing.assert_array_equal(covariances, np.conj(np.swapaxes(covariances, -1, -2)))


class SampleExtractionTestCase(SimpleTestCase):
    def setUp(self):
        self.raster = labeled_raster()

    def test_training_windows_have_labeled_centers(self):
        """Test that every training sample is labeled by its center pixel"""
        samples = extract_samples(self.raster, 3)
        self.assertEqual(len(samples), 6 * 8)
        for sample in samples:
            self.assertEqual(sample.patch.shape, (3, 3, 9))
            self.assertEqual(sample.label, int(self.raster.labels[sample.center]))
            self.assertNotEqual(sample.label, UNLABELED)

    def test_stride(self):
        """Test that the stride thins the window grid"""
        self.assertEqual(len(extract_samples(self.raster, 4, stride=2, training=False)), 3 * 4)

    def test_border_windows_shift_in(self):
        """Test a stride that skips H - s still adds the window ending on the border"""
        samples = extract_samples(uniform_raster(13), 12, stride=5)
        self.assertEqual({sample.origin for sample in samples}, {(0, 0), (0, 1), (1, 0), (1, 1)})
        self.assertEqual(window_starts(13, 12, 5), [0, 1])
        self.assertEqual(window_starts(17, 4, 5), [0, 5, 10, 13])
        self.assertEqual(window_starts(12, 4, 4), [0, 4, 8])
        centers = {sample.center for sample in extract_samples(uniform_raster(10), 3, stride=3)}
        self.assertEqual(len(centers), 16)
        self.assertIn((8, 8), centers)
        self.assertIn((1, 8), centers)

    def test_thirteen_by_thirteen(self):
        """Test H=W=13, s=12, stride=1 gives four samples and H=W=s=12 gives one"""
        samples = extract_samples(uniform_raster(13), 12)
        self.assertEqual(len(samples), 4)
        self.assertEqual([sample.origin for sample in samples], [(0, 0), (0, 1), (1, 0), (1, 1)])
        self.assertEqual([sample.center for sample in samples], [(6, 6), (6, 7), (7, 6), (7, 7)])
        self.assertEqual(len(extract_samples(uniform_raster(12), 12)), 1)

    def test_window_too_large(self):
        """Test that s > min(H, W) is a configuration error"""
        with self.assertRaises(ConfigurationError):
            extract_samples(self.raster, 9)

    def test_training_requires_labels(self):
        """Test that training extraction refuses an unlabeled raster"""
        with self.assertRaises(ValidationError):
            extract_samples(self.raster.with_labels(None), 3)

    def test_pixel_windows_shift_inside_image(self):
        """Test border windows are shifted, never padded"""
        self.assertEqual(window_for_pixel(0, 0, 8, 10, 4), (0, 0))
        self.assertEqual(window_for_pixel(7, 9, 8, 10, 4), (4, 6))
        self.assertEqual(window_for_pixel(4, 5, 8, 10, 4), (2, 3))
        samples = extract_pixel_samples(self.raster, 4)
        self.assertEqual(len(samples), 8 * 10 - 1)
        for sample in samples:
            top, left = sample.origin
            row, col = sample.center
            self.assertTrue(top <= row < top + 4 and left <= col < left + 4)

    def test_stack_samples(self):
        """Test stacking into (n, s, s, C) and a label vector"""
        patches, labels = stack_samples(extract_samples(self.raster, 3)[:5])
        self.assertEqual(patches.shape, (5, 3, 3, 9))
        self.assertEqual(labels.dtype, np.int64)


class SplitTestCase(SimpleTestCase):
    def test_split_is_stratified_and_seeded(self):
        """Test every class reaches the train split and the split is reproducible"""
        samples = extract_samples(labeled_raster(), 3)
        train, heldout = split_samples(samples, 0.1, make_rng(5, 'split'))
        again, _ = split_samples(samples, 0.1, make_rng(5, 'split'))
        self.assertEqual([s.origin for s in train], [s.origin for s in again])
        self.assertEqual({s.label for s in train}, {0, 1})
        self.assertEqual(len(train) + len(heldout), len(samples))

    def test_invalid_ratio(self):
        """Test that train_ratio outside (0, 1] is rejected"""
        with self.assertRaises(ConfigurationError):
            split_samples([], 0.0, make_rng(0))


class BandsAndNormalizerTestCase(SimpleTestCase):
    def test_concat_bands(self):
        """Test two 9-channel rasters become one 18-channel raster"""
        first = labeled_raster(seed=1)
        second = PolsarRaster(labeled_raster(seed=2).features, first.labels, 'band2')
        joint = concat_bands(first, second)
        self.assertEqual(joint.channels, 18)
        self.assertEqual(joint.bands, 2)
        np.testing.assert_array_equal(joint.features[..., 9:], second.features)

    def test_concat_rejects_misaligned(self):
        """Test that rasters of different size cannot be combined"""
        with self.assertRaises(ValidationError):
            concat_bands(labeled_raster(), labeled_raster(height=9))

    def test_normalizer(self):
        """Test fitted standardization gives zero mean and unit std"""
        patches = make_rng(3).normal(5.0, 2.0, size=(50, 3, 3, 9))
        normalizer = FeatureNormalizer.fit(patches)
        normalized = normalizer.apply(patches, np.float64)
        np.testing.assert_allclose(normalized.reshape(-1, 9).mean(axis=0), 0.0, atol=1e-5)
        np.testing.assert_allclose(normalized.reshape(-1, 9).std(axis=0), 1.0, atol=1e-5)
        with self.assertRaises(ConfigurationError):
            normalizer.apply(np.zeros((1, 3, 3, 18)))


class SeedingTestCase(SimpleTestCase):
    def test_derive_seed(self):
        """Test sub-seeds are stable, 64-bit and tag dependent"""
        self.assertEqual(derive_seed(7, 'datagen', 0, 3), derive_seed(7, 'datagen', 0, 3))
        self.assertNotEqual(derive_seed(7, 'datagen', 0, 3), derive_seed(7, 'datagen', 1, 3))
        self.assertNotEqual(derive_seed(7, 'a'), derive_seed(8, 'a'))
        self.assertTrue(0 <= derive_seed(2 ** 64 - 1, 'x') < 2 ** 64)

    def test_make_rng_streams(self):
        """Test the same substream yields the same draws"""
        np.testing.assert_array_equal(make_rng(1, 'x').random(5), make_rng(1, 'x').random(5))
        with self.assertRaises(ValueError):
            derive_seed(1, -4)
