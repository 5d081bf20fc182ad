from types import SimpleNamespace

import numpy as np
from django.test import SimpleTestCase

from polsar.core import FeatureNormalizer, Sample, vectorize_many
from polsar.exceptions import ValidationError
from polsar.nn.modules import ForwardOutput, SKDNet
from polsar.nn.tensor import Tensor
from polsar.sdsr import (
    PurityReport,
    assess_purity,
    pixel_distances,
    rectify,
    rectify_batch,
    sdsr_forward,
    select_pixels,
    top_k_for,
    wishart_params_for,
)
from polsar.seeding import make_rng
from polsar.wishart import WishartParams, sample_center

from .utils import random_hermitian_pd, random_sample, tiny_model_config, wishart_patch


def agreeing_logits(num_patches, agreeing, num_classes=3):
    """cls predicts class 0; the first ``agreeing`` patches do too."""
    cls_logits = np.array([2.0, 0.0, 0.0][:num_classes])
    patch_logits = np.tile([0.0, 1.0, 0.0][:num_classes], (num_patches, 1))
    patch_logits[:agreeing] = [1.0, 0.0, 0.0][:num_classes]
    return cls_logits, patch_logits


def report_for(top_k, num_patches=4):
    return PurityReport(top_k / 36, top_k, np.ones(num_patches, dtype=bool))


class PurityTestCase(SimpleTestCase):
    def test_half_agreeing(self):
        """Test N = 16 with 8 agreeing gives r = 0.5 and topK = 72 at s = 12"""
        report = assess_purity(agreeing_logits(16, 8), 12)
        self.assertEqual(report.purity, 0.5)
        self.assertEqual(report.top_k, 72)
        self.assertEqual(report.num_patches, 16)

    def test_two_thirds_agreeing(self):
        """Test N = 9 with 6 agreeing gives topK = 96 at s = 12"""
        self.assertEqual(assess_purity(agreeing_logits(9, 6), 12).top_k, 96)

    def test_all_agreeing(self):
        """Test a pure sample keeps every pixel"""
        report = assess_purity(agreeing_logits(16, 16), 12)
        self.assertEqual(report.purity, 1.0)
        self.assertEqual(report.top_k, 144)

    def test_top_k_bounds(self):
        """Test topK never drops below one pixel"""
        self.assertEqual(top_k_for(0.0, 12), 1)
        self.assertEqual(top_k_for(1.0, 6), 36)

    def test_argmax_tie_takes_lower_class(self):
        """Test a tied cls prediction resolves to class 0"""
        report = assess_purity((np.zeros(3), np.tile([1.0, 0.0, 0.0], (4, 1))), 6)
        self.assertEqual(report.purity, 1.0)


class SelectPixelsTestCase(SimpleTestCase):
    def setUp(self):
        self.rng = make_rng(41, 'select')

    def brute_force(self, sample, top_k):
        sigma = sample_center(sample).entries
        _, logdet = np.linalg.slogdet(sigma)
        distances = np.array([
            np.trace(np.linalg.solve(sigma, covariance)).real + logdet
            for covariance in sample.covariances()
        ])
        order = np.lexsort((np.arange(distances.size), distances))
        return np.sort(order[:top_k])

    def test_matches_brute_force(self):
        """Test selection against a direct solve-and-sort over 200 samples"""
        for _ in range(200):
            sample = random_sample(self.rng, window=4)
            top_k = int(self.rng.integers(1, 17))
            np.testing.assert_array_equal(
                select_pixels(sample, sample_center(sample), top_k),
                self.brute_force(sample, top_k),
            )

    def test_planted_impurity(self):
        """Test 80 pixels near I are kept over 20 planted near 10 I"""
        passed = 0
        for _ in range(100):
            impure = self.rng.choice(100, size=20, replace=False)
            centers = np.broadcast_to(np.eye(3, dtype=np.complex128), (100, 1, 3, 3)).copy()
            centers[impure, 0] = 10 * np.eye(3)
            sample = Sample(wishart_patch(self.rng, 10, centers), 0, (0, 0))
            kept = select_pixels(sample, sample_center(sample), 80)
            passed += np.array_equal(kept, np.setdiff1d(np.arange(100), impure))
        self.assertGreaterEqual(passed, 99)

    def test_monotone_in_top_k(self):
        """Test a larger topK keeps a superset"""
        sample = random_sample(self.rng, window=6)
        center = sample_center(sample)
        previous = set()
        for top_k in range(1, 37):
            kept = set(select_pixels(sample, center, top_k).tolist())
            self.assertTrue(previous <= kept)
            self.assertEqual(len(kept), top_k)
            previous = kept

    def test_scale_invariant(self):
        """Test scaling every pixel (and so the center) keeps the same selection"""
        sample = random_sample(self.rng, window=6)
        expected = select_pixels(sample, sample_center(sample), 20)
        for scale in (4.0, 0.25):
            scaled = sample.replace_patch(sample.patch * np.float32(scale))
            np.testing.assert_array_equal(select_pixels(scaled, sample_center(scaled), 20), expected)

    def test_top_k_out_of_range(self):
        """Test topK outside 1..s^2 is rejected"""
        sample = random_sample(self.rng, window=4)
        for top_k in (0, 17):
            with self.assertRaises(ValidationError):
                select_pixels(sample, sample_center(sample), top_k)

    def test_dual_band_sums_distances(self):
        """Test an 18-channel sample ranks pixels by the summed band distances"""
        sample = random_sample(self.rng, window=4, bands=2)
        first = Sample(sample.patch[..., :9], 0, (0, 0))
        second = Sample(sample.patch[..., 9:], 0, (0, 0))
        centers = [sample_center(sample, 0), sample_center(sample, 1)]
        np.testing.assert_allclose(
            pixel_distances(sample, centers),
            pixel_distances(first, centers[0]) + pixel_distances(second, centers[1]),
        )
        with self.assertRaises(ValidationError):
            pixel_distances(sample, centers[0])


class RectifyTestCase(SimpleTestCase):
    def setUp(self):
        self.rng = make_rng(42, 'rectify')

    def test_pure_sample_is_unchanged(self):
        """Test r = 1 returns the input patch bit-exactly"""
        sample = random_sample(self.rng, window=6)
        result = rectify(sample, report_for(36), wishart_params_for(sample), make_rng(0))
        np.testing.assert_array_equal(result.patch, sample.patch)
        self.assertEqual(result.generated, 0)
        self.assertTrue(result.retained.all())

    def test_generated_and_retained_pixels(self):
        """Test topK = 72 at s = 12 regenerates 72 pixels and keeps the rest"""
        sample = random_sample(self.rng, window=12)
        report = PurityReport(0.5, 72, np.zeros(16, dtype=bool))
        result = rectify(sample, report, wishart_params_for(sample), make_rng(1))
        self.assertEqual(result.generated, 72)
        self.assertEqual(result.patch.shape, sample.patch.shape)
        self.assertEqual(int(result.retained.sum()), 72)
        np.testing.assert_array_equal(result.patch[result.retained], sample.patch[result.retained])
        self.assertFalse(np.array_equal(result.patch[~result.retained], sample.patch[~result.retained]))

    def test_generated_pixels_average_to_center(self):
        """Test replacement pixels average to Sigma over 1000 runs"""
        sigma = random_hermitian_pd(self.rng) + np.eye(3)
        params = WishartParams(sigma, looks=4)
        sample = random_sample(self.rng, window=4)
        generated = []
        for run in range(1000):
            result = rectify(sample, report_for(1), params, make_rng(run, 'draws'))
            generated.append(result.patch[~result.retained])
        features = np.concatenate(generated).astype(np.float64)
        mean = vectorize_many(sigma)
        self.assertLess(np.linalg.norm(features.mean(axis=0) - mean) / np.linalg.norm(mean), 0.05)

    def test_dual_band(self):
        """Test both bands of a regenerated pixel are replaced"""
        sample = random_sample(self.rng, window=6, bands=2)
        result = rectify(sample, report_for(10), wishart_params_for(sample), make_rng(2))
        replaced = ~result.retained
        for band in (slice(0, 9), slice(9, 18)):
            self.assertFalse(np.any(np.all(result.patch[replaced][:, band] == sample.patch[replaced][:, band], axis=1)))
        np.testing.assert_array_equal(result.patch[result.retained], sample.patch[result.retained])

    def test_batch(self):
        """Test only impure batch members are touched"""
        patches = np.stack([random_sample(self.rng, window=6).patch for _ in range(3)])
        reports = [report_for(36), report_for(18), report_for(36)]
        rectified, details = rectify_batch(patches, reports, [make_rng(i) for i in range(3)])
        self.assertEqual(rectified.shape, patches.shape)
        self.assertIsNone(details[0])
        self.assertEqual(details[1].generated, 18)
        np.testing.assert_array_equal(rectified[[0, 2]], patches[[0, 2]])

    def test_seeded(self):
        """Test the same generator substream gives the same rectification"""
        sample = random_sample(self.rng, window=6)
        params = wishart_params_for(sample)
        first = rectify(sample, report_for(12), params, make_rng(5, 'sdsr'))
        second = rectify(sample, report_for(12), params, make_rng(5, 'sdsr'))
        np.testing.assert_array_equal(first.patch, second.patch)


class SdsrForwardTestCase(SimpleTestCase):
    def setUp(self):
        rng = make_rng(43, 'forward')
        self.raw = np.stack([random_sample(rng, window=6).patch for _ in range(4)])
        self.normalizer = FeatureNormalizer.fit(self.raw)
        self.rngs = [make_rng(0, 'sdsr', index) for index in range(4)]

    def pure_model(self):
        """A model whose cls and patch tokens always predict class 0."""
        model = SKDNet(tiny_model_config(), seed=4)
        model.head.bias.data = np.array([50.0, 0.0, 0.0], dtype=np.float32)
        return model

    def test_pure_batch_matches_plain_forward(self):
        """Test an all-pure batch reproduces the eval forward bit-exactly"""
        model = self.pure_model().eval()
        expected = model(self.normalizer.apply(self.raw)).cls_logits.data
        output, reports = sdsr_forward(model, self.raw, self.normalizer, self.rngs, training=False)
        self.assertTrue(all(report.purity == 1.0 for report in reports))
        np.testing.assert_array_equal(output.cls_logits.data, expected)

    def test_running_stats_update_once(self):
        """Test the inference pass leaves batch-norm statistics alone"""
        model = self.pure_model()
        reference = self.pure_model().train()
        reference(self.normalizer.apply(self.raw))
        sdsr_forward(model, self.raw, self.normalizer, self.rngs, training=True)
        expected = dict(reference.named_buffers())
        for name, buffer in model.named_buffers():
            np.testing.assert_array_equal(buffer, expected[name])
        self.assertTrue(model.training)

    def test_gradients_flow_through_second_pass(self):
        """Test the returned output is attached to the graph in training mode"""
        model = SKDNet(tiny_model_config(), seed=5)
        output, reports = sdsr_forward(model, self.raw, self.normalizer, self.rngs, training=True)
        self.assertEqual(len(reports), 4)
        self.assertTrue(output.cls_logits.requires_grad)

    def test_generator_count(self):
        """Test one generator is required per sample"""
        with self.assertRaises(ValidationError):
            sdsr_forward(SKDNet(tiny_model_config()), self.raw, self.normalizer, self.rngs[:2])


class PatchDetectorModel:
    """
    Stand-in classifier with SKDNet's call signature over 3 x 3 patches.

    A patch votes class 1 when its mean span (trace / 3) exceeds
    ``threshold``; the cls token votes class 1 as soon as any patch does.
    """

    dtype = np.float32
    patch = 3

    def __init__(self, threshold=5.0, looks=4):
        self.threshold = threshold
        self.config = SimpleNamespace(looks=looks)
        self.training = True

    def eval(self):
        return self.train(False)

    def train(self, mode=True):
        self.training = mode
        return self

    def __call__(self, patches):
        batch, window = patches.shape[0], patches.shape[1]
        cells = window // self.patch
        span = (patches[..., 0] + patches[..., 5] + patches[..., 8]) / 3.0
        means = span.reshape(batch, cells, self.patch, cells, self.patch).mean(axis=(2, 4)).reshape(batch, -1)
        margin = means - self.threshold
        patch_logits = np.stack([-margin, margin], axis=-1)
        cls_margin = margin.max(axis=1)
        cls_logits = np.stack([-cls_margin, cls_margin], axis=-1)
        return ForwardOutput(Tensor(cls_logits), Tensor(patch_logits))


class PlantedSampleTestCase(SimpleTestCase):
    """12 x 12 samples of class 0 (near I) with three 3 x 3 patches planted from 10 I."""

    def planted_sample(self, rng):
        grid = np.zeros(16, dtype=bool)
        grid[rng.choice(16, size=3, replace=False)] = True
        planted = np.kron(grid.reshape(4, 4), np.ones((3, 3), dtype=bool)).reshape(-1)
        centers = np.broadcast_to(np.eye(3, dtype=np.complex128), (144, 1, 3, 3)).copy()
        centers[planted, 0] = 10 * np.eye(3)
        return wishart_patch(rng, 12, centers), planted

    def test_second_pass_flips_to_dominant_class(self):
        """Test rectification turns a misclassified planted sample back to class 0"""
        rng = make_rng(71, 'planted')
        model = PatchDetectorModel()
        normalizer = FeatureNormalizer.identity(9)
        misclassified = flipped = 0
        for trial in range(100):
            patch, planted = self.planted_sample(rng)
            first = model(patch[np.newaxis])
            if int(np.argmax(first.cls_logits.data[0])) != 1:
                continue
            misclassified += 1
            output, reports = sdsr_forward(
                model, patch[np.newaxis], normalizer, [make_rng(71, 'sdsr', trial)], training=True,
            )
            self.assertEqual(reports[0].purity, 3 / 16)
            self.assertEqual(reports[0].top_k, 27)
            flipped += int(np.argmax(output.cls_logits.data[0])) == 0
        self.assertGreaterEqual(misclassified, 90)
        self.assertGreaterEqual(flipped, 0.9 * misclassified)
        self.assertTrue(model.training)

    def test_rectification_keeps_only_dominant_pixels(self):
        """Test the kept pixels of a planted sample all come from class 0"""
        rng = make_rng(72, 'planted')
        patch, planted = self.planted_sample(rng)
        sample = Sample(patch, 0, (0, 0))
        report = assess_purity(PatchDetectorModel()(patch[np.newaxis]), 12)
        result = rectify(sample, report, wishart_params_for(sample), make_rng(72, 'sdsr'))
        retained = result.retained.reshape(-1)
        self.assertFalse(np.any(retained & planted))
        self.assertEqual(result.generated, 144 - 27)
