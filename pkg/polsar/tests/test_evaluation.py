import itertools

import numpy as np
from django.test import SimpleTestCase
from PIL import Image

from polsar.core import UNLABELED, FeatureNormalizer
from polsar.datagen import generate_scene, make_complementary_spec
from polsar.evaluation import (
    ConfusionMatrix,
    accumulate,
    classes_from_rgb,
    evaluate_scene,
    format_accuracy_table,
    metrics_report,
    oa_aa_kappa,
    parse_ppm,
    predict_scene,
    render_map,
)
from polsar.exceptions import ValidationError
from polsar.nn.checkpoint import Checkpoint
from polsar.nn.modules import SKDNet
from polsar.seeding import make_rng
from polsar.specs import default_palette

from .utils import TemporaryDirectoryMixin, tiny_model_config


class MetricsTestCase(SimpleTestCase):
    def test_two_class_example(self):
        """Test OA 0.8, AA 0.791667 and kappa 0.583333"""
        metrics = oa_aa_kappa(ConfusionMatrix([[50, 10], [10, 30]]))
        self.assertAlmostEqual(metrics.oa, 0.8, places=6)
        self.assertAlmostEqual(metrics.aa, 0.791667, places=6)
        self.assertAlmostEqual(metrics.kappa, 0.583333, places=6)

    def test_perfect_classification(self):
        """Test a diagonal matrix scores 1 everywhere"""
        metrics = oa_aa_kappa(ConfusionMatrix(np.diag([7, 3, 12])))
        self.assertEqual((metrics.oa, metrics.aa, metrics.kappa), (1.0, 1.0, 1.0))

    def test_undefined_kappa(self):
        """Test a single-class matrix has no kappa"""
        metrics = oa_aa_kappa(ConfusionMatrix([[10]]))
        self.assertEqual(metrics.oa, 1.0)
        self.assertIsNone(metrics.kappa)

    def test_kappa_bounded_by_oa(self):
        """Test kappa <= OA, and kappa == 1 exactly for diagonal matrices, over small matrices"""
        rng = make_rng(62, 'kappa')
        matrices = [np.reshape(cells, (2, 2)) for cells in itertools.product(range(3), repeat=4)]
        for num_classes in (2, 3, 4):
            for _ in range(200):
                matrices.append(rng.integers(0, 6, size=(num_classes, num_classes)))
                matrices.append(np.diag(rng.integers(1, 20, size=num_classes)))
        checked = 0
        for counts in matrices:
            if np.any(counts.sum(axis=1) == 0):
                continue
            metrics = oa_aa_kappa(ConfusionMatrix(counts))
            diagonal = np.count_nonzero(counts - np.diag(np.diagonal(counts))) == 0
            self.assertIsNotNone(metrics.kappa)
            self.assertLessEqual(metrics.kappa, metrics.oa + 1e-12)
            self.assertEqual(metrics.kappa == 1.0, diagonal, counts)
            checked += 1
        self.assertGreater(checked, 1000)

    def test_kappa_undefined_when_chance_is_one(self):
        """Test p_e == 1 (one class in rows and columns) reports kappa as None"""
        self.assertIsNone(oa_aa_kappa(ConfusionMatrix([[4]])).kappa)
        with self.assertLogs('polsar.evaluation', level='WARNING'):
            metrics = oa_aa_kappa(ConfusionMatrix([[0, 0, 0], [0, 9, 0], [0, 0, 0]]))
        self.assertEqual(metrics.oa, 1.0)
        self.assertIsNone(metrics.kappa)

    def test_absent_class(self):
        """Test a class with no reference pixels is left out of AA with a warning"""
        with self.assertLogs('polsar.evaluation', level='WARNING'):
            metrics = oa_aa_kappa(ConfusionMatrix([[5, 1, 0], [2, 4, 1], [0, 0, 0]]))
        self.assertEqual(metrics.excluded, (2,))
        self.assertIsNone(metrics.per_class[2])
        self.assertAlmostEqual(metrics.aa, (5 / 6 + 4 / 7) / 2, places=12)

    def test_label_permutation(self):
        """Test renaming classes consistently leaves the metrics unchanged"""
        rng = make_rng(61, 'permute')
        labels = rng.integers(0, 4, size=500)
        predictions = np.where(rng.random(500) < 0.7, labels, rng.integers(0, 4, size=500))
        mapping = np.array([2, 0, 3, 1])
        original = oa_aa_kappa(accumulate(predictions, labels, 4))
        permuted = oa_aa_kappa(accumulate(mapping[predictions], mapping[labels], 4))
        self.assertAlmostEqual(original.oa, permuted.oa, places=12)
        self.assertAlmostEqual(original.aa, permuted.aa, places=12)
        self.assertAlmostEqual(original.kappa, permuted.kappa, places=12)

    def test_empty_and_invalid(self):
        """Test empty and malformed matrices are rejected"""
        with self.assertRaises(ValidationError):
            oa_aa_kappa(ConfusionMatrix(np.zeros((2, 2))))
        with self.assertRaises(ValidationError):
            ConfusionMatrix([[1, 2, 3]])

    def test_report(self):
        """Test the report keys and the accuracy table"""
        report = metrics_report(ConfusionMatrix([[50, 10], [10, 30]]), ['water', 'forest'])
        self.assertEqual(
            set(report), {'per_class_accuracy', 'OA', 'AA', 'kappa', 'confusion', 'class_names'}
        )
        self.assertEqual(report['confusion'], [[50, 10], [10, 30]])
        table = format_accuracy_table(report)
        self.assertIn('forest', table)
        self.assertIn('80.00', table)


class AccumulateTestCase(SimpleTestCase):
    def test_matches_direct_tally(self):
        """Test the confusion matrix against a plain loop over 10,000 pairs"""
        rng = make_rng(62, 'tally')
        labels = rng.integers(0, 5, size=10000)
        labels[rng.random(10000) < 0.1] = UNLABELED
        predictions = rng.integers(0, 5, size=10000)
        expected = np.zeros((5, 5), dtype=np.int64)
        for label, prediction in zip(labels, predictions):
            if label != UNLABELED:
                expected[label, prediction] += 1
        confusion = accumulate(predictions, labels, 5)
        np.testing.assert_array_equal(confusion.counts, expected)
        self.assertEqual(confusion.total, int(np.count_nonzero(labels != UNLABELED)))

    def test_rejects_bad_input(self):
        """Test length mismatches and out-of-range classes"""
        with self.assertRaises(ValidationError):
            accumulate([0, 1], [0], 2)
        with self.assertRaises(ValidationError):
            accumulate([0, 2], [0, 1], 2)


class MapTestCase(TemporaryDirectoryMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.palette = default_palette(3)
        self.predictions = make_rng(63, 'map').integers(0, 3, size=(5, 7)).astype(np.uint8)
        self.predictions[0, :3] = UNLABELED

    def test_ppm_round_trip(self):
        """Test parsing a rendered map recovers the class raster"""
        rgb = render_map(self.predictions, self.palette, ppm_path=self.tmp / 'map.ppm')
        self.assertEqual(rgb.shape, (5, 7, 3))
        np.testing.assert_array_equal(rgb[0, 0], [0, 0, 0])
        parsed = parse_ppm((self.tmp / 'map.ppm').read_bytes(), self.palette)
        np.testing.assert_array_equal(parsed, self.predictions)

    def test_png(self):
        """Test the PNG carries the same pixels as the PPM"""
        rgb = render_map(self.predictions, self.palette, png_path=self.tmp / 'map.png')
        with Image.open(self.tmp / 'map.png') as image:
            np.testing.assert_array_equal(np.asarray(image.convert('RGB')), rgb)

    def test_palette_errors(self):
        """Test short palettes and unknown colors are rejected"""
        with self.assertRaises(ValidationError):
            render_map(self.predictions, self.palette[:2])
        with self.assertRaises(ValidationError):
            render_map(np.zeros((2, 2), dtype=np.uint8), self.palette, num_classes=4)
        with self.assertRaises(ValidationError):
            classes_from_rgb(np.full((1, 1, 3), 7, dtype=np.uint8), self.palette)


class PredictSceneTestCase(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.scene = generate_scene(make_complementary_spec(3, size=12, seed=8))
        features = cls.scene.band1.features[np.newaxis]
        model = SKDNet(tiny_model_config(), seed=2).eval()
        cls.checkpoint = Checkpoint.from_model(model, FeatureNormalizer.fit(features), {'role': 'teacher', 'band': 1})

    def test_reproducible(self):
        """Test the same seed gives the same map"""
        first = predict_scene(self.checkpoint, self.scene, seed=4)
        second = predict_scene(self.checkpoint, self.scene, seed=4)
        np.testing.assert_array_equal(first, second)
        labeled = self.scene.labels != UNLABELED
        self.assertTrue(np.all(first[labeled] < 3))
        self.assertTrue(np.all(first[~labeled] == UNLABELED))

    def test_evaluate_scene(self):
        """Test every pixel is classified and the report is consistent"""
        predictions, report = evaluate_scene(self.checkpoint, self.scene)
        self.assertFalse(np.any(predictions == UNLABELED))
        self.assertEqual(sum(map(sum, report['confusion'])), int(np.count_nonzero(self.scene.labels != UNLABELED)))
        self.assertEqual(report['class_names'], list(self.scene.class_names))
