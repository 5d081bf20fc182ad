from django.conf import settings
from django.test import SimpleTestCase

from polsar.datagen import make_complementary_spec
from polsar.exceptions import ConfigurationError
from polsar.serializers import SceneSpecSerializer, build_run_config, load_scene_spec

from .utils import TemporaryDirectoryMixin


class RunConfigTestCase(TemporaryDirectoryMixin, SimpleTestCase):
    def test_defaults(self):
        """Test an empty configuration takes the project defaults"""
        config = build_run_config()
        self.assertEqual(config.window, settings.SKDNET['window'])
        self.assertEqual(config.alpha, settings.SKDNET['alpha'])
        self.assertEqual(config.conv_channels, (16, 32, 32))
        self.assertEqual(config.alphas, tuple(round(0.1 * step, 1) for step in range(11)))

    def test_precedence(self):
        """Test flags override the file and None flags are ignored"""
        path = self.write_json('run.json', {'alpha': 0.3, 'epochs': 4, 'seed': 9})
        config = build_run_config(path, alpha=0.5, epochs=None)
        self.assertEqual(config.alpha, 0.5)
        self.assertEqual(config.epochs, 4)
        self.assertEqual(config.seed, 9)

    def test_window_patch_divisibility(self):
        """Test s mod p != 0 is rejected"""
        with self.assertRaises(ConfigurationError) as context:
            build_run_config(window=10, patch=3)
        self.assertIn('divisible', str(context.exception))

    def test_out_of_range_values(self):
        """Test alpha outside [0, 1] and train_ratio 0 are rejected"""
        with self.assertRaises(ConfigurationError):
            build_run_config(alpha=1.5)
        with self.assertRaises(ConfigurationError):
            build_run_config(train_ratio=0.0)

    def test_missing_paths(self):
        """Test referenced files must exist"""
        with self.assertRaises(ConfigurationError):
            build_run_config(scene=str(self.tmp / 'nope.json'))
        with self.assertRaises(ConfigurationError):
            build_run_config(datasets=[str(self.tmp / 'nope.json')])

    def test_bad_file(self):
        """Test a missing or malformed config file is a configuration error"""
        with self.assertRaises(ConfigurationError):
            build_run_config(self.tmp / 'missing.json')
        broken = self.tmp / 'broken.json'
        broken.write_text('{"alpha": ')
        with self.assertRaises(ConfigurationError):
            build_run_config(broken)

    def test_distill_and_model_configs(self):
        """Test the derived training and model configurations"""
        config = build_run_config(window=6, patch=3, alpha=0.2, use_sdsr=False)
        distill = config.distill_config(alpha=0.9)
        self.assertEqual(distill.alpha, 0.9)
        self.assertEqual(distill.window, 6)
        model = config.model_config(18, 4)
        self.assertEqual(model.bands, 2)
        self.assertFalse(model.use_sdsr)
        self.assertEqual(config.replace(seed=3).seed, 3)


class SceneSpecSerializerTestCase(TemporaryDirectoryMixin, SimpleTestCase):
    def setUp(self):
        super().setUp()
        self.data = make_complementary_spec(3, size=16, seed=4).to_dict()

    def test_round_trip(self):
        """Test a serialized spec loads back into an equivalent SceneSpec"""
        spec = load_scene_spec(self.write_json('scene.json', self.data))
        self.assertEqual(spec.to_dict(), self.data)

    def test_impurity_limit(self):
        """Test rho >= 0.5 is rejected"""
        self.data['impurity'] = 0.5
        serializer = SceneSpecSerializer(data=self.data)
        self.assertFalse(serializer.is_valid())

    def test_unused_class(self):
        """Test every class must be painted"""
        self.data['regions'] = self.data['regions'][:2]
        serializer = SceneSpecSerializer(data=self.data)
        self.assertFalse(serializer.is_valid())

    def test_region_out_of_bounds(self):
        """Test regions must fit the image"""
        self.data['regions'][0]['width'] = 40
        self.assertFalse(SceneSpecSerializer(data=self.data).is_valid())

    def test_non_positive_center(self):
        """Test class centers must be positive definite"""
        self.data['centers'][0][0] = [-1.0, 0, 0, 0, 0, 1.0, 0, 0, 1.0]
        self.assertFalse(SceneSpecSerializer(data=self.data).is_valid())
