"""
Serializers for the polsar configuration files.

This module validates every JSON document the pipeline reads (scene
specs, scene manifests and run configurations) with Django REST framework
serializers and turns the validated data into the frozen value objects
of :mod:`polsar.specs`.
"""

import json
from pathlib import Path

import numpy as np
from django.conf import settings
from rest_framework import serializers

from .core import devectorize_many
from .exceptions import ConfigurationError, PolsarError
from .specs import REGION_SHAPES, Region, RunConfig, SceneSpec, check_palette


def format_errors(errors, prefix=''):
    """Flatten a serializer ``errors`` structure into one readable line."""
    if isinstance(errors, dict):
        parts = [format_errors(value, f"{prefix}{key}: " if key != 'non_field_errors' else prefix)
                 for key, value in errors.items()]
    elif isinstance(errors, list):
        parts = [format_errors(value, prefix) for value in errors]
    else:
        return f"{prefix}{errors}"
    return '; '.join(part for part in parts if part)


def validated(serializer):
    """
    Run a serializer and return the object its ``save()`` produces.

    Raises:
        ConfigurationError: With every field error flattened into the message
    """
    if not serializer.is_valid():
        raise ConfigurationError(format_errors(serializer.errors))
    return serializer.save()


def load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"configuration file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from exc


class PaletteField(serializers.ListField):
    """List of RGB triples."""

    child = serializers.ListField(
        child=serializers.IntegerField(min_value=0, max_value=255),
        min_length=3,
        max_length=3,
    )


class RegionSerializer(serializers.Serializer):
    """
    Serializer for one painted region of a synthetic scene.

    Fields:
        shape: 'rect' or 'ellipse' (ellipse inscribed in the box)
        label: Class index
        top, left: Bounding-box corner
        height, width: Bounding-box size
    """

    shape = serializers.ChoiceField(choices=REGION_SHAPES)
    label = serializers.IntegerField(min_value=0)
    top = serializers.IntegerField(min_value=0)
    left = serializers.IntegerField(min_value=0)
    height = serializers.IntegerField(min_value=1)
    width = serializers.IntegerField(min_value=1)

    def create(self, validated_data):
        return Region(**validated_data)


class SceneSpecSerializer(serializers.Serializer):
    """
    Serializer for synthetic scene specifications.

    Class centers are given per band and class as Feature9 vectors
    (``centers[band][class] = [C11, Re C12, Im C12, ...]``).

    Fields:
        height, width: Scene size in pixels
        num_classes: Number of classes M
        looks: Wishart looks (>= 3)
        impurity: Fraction of resampled pixels per region, in [0, 0.5)
        seed: Root seed
        class_names: Optional M names
        palette: Optional M RGB triples
        regions: Painted regions, in painting order
        centers: 2 x M Feature9 vectors
    """

    height = serializers.IntegerField(min_value=1, max_value=8192)
    width = serializers.IntegerField(min_value=1, max_value=8192)
    num_classes = serializers.IntegerField(min_value=1, max_value=254)
    looks = serializers.IntegerField(min_value=3, default=4)
    impurity = serializers.FloatField(min_value=0.0, max_value=0.5, default=0.0)
    seed = serializers.IntegerField(min_value=0, default=0)
    class_names = serializers.ListField(child=serializers.CharField(), required=False, default=list)
    palette = PaletteField(required=False, default=list)
    regions = RegionSerializer(many=True)
    centers = serializers.ListField(
        child=serializers.ListField(
            child=serializers.ListField(child=serializers.FloatField(), min_length=9, max_length=9),
        ),
        min_length=2,
        max_length=2,
    )

    def validate(self, attrs):
        """
        Build the SceneSpec and check its cross-field invariants.

        Raises:
            serializers.ValidationError: If any SceneSpec invariant fails
        """
        regions = [Region(**region) for region in attrs['regions']]
        centers = devectorize_many(np.array(attrs['centers'], dtype=np.float64))
        try:
            spec = SceneSpec(
                height=attrs['height'],
                width=attrs['width'],
                num_classes=attrs['num_classes'],
                regions=regions,
                centers=centers,
                looks=attrs['looks'],
                impurity=attrs['impurity'],
                seed=attrs['seed'],
                class_names=attrs['class_names'],
                palette=attrs['palette'],
            ).validate()
        except (PolsarError, ValueError) as exc:
            raise serializers.ValidationError(str(exc))
        attrs['spec'] = spec
        return attrs

    def create(self, validated_data):
        return validated_data['spec']


class ManifestSerializer(serializers.Serializer):
    """
    Serializer for a scene manifest pairing the two bands with their labels.

    Fields:
        format: Always 'PCV1'
        height, width: Scene size; must match every referenced file
        num_classes: Number of classes M
        band1, band2: PCV1 file names, relative to the manifest
        labels: PGM file name, relative to the manifest
        class_names: M names
        palette: M RGB triples
    """

    format = serializers.ChoiceField(choices=['PCV1'])
    height = serializers.IntegerField(min_value=1)
    width = serializers.IntegerField(min_value=1)
    num_classes = serializers.IntegerField(min_value=1, max_value=254)
    band1 = serializers.CharField()
    band2 = serializers.CharField()
    labels = serializers.CharField()
    class_names = serializers.ListField(child=serializers.CharField())
    palette = PaletteField()

    def validate(self, attrs):
        if len(attrs['class_names']) != attrs['num_classes']:
            raise serializers.ValidationError({
                'class_names': f"expected {attrs['num_classes']} names, got {len(attrs['class_names'])}"
            })
        try:
            check_palette(attrs['palette'], attrs['num_classes'])
        except PolsarError as exc:
            raise serializers.ValidationError({'palette': str(exc)})
        return attrs

    def create(self, validated_data):
        return dict(validated_data)


def _existing_path(value):
    if value and not Path(value).exists():
        raise serializers.ValidationError(f"path does not exist: {value}")
    return value


class RunConfigSerializer(serializers.Serializer):
    """
    Serializer for run configurations.

    Missing fields take the project defaults from ``settings.SKDNET``.
    Paths that a command reads (scene, teachers, datasets) must exist.
    """

    out_dir = serializers.CharField(default=settings.SKDNET['output_dir'])
    scene = serializers.CharField(required=False, allow_null=True, default=None)
    window = serializers.IntegerField(min_value=3, default=settings.SKDNET['window'])
    stride = serializers.IntegerField(min_value=1, default=settings.SKDNET['stride'])
    patch = serializers.IntegerField(min_value=1, default=settings.SKDNET['patch'])
    dim = serializers.IntegerField(min_value=1, default=settings.SKDNET['dim'])
    depth = serializers.IntegerField(min_value=0, default=settings.SKDNET['depth'])
    mlp_ratio = serializers.IntegerField(min_value=1, default=settings.SKDNET['mlp_ratio'])
    conv_channels = serializers.ListField(
        child=serializers.IntegerField(min_value=1),
        min_length=3,
        max_length=3,
        default=settings.SKDNET['conv_channels'],
    )
    alpha = serializers.FloatField(min_value=0.0, max_value=1.0, default=settings.SKDNET['alpha'])
    epochs = serializers.IntegerField(min_value=1, default=settings.SKDNET['epochs'])
    batch_size = serializers.IntegerField(min_value=1, default=settings.SKDNET['batch_size'])
    learning_rate = serializers.FloatField(min_value=0.0, default=settings.SKDNET['learning_rate'])
    lr_decay = serializers.FloatField(min_value=0.0, max_value=1.0, default=settings.SKDNET['lr_decay'])
    lr_decay_every = serializers.IntegerField(min_value=1, default=settings.SKDNET['lr_decay_every'])
    looks = serializers.IntegerField(min_value=3, default=settings.SKDNET['looks'])
    seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1, default=settings.SKDNET['seed'])
    threads = serializers.IntegerField(min_value=1, default=settings.SKDNET['threads'])
    train_ratio = serializers.FloatField(min_value=0.0, max_value=1.0, default=settings.SKDNET['train_ratio'])
    eval_limit = serializers.IntegerField(min_value=0, default=settings.SKDNET['eval_limit'])
    use_sdsr = serializers.BooleanField(default=settings.SKDNET['use_sdsr'])
    teacher_band1 = serializers.CharField(required=False, allow_null=True, default=None)
    teacher_band2 = serializers.CharField(required=False, allow_null=True, default=None)
    datasets = serializers.ListField(child=serializers.CharField(), required=False, default=list)
    alphas = serializers.ListField(
        child=serializers.FloatField(min_value=0.0, max_value=1.0),
        required=False,
        default=lambda: [round(0.1 * step, 1) for step in range(11)],
    )
    repeats = serializers.IntegerField(min_value=1, default=1)

    def validate_scene(self, value):
        return _existing_path(value)

    def validate_teacher_band1(self, value):
        return _existing_path(value)

    def validate_teacher_band2(self, value):
        return _existing_path(value)

    def validate_datasets(self, value):
        return [_existing_path(path) for path in value]

    def validate_train_ratio(self, value):
        if value <= 0.0:
            raise serializers.ValidationError("train_ratio must be greater than 0.")
        return value

    def validate(self, attrs):
        """
        Check cross-field constraints.

        Raises:
            serializers.ValidationError: If the window is not divisible by
                the patch size
        """
        if attrs['window'] % attrs['patch']:
            raise serializers.ValidationError({
                'window': f"window size {attrs['window']} must be divisible by patch size {attrs['patch']}."
            })
        return attrs

    def create(self, validated_data):
        return RunConfig(**validated_data)


def load_scene_spec(path):
    """Read and validate a scene spec JSON file."""
    return validated(SceneSpecSerializer(data=load_json(path)))


def build_run_config(config_path=None, **overrides):
    """
    Merge a JSON config file with command-line overrides and validate.

    Overrides whose value is None are ignored so unset flags fall back to
    the file, then to the project defaults.

    Returns:
        RunConfig

    Raises:
        ConfigurationError: On any invalid or missing value
    """
    data = load_json(config_path) if config_path else {}
    data.update({key: value for key, value in overrides.items() if value is not None})
    return validated(RunConfigSerializer(data=data))
