import json
from dataclasses import replace

from ...datagen import generate_scene, make_complementary_spec, write_scene
from ...exceptions import ConfigurationError
from ...serializers import load_scene_spec
from ..base import PolsarCommand


class Command(PolsarCommand):
    """
    Generate a synthetic dual-frequency scene.

    Usage:
        python manage.py synth scene.json --out runs/scene
        python manage.py synth --complementary --classes 3 --size 64 --out runs/scene

    Writes:
        band1.pcv, band2.pcv: PCV1 feature rasters
        labels.pgm: Label raster (255 = unlabeled)
        manifest.json: Scene manifest read by the other commands
        scene_spec.json: The scene specification actually generated

    ``--seed`` overrides the seed in the scene file.
    """

    help = 'Generate a synthetic dual-frequency PolSAR scene.'

    def add_command_arguments(self, parser):
        parser.add_argument('spec', nargs='?', default=None,
                            help='scene specification JSON (default: none; requires --complementary)')
        parser.add_argument('--complementary', action='store_true',
                            help='generate the built-in complementary scene instead of a spec file (default: off)')
        parser.add_argument('--classes', type=int, default=3,
                            help='classes of the complementary scene (default: 3)')
        parser.add_argument('--size', type=int, default=64,
                            help='side length of the complementary scene (default: 64)')
        parser.add_argument('--impurity', type=float, default=0.0,
                            help='impure-pixel fraction of the complementary scene (default: 0.0)')

    def prepare(self, config, options):
        if options['complementary']:
            if options['spec']:
                raise ConfigurationError("give either a spec file or --complementary, not both")
            return make_complementary_spec(
                options['classes'],
                size=options['size'],
                looks=config.looks,
                impurity=options['impurity'],
                seed=config.seed,
            )
        path = options['spec']
        if not path:
            raise ConfigurationError("a scene spec file or --complementary is required")
        spec = load_scene_spec(path)
        if options['seed'] is not None:
            spec = replace(spec, seed=options['seed'])
        return spec

    def run(self, config, staging, spec):
        scene = generate_scene(spec, threads=config.threads)
        write_scene(scene, staging)
        (staging / 'scene_spec.json').write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + '\n')
        self.report(f"wrote {spec.height}x{spec.width} scene with {spec.num_classes} classes to {config.out_dir}")
