from ...datagen import read_manifest
from ...evaluation import render_map
from ...exceptions import ConfigurationError
from ...formats import read_pgm
from ..base import PolsarCommand


class Command(PolsarCommand):
    """
    Render a prediction raster with a scene's palette.

    Usage:
        python manage.py render-map runs/eval/predictions.pgm --scene runs/scene/manifest.json --png

    Writes:
        map.ppm (and map.png with --png)
    """

    help = 'Render a class raster (PGM) as a color map.'

    def add_command_arguments(self, parser):
        parser.add_argument('predictions', help='prediction raster (PGM, 255 = unlabeled)')
        parser.add_argument('--scene', default=None, help='scene manifest supplying the palette (default: from --config)')
        parser.add_argument('--png', action='store_true', help='also write map.png (default: off)')

    def overrides(self, options):
        return {'scene': options['scene']}

    def prepare(self, config, options):
        if not config.scene:
            raise ConfigurationError("a scene manifest is required for the palette")
        return read_pgm(options['predictions']), read_manifest(config.scene), options['png']

    def run(self, config, staging, inputs):
        predictions, manifest, png = inputs
        render_map(
            predictions,
            manifest['palette'],
            ppm_path=staging / 'map.ppm',
            png_path=staging / 'map.png' if png else None,
            num_classes=manifest['num_classes'],
        )
        self.report(f"rendered {predictions.shape[0]}x{predictions.shape[1]} map to {config.out_dir}")
