from ...dgsd import train_teacher
from ..base import PolsarCommand, load_configured_scene, scene_metadata


class Command(PolsarCommand):
    """
    Train one single-band teacher with cross entropy.

    Usage:
        python manage.py train-teacher --scene runs/scene/manifest.json --band 1 --out runs/teachers

    Writes:
        teacher_band<b>.skd: Checkpoint
        metrics_band<b>.csv: epoch, loss, held-out OA
    """

    help = 'Train a single-band teacher network.'

    def add_command_arguments(self, parser):
        parser.add_argument('--band', type=int, choices=(1, 2), required=True,
                            help='band to train on (required)')
        parser.add_argument('--scene', default=None, help='scene manifest (default: from --config)')
        parser.add_argument('--epochs', type=int, default=None, help='training epochs (default: 30)')
        parser.add_argument('--no-sdsr', dest='no_sdsr', action='store_true',
                            help='disable sample rectification (default: enabled)')

    def overrides(self, options):
        return {
            'scene': options['scene'],
            'epochs': options['epochs'],
            'use_sdsr': False if options['no_sdsr'] else None,
        }

    def prepare(self, config, options):
        scene = load_configured_scene(config)
        return scene, options['band']

    def run(self, config, staging, inputs):
        scene, band = inputs
        result = train_teacher(
            scene.band(band),
            config.distill_config(),
            config.model_config(9, scene.num_classes),
            band=band,
            metrics_path=staging / f"metrics_band{band}.csv",
            metadata=scene_metadata(config, scene),
        )
        result.checkpoint.save(staging / f"teacher_band{band}.skd")
        self.report(f"band-{band} teacher: held-out OA {result.final_oa:.4f}")
