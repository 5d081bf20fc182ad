import logging

from ...evaluation import evaluate_scene, format_accuracy_table, render_map, write_metrics_report
from ...formats import write_pgm
from ...nn.checkpoint import Checkpoint
from ..base import PolsarCommand, load_configured_scene

logger = logging.getLogger(__name__)


class Command(PolsarCommand):
    """
    Classify a whole scene with a checkpoint and score it.

    Every pixel is classified with a window centred on it (shifted inside
    the image at the border); labeled pixels are scored.

    Usage:
        python manage.py eval runs/student/student.skd --scene runs/scene/manifest.json --out runs/eval

    Writes:
        metrics.json: per_class_accuracy, OA, AA, kappa, confusion
        predictions.pgm: Predicted class per pixel
        map.ppm: Classification map (map.png too with --png)
    """

    help = 'Evaluate a checkpoint on a scene and render its classification map.'

    def add_command_arguments(self, parser):
        parser.add_argument('checkpoint', help='checkpoint file')
        parser.add_argument('--scene', default=None, help='scene manifest (default: from --config)')
        parser.add_argument('--png', action='store_true', help='also write map.png (default: off)')

    def overrides(self, options):
        return {'scene': options['scene']}

    def prepare(self, config, options):
        checkpoint = Checkpoint.load(options['checkpoint'])
        scene = load_configured_scene(config)
        return checkpoint, scene, options['png']

    def run(self, config, staging, inputs):
        checkpoint, scene, png = inputs
        predictions, report = evaluate_scene(checkpoint, scene, seed=config.seed)
        write_metrics_report(staging / 'metrics.json', report)
        write_pgm(staging / 'predictions.pgm', predictions)
        render_map(
            predictions,
            scene.palette,
            ppm_path=staging / 'map.ppm',
            png_path=staging / 'map.png' if png else None,
            num_classes=scene.num_classes,
        )
        logger.info("accuracy:\n%s", format_accuracy_table(report))
        self.report(f"OA {report['OA']:.4f}  AA {report['AA']:.4f}  kappa {report['kappa']}")
