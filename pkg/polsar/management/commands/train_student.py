from ...dgsd import train_student
from ...exceptions import ConfigurationError
from ...nn.checkpoint import Checkpoint
from ..base import PolsarCommand, load_configured_scene, scene_metadata


class Command(PolsarCommand):
    """
    Distill the dual-band student from two frozen teachers.

    Usage:
        python manage.py train-student --scene runs/scene/manifest.json \\
            --teacher1 runs/teachers/teacher_band1.skd \\
            --teacher2 runs/teachers/teacher_band2.skd --alpha 0.7 --out runs/student

    With ``--alpha 0`` no teachers are needed and the student is trained
    on the concatenated bands with cross entropy alone.

    Writes:
        student.skd: Checkpoint
        metrics_student.csv: epoch, loss, held-out OA
        gate_histogram.csv: class, band1_fraction, band2_fraction (alpha > 0)
    """

    help = 'Train the dual-band student by gate-selected distillation.'

    def add_command_arguments(self, parser):
        parser.add_argument('--scene', default=None, help='scene manifest (default: from --config)')
        parser.add_argument('--teacher1', default=None, help='band-1 teacher checkpoint (default: from --config)')
        parser.add_argument('--teacher2', default=None, help='band-2 teacher checkpoint (default: from --config)')
        parser.add_argument('--alpha', type=float, default=None, help='KL / CE balance in [0, 1] (default: 0.7)')
        parser.add_argument('--epochs', type=int, default=None, help='training epochs (default: 30)')
        parser.add_argument('--no-sdsr', dest='no_sdsr', action='store_true',
                            help='disable sample rectification (default: enabled)')

    def overrides(self, options):
        return {
            'scene': options['scene'],
            'teacher_band1': options['teacher1'],
            'teacher_band2': options['teacher2'],
            'alpha': options['alpha'],
            'epochs': options['epochs'],
            'use_sdsr': False if options['no_sdsr'] else None,
        }

    def prepare(self, config, options):
        scene = load_configured_scene(config)
        teachers = ()
        if config.alpha > 0:
            if not (config.teacher_band1 and config.teacher_band2):
                raise ConfigurationError("alpha > 0 requires --teacher1 and --teacher2")
            teachers = (Checkpoint.load(config.teacher_band1), Checkpoint.load(config.teacher_band2))
        return scene, teachers

    def run(self, config, staging, inputs):
        scene, teachers = inputs
        result = train_student(
            scene.band1,
            scene.band2,
            teachers,
            config.distill_config(),
            config.model_config(18, scene.num_classes),
            metrics_path=staging / 'metrics_student.csv',
            gate_path=staging / 'gate_histogram.csv',
            metadata=scene_metadata(config, scene),
        )
        result.checkpoint.save(staging / 'student.skd')
        self.report(f"student: held-out OA {result.final_oa:.4f}")
