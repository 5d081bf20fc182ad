from ...ablation import AblationRunner, write_ablation_csv
from ..base import PolsarCommand


class Command(PolsarCommand):
    """
    Run the ablation ladder on every dataset and the alpha sweep on the first.

    Usage:
        python manage.py ablate --datasets runs/a/manifest.json runs/b/manifest.json --out runs/ablation
        python manage.py ablate --config ablate.json --repeats 3

    Writes:
        ablation.csv: One row per (section, dataset, variant, alpha)
        ablation_runs.csv: Per-repeat rows (only with --repeats > 1)
    """

    help = 'Train and score the ablation ladder and the alpha sweep.'

    def add_command_arguments(self, parser):
        parser.add_argument('--datasets', nargs='+', default=None,
                            help='scene manifests (default: from --config, else --scene)')
        parser.add_argument('--scene', default=None, help='single scene manifest (default: from --config)')
        parser.add_argument('--alpha', type=float, default=None,
                            help='alpha of the +SDSR+DGSD rung (default: 0.7)')
        parser.add_argument('--alphas', type=float, nargs='+', default=None,
                            help='alpha sweep values (default: 0.0 0.1 ... 1.0)')
        parser.add_argument('--epochs', type=int, default=None, help='training epochs per model (default: 30)')
        parser.add_argument('--repeats', type=int, default=None,
                            help='independent repeats to average (default: 1)')

    def overrides(self, options):
        return {
            'datasets': options['datasets'],
            'scene': options['scene'],
            'alpha': options['alpha'],
            'alphas': options['alphas'],
            'epochs': options['epochs'],
            'repeats': options['repeats'],
        }

    def prepare(self, config, options):
        return AblationRunner(config)

    def run(self, config, staging, runner):
        averaged, runs = runner.run()
        write_ablation_csv(staging / 'ablation.csv', averaged)
        if config.repeats > 1:
            write_ablation_csv(staging / 'ablation_runs.csv', runs, with_repeat=True)
        self.report(f"ablation over {len(runner.datasets)} dataset(s), {config.repeats} repeat(s): "
                    f"{len(averaged)} rows written to {config.out_dir}")
