"""
Shared plumbing for the polsar management commands.

Every command accepts ``--config``, ``--seed``, ``--threads`` and
``--out``. Values merge as project defaults < environment < config file
< command-line flags. The merged configuration is validated before
anything is written; outputs are staged in a hidden directory inside the
output directory and moved into place file by file once the command
succeeds. Pipeline errors become ``CommandError`` with exit code 2
(configuration / input) or 3 (numerical failure).
"""

import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from ..datagen import read_scene
from ..exceptions import ConfigurationError, PolsarError
from ..serializers import build_run_config

logger = logging.getLogger(__name__)


def load_configured_scene(config):
    if not config.scene:
        raise ConfigurationError("a scene manifest is required (--scene or \"scene\" in the config file)")
    return read_scene(config.scene)


def scene_metadata(config, scene):
    """Checkpoint metadata shared by every training command."""
    return {
        'run': config.echo(),
        'class_names': list(scene.class_names),
        'palette': [list(color) for color in scene.palette],
    }


@contextmanager
def staged_output(out_dir):
    """
    Yield a staging directory whose files replace those in ``out_dir`` on success.

    On error the staging directory is removed and ``out_dir`` keeps its
    previous contents.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix='.staging-', dir=out_dir))
    try:
        yield staging
        for source in sorted(staging.rglob('*')):
            if source.is_dir():
                continue
            target = out_dir / source.relative_to(staging)
            target.parent.mkdir(parents=True, exist_ok=True)
            os.replace(source, target)
    finally:
        shutil.rmtree(staging, ignore_errors=True)


class PolsarCommand(BaseCommand):
    """
    Base class for the pipeline commands.

    Subclasses implement :meth:`prepare` and :meth:`run` and may add flags in
    :meth:`add_command_arguments` and config overrides in
    :meth:`overrides`.
    """

    requires_system_checks = []

    def add_arguments(self, parser):
        defaults = settings.SKDNET
        parser.add_argument('--config', default=None,
                            help='JSON run configuration file (default: none)')
        parser.add_argument('--seed', type=int, default=None,
                            help=f"root seed, 0..2^64-1 (default: {defaults['seed']})")
        parser.add_argument('--threads', type=int, default=None,
                            help=f"worker threads (default: {defaults['threads']})")
        parser.add_argument('--out', default=None,
                            help=f"output directory (default: {defaults['output_dir']})")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def overrides(self, options):
        """Command-specific RunConfig fields taken from the parsed flags."""
        return {}

    def build_config(self, options):
        return build_run_config(
            options['config'],
            seed=options['seed'],
            threads=options['threads'],
            out_dir=options['out'],
            **self.overrides(options),
        )

    def handle(self, *args, **options):
        if options.get('verbosity', 1) >= 2:
            logging.getLogger('polsar').setLevel(logging.DEBUG)
        try:
            config = self.build_config(options)
            inputs = self.prepare(config, options)
            with staged_output(config.out_dir) as staging:
                self.run(config, staging, inputs)
        except PolsarError as exc:
            logger.error("%s failed: %s", self.command_name, exc)
            raise CommandError(str(exc), returncode=exc.exit_code) from exc

    @property
    def command_name(self):
        return type(self).__module__.rsplit('.', 1)[-1].replace('_', '-')

    def prepare(self, config, options):
        """Load and validate every input; nothing is written before this returns."""
        return options

    def run(self, config, staging, inputs):
        raise NotImplementedError

    def report(self, message):
        self.stdout.write(self.style.SUCCESS(message))
