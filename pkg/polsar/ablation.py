"""
Ablation ladder and alpha sweep.

For every dataset the ladder trains

    baseline       single-band teachers without rectification
    +SDSR          single-band teachers with rectification
    +SDSR+cat      dual-band student, alpha = 0, no teachers
    +SDSR+DGSD     dual-band student distilled from the +SDSR teachers

and the sweep retrains the +SDSR+DGSD student on the first dataset for
each alpha in ``config.alphas``, reusing that dataset's +SDSR teachers.
Each model is scored on every labeled pixel of its scene. With
``repeats > 1`` the whole run is repeated under derived seeds and the
table holds the mean; per-run rows go to a second table.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FEATURES_PER_BAND
from .datagen import read_scene
from .dgsd import train_student, train_teacher
from .evaluation import accumulate, oa_aa_kappa, predict_scene
from .exceptions import ConfigurationError
from .seeding import derive_seed

logger = logging.getLogger(__name__)

LADDER = ('baseline', '+SDSR', '+SDSR+cat', '+SDSR+DGSD')
BRANCHES = ('band1', 'band2', 'joint')
METRICS = ('oa', 'aa', 'kappa')
COLUMNS = ('section', 'dataset', 'variant', 'alpha') + tuple(
    f"{branch}_{metric}" for branch in BRANCHES for metric in METRICS
)


@dataclass
class AblationRow:
    section: str
    dataset: str
    variant: str
    alpha: float = None
    scores: dict = field(default_factory=dict)
    repeat: int = None

    def key(self):
        return (self.section, self.dataset, self.variant, self.alpha)

    def as_csv(self):
        values = [self.section, self.dataset, self.variant, '' if self.alpha is None else f"{self.alpha:.2f}"]
        for branch in BRANCHES:
            for metric in METRICS:
                value = self.scores.get(f"{branch}_{metric}")
                values.append('' if value is None else f"{value:.6f}")
        return values


def score(checkpoint, scene, seed):
    """OA / AA / kappa of a checkpoint over the scene's labeled pixels."""
    predictions = predict_scene(checkpoint, scene, seed=seed)
    metrics = oa_aa_kappa(accumulate(predictions, scene.labels, scene.num_classes))
    return {'oa': metrics.oa, 'aa': metrics.aa, 'kappa': metrics.kappa}


def _prefixed(branch, metrics):
    return {f"{branch}_{name}": value for name, value in metrics.items()}


def dataset_name(path):
    path = Path(path)
    return path.parent.name or path.stem


def repeat_seed(seed, repeat):
    return seed if repeat == 0 else derive_seed(seed, 'repeat', repeat)


class AblationRunner:
    """
    Runs the ladder and sweep for one RunConfig.

    Args:
        config: RunConfig; ``datasets`` lists scene manifests (``scene`` is
            used when the list is empty)
    """

    def __init__(self, config):
        self.config = config
        self.datasets = list(config.datasets) or ([config.scene] if config.scene else [])
        if not self.datasets:
            raise ConfigurationError("ablate needs at least one dataset (datasets or scene)")

    def teachers(self, scene, config, use_sdsr):
        config = config.replace(use_sdsr=use_sdsr)
        distill = config.distill_config()
        model_config = config.model_config(FEATURES_PER_BAND, scene.num_classes)
        return tuple(
            train_teacher(scene.band(band), distill, model_config, band=band).checkpoint
            for band in (1, 2)
        )

    def student(self, scene, config, teachers, alpha):
        model_config = config.model_config(2 * FEATURES_PER_BAND, scene.num_classes)
        result = train_student(
            scene.band1, scene.band2, teachers if alpha > 0 else (),
            config.distill_config(alpha=alpha), model_config,
        )
        return result.checkpoint

    def run_dataset(self, path, repeat, sweep):
        config = self.config.replace(seed=repeat_seed(self.config.seed, repeat), use_sdsr=True)
        scene = read_scene(path)
        name = dataset_name(path)
        rows = []
        logger.info("ablation on %s (repeat %d, seed %d)", name, repeat + 1, config.seed)

        for variant, use_sdsr in (('baseline', False), ('+SDSR', True)):
            teachers = self.teachers(scene, config, use_sdsr)
            scores = {}
            for branch, checkpoint in zip(('band1', 'band2'), teachers):
                scores.update(_prefixed(branch, score(checkpoint, scene, config.seed)))
            rows.append(AblationRow('ladder', name, variant, None, scores, repeat))
        sdsr_teachers = teachers

        cat = self.student(scene, config, (), 0.0)
        rows.append(AblationRow('ladder', name, '+SDSR+cat', 0.0,
                                _prefixed('joint', score(cat, scene, config.seed)), repeat))

        students = {config.alpha: self.student(scene, config, sdsr_teachers, config.alpha)}
        rows.append(AblationRow('ladder', name, '+SDSR+DGSD', config.alpha,
                                _prefixed('joint', score(students[config.alpha], scene, config.seed)), repeat))

        if sweep:
            for alpha in self.config.alphas:
                if alpha not in students:
                    students[alpha] = (
                        cat if alpha == 0.0 else self.student(scene, config, sdsr_teachers, alpha)
                    )
                rows.append(AblationRow('alpha', name, '+SDSR+DGSD', alpha,
                                        _prefixed('joint', score(students[alpha], scene, config.seed)), repeat))
        return rows

    def run(self):
        """
        Returns:
            (averaged rows, per-run rows)
        """
        runs = []
        for repeat in range(self.config.repeats):
            for index, path in enumerate(self.datasets):
                runs.extend(self.run_dataset(path, repeat, sweep=index == 0))
        return average_rows(runs), runs


def average_rows(runs):
    """Mean of every score over repeats, keeping first-seen row order."""
    grouped = {}
    for row in runs:
        grouped.setdefault(row.key(), []).append(row)
    averaged = []
    for (section, dataset, variant, alpha), rows in grouped.items():
        scores = {}
        for name in rows[0].scores:
            values = [row.scores[name] for row in rows if row.scores.get(name) is not None]
            scores[name] = float(np.mean(values)) if values else None
        averaged.append(AblationRow(section, dataset, variant, alpha, scores))
    return averaged


def write_ablation_csv(path, rows, with_repeat=False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(list(COLUMNS) + (['repeat'] if with_repeat else []))
        for row in rows:
            writer.writerow(row.as_csv() + ([row.repeat + 1] if with_repeat else []))
    return path
