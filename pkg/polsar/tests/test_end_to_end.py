"""
Desk-scale runs of the whole method on synthetic scenes.

These train full-size models for several minutes and only run with
SKDNET_RUN_SLOW_TESTS=1.
"""

import csv
from io import StringIO
from unittest import skipUnless

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.test import SimpleTestCase, tag

from polsar.datagen import generate_scene, make_complementary_spec
from polsar.dgsd import train_student, train_teacher
from polsar.evaluation import evaluate_scene
from polsar.serializers import build_run_config

from .utils import TemporaryDirectoryMixin

# classes each band is designed to confuse
CONFUSED = {1: (0, 1), 2: (1, 2)}


@tag('slow')
@skipUnless(settings.RUN_SLOW_TESTS, 'set SKDNET_RUN_SLOW_TESTS=1 to run')
class ComplementarySceneRunTestCase(TemporaryDirectoryMixin, SimpleTestCase):
    def test_student_beats_both_teachers(self):
        """Test the dual-band student beats each teacher by 3 points on a 64x64 scene"""
        scene = generate_scene(make_complementary_spec(3, size=64, seed=11))
        config = build_run_config(out_dir=str(self.tmp), seed=11, threads=4, epochs=10)
        teachers, teacher_reports = [], {}
        for band in (1, 2):
            result = train_teacher(scene.band(band), config.distill_config(), config.model_config(9, 3), band=band)
            teachers.append(result.checkpoint)
            teacher_reports[band] = evaluate_scene(result.checkpoint, scene, seed=config.seed)[1]

        student = train_student(
            scene.band1, scene.band2, teachers, config.distill_config(), config.model_config(18, 3),
        )
        _, student_report = evaluate_scene(student.checkpoint, scene, seed=config.seed)

        for band, report in teacher_reports.items():
            self.assertGreaterEqual(student_report['OA'] - report['OA'], 0.03)
            accuracy = report['per_class_accuracy']
            pair = CONFUSED[band]
            other = ({0, 1, 2} - set(pair)).pop()
            self.assertLess(np.mean([accuracy[label] for label in pair]), 0.85)
            self.assertGreater(accuracy[other], 0.95)


@tag('slow')
@skipUnless(settings.RUN_SLOW_TESTS, 'set SKDNET_RUN_SLOW_TESTS=1 to run')
class AblationDirectionTestCase(TemporaryDirectoryMixin, SimpleTestCase):
    def call(self, name, *args):
        call_command(name, *args, stdout=StringIO(), stderr=StringIO())

    def test_rectification_helps_on_impure_scene(self):
        """Test SDSR teachers beat plain teachers on average over 3 seeds"""
        self.call('synth', '--complementary', '--size', '64', '--impurity', '0.2',
                  '--seed', '13', '--out', str(self.tmp / 'scene'))
        self.call('ablate', '--scene', str(self.tmp / 'scene' / 'manifest.json'), '--repeats', '3',
                  '--epochs', '10', '--alphas', '0.7', '--threads', '4', '--out', str(self.tmp / 'ablation'))
        with (self.tmp / 'ablation' / 'ablation_runs.csv').open() as handle:
            rows = list(csv.DictReader(handle))
        oa = {
            (row['variant'], row['repeat'], branch): float(row[f"{branch}_oa"])
            for row in rows if row['variant'] in ('baseline', '+SDSR')
            for branch in ('band1', 'band2')
        }
        improvements = [
            oa['+SDSR', repeat, branch] - oa['baseline', repeat, branch]
            for (variant, repeat, branch) in oa if variant == 'baseline'
        ]
        self.assertEqual(len(improvements), 6)
        self.assertGreater(np.mean(improvements), 0.0)


@tag('slow')
@skipUnless(settings.RUN_SLOW_TESTS, 'set SKDNET_RUN_SLOW_TESTS=1 to run')
class DeterminismTestCase(TemporaryDirectoryMixin, SimpleTestCase):
    def call(self, name, *args):
        call_command(name, *args, stdout=StringIO(), stderr=StringIO())

    def test_training_outputs_are_byte_identical(self):
        """Test repeated teacher and student runs reproduce every output byte"""
        self.call('synth', '--complementary', '--size', '32', '--out', str(self.tmp / 'scene'))
        manifest = str(self.tmp / 'scene' / 'manifest.json')
        for name in ('a', 'b'):
            out = self.tmp / name
            for band in ('1', '2'):
                self.call('train_teacher', '--scene', manifest, '--band', band, '--epochs', '2',
                          '--threads', '2', '--out', str(out))
            self.call('train_student', '--scene', manifest, '--epochs', '2', '--threads', '2',
                      '--teacher1', str(out / 'teacher_band1.skd'), '--teacher2', str(out / 'teacher_band2.skd'),
                      '--out', str(out / 'student'))
        for relative in ('teacher_band1.skd', 'teacher_band2.skd', 'metrics_band1.csv',
                         'student/student.skd', 'student/metrics_student.csv', 'student/gate_histogram.csv'):
            self.assertEqual((self.tmp / 'a' / relative).read_bytes(), (self.tmp / 'b' / relative).read_bytes())


@tag('slow')
@skipUnless(settings.RUN_SLOW_TESTS, 'set SKDNET_RUN_SLOW_TESTS=1 to run')
class SeparatedSceneTeacherTestCase(TemporaryDirectoryMixin, SimpleTestCase):
    def test_teacher_learns_separated_classes(self):
        """Test a band-1 teacher reaches 95% OA on a pure, well-separated 3-class scene"""
        scene = generate_scene(make_complementary_spec(3, confusion={}, size=48, impurity=0.0, seed=17))
        config = build_run_config(out_dir=str(self.tmp), seed=17, threads=4, epochs=60)
        result = train_teacher(scene.band1, config.distill_config(), config.model_config(9, 3), band=1)
        _, report = evaluate_scene(result.checkpoint, scene, seed=config.seed)
        self.assertGreaterEqual(report['OA'], 0.95)
