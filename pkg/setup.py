#!/usr/bin/env python3
"""
Bootstrap script for the SKDNet pipeline

Creates ./venv, installs requirements.txt into it and checks the Django
project. With --smoke it also runs the whole command chain once on a
16x16 scene under runs/smoke.
"""
import argparse
import json
import os
import subprocess
import sys
from pathlib import Path

VENV = Path('venv')
SMOKE_DIR = Path('runs') / 'smoke'
SMOKE_CONFIG = {
    'window': 6, 'patch': 3, 'dim': 8, 'depth': 1, 'conv_channels': [4, 4, 4],
    'epochs': 1, 'batch_size': 16, 'train_ratio': 0.5,
}


def venv_python():
    if os.name == 'nt':
        return str(VENV / 'Scripts' / 'python.exe')
    return str(VENV / 'bin' / 'python')


def run_step(args, description):
    """Run one step; print its stderr and return False on failure."""
    print(f"\n🔄 {description}...")
    try:
        subprocess.run(args, check=True, capture_output=True, text=True)
    except subprocess.CalledProcessError as e:
        print(f"❌ {description} failed:")
        print(f"Error: {e.stderr}")
        return False
    print(f"✅ {description} completed successfully")
    return True


def manage(*args):
    return [venv_python(), 'manage.py', *args]


def smoke_steps():
    SMOKE_DIR.mkdir(parents=True, exist_ok=True)
    config = SMOKE_DIR / 'run.json'
    config.write_text(json.dumps(SMOKE_CONFIG, indent=4))
    flags = ['--config', str(config)]
    scene = str(SMOKE_DIR / 'scene')
    manifest = str(SMOKE_DIR / 'scene' / 'manifest.json')
    teachers = SMOKE_DIR / 'teachers'
    return [
        (manage('synth', '--complementary', '--size', '16', '--out', scene), 'Generating a 16x16 scene'),
        *[
            (manage('train_teacher', '--scene', manifest, '--band', band, *flags, '--out', str(teachers)),
             f'Training the band-{band} teacher')
            for band in ('1', '2')
        ],
        (manage('train_student', '--scene', manifest, *flags,
                '--teacher1', str(teachers / 'teacher_band1.skd'),
                '--teacher2', str(teachers / 'teacher_band2.skd'),
                '--out', str(SMOKE_DIR / 'student')), 'Distilling the student'),
        (manage('eval', str(SMOKE_DIR / 'student' / 'student.skd'), '--scene', manifest,
                '--out', str(SMOKE_DIR / 'eval')), 'Evaluating the student'),
    ]


def main():
    parser = argparse.ArgumentParser(description='Set up the SKDNet pipeline')
    parser.add_argument('--smoke', action='store_true', help='run the command chain once on a tiny scene')
    options = parser.parse_args()

    print("🚀 Setting up SKDNet...")
    steps = [
        ([venv_python(), '-m', 'pip', 'install', '--upgrade', 'pip'], 'Upgrading pip'),
        ([venv_python(), '-m', 'pip', 'install', '-r', 'requirements.txt'], 'Installing dependencies'),
        (manage('check'), 'Checking project configuration'),
    ]
    if not VENV.exists():
        steps.insert(0, ([sys.executable, '-m', 'venv', str(VENV)], 'Creating virtual environment'))
    if options.smoke:
        steps.extend(smoke_steps())

    for args, description in steps:
        if not run_step(args, description):
            print("\n⚠️  Setup incomplete. Please run the following manually:")
            print(f"   {' '.join(args)}")
            sys.exit(1)

    print("\n🎉 Setup completed successfully!")
    if options.smoke:
        print(f"   Smoke run outputs: {SMOKE_DIR}")
    print("\n📋 Next steps:")
    print(f"   1. Activate the environment: source {VENV}/bin/activate")
    print("   2. Generate a scene:")
    print("      python manage.py synth --complementary --out runs/scene")
    print("   3. Train the teachers and the student (see README.md)")
    print("   4. Run the tests:")
    print("      python manage.py test polsar")


if __name__ == '__main__':
    main()
