"""
Django settings for the skdnet project.

The project has no web surface: Django provides the management-command
CLI, the test runner and the logging configuration, and Django REST
framework serializers validate the JSON run configurations.

Every tunable default below can be overridden from the environment or a
``.env`` file through python-decouple.
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals; nothing here is served or signed.
SECRET_KEY = config('SECRET_KEY', default='skdnet-local-only-not-secret')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    "django.contrib.auth",
    "rest_framework",
    "polsar",
]

# No database: every artifact is a file under the run output directory.
DATABASES = {}


# Internationalization

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Django REST Framework (serializers only)
REST_FRAMEWORK = {
    'DEFAULT_RENDERER_CLASSES': [
        'rest_framework.renderers.JSONRenderer',
    ],
    'UNAUTHENTICATED_USER': None,
}


# Pipeline defaults
# Overridden in turn by the run configuration file and by command-line flags.

SKDNET = {
    'seed': config('SKDNET_SEED', default=0, cast=int),
    'threads': config('SKDNET_THREADS', default=1, cast=int),
    'output_dir': config('SKDNET_OUTPUT_DIR', default=str(BASE_DIR / 'runs')),
    'window': config('SKDNET_WINDOW', default=12, cast=int),
    'stride': config('SKDNET_STRIDE', default=1, cast=int),
    'patch': config('SKDNET_PATCH', default=3, cast=int),
    'dim': config('SKDNET_DIM', default=64, cast=int),
    'depth': config('SKDNET_DEPTH', default=2, cast=int),
    'mlp_ratio': config('SKDNET_MLP_RATIO', default=2, cast=int),
    'conv_channels': [16, 32, 32],
    'epochs': config('SKDNET_EPOCHS', default=30, cast=int),
    'batch_size': config('SKDNET_BATCH_SIZE', default=32, cast=int),
    'learning_rate': config('SKDNET_LEARNING_RATE', default=1e-3, cast=float),
    'lr_decay': config('SKDNET_LR_DECAY', default=0.9, cast=float),
    'lr_decay_every': config('SKDNET_LR_DECAY_EVERY', default=50, cast=int),
    'looks': config('SKDNET_LOOKS', default=4, cast=int),
    'alpha': config('SKDNET_ALPHA', default=0.7, cast=float),
    'train_ratio': config('SKDNET_TRAIN_RATIO', default=0.1, cast=float),
    'eval_limit': config('SKDNET_EVAL_LIMIT', default=1000, cast=int),
    'use_sdsr': config('SKDNET_USE_SDSR', default=True, cast=bool),
}

RUN_SLOW_TESTS = config('SKDNET_RUN_SLOW_TESTS', default=False, cast=bool)


# Logging

LOG_LEVEL = config('SKDNET_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'polsar': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}
