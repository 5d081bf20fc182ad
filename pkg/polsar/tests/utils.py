"""Shared fixtures for the polsar tests."""

import json
import tempfile
from pathlib import Path

import numpy as np

from polsar.core import Sample, vectorize_many
from polsar.nn.modules import ModelConfig
from polsar.specs import DistillConfig
from polsar.wishart import cholesky, sample_wishart_many

TINY_RUN = {
    'window': 6,
    'patch': 3,
    'dim': 8,
    'depth': 1,
    'mlp_ratio': 2,
    'conv_channels': [4, 4, 4],
    'epochs': 1,
    'batch_size': 16,
    'train_ratio': 0.5,
    'eval_limit': 20,
}


def tiny_model_config(in_channels=9, num_classes=3, **changes):
    values = dict(
        in_channels=in_channels, num_classes=num_classes, window=6, patch=3,
        dim=8, depth=1, mlp_ratio=2, conv_channels=(4, 4, 4),
    )
    values.update(changes)
    return ModelConfig(**values)


def tiny_distill_config(**changes):
    values = dict(epochs=1, batch_size=16, window=6, train_ratio=0.5, eval_limit=20, seed=3)
    values.update(changes)
    return DistillConfig(**values)


def random_hermitian_pd(rng, q=3, jitter=0.5):
    """A random well-conditioned Hermitian positive-definite matrix."""
    a = rng.standard_normal((q, q)) + 1j * rng.standard_normal((q, q))
    return a @ a.conj().T / q + jitter * np.eye(q)


def wishart_patch(rng, window, centers, looks=4):
    """
    Float32 patch (s, s, 9 * bands) of Wishart draws.

    Args:
        centers: Per-pixel centers, complex array (s*s, bands, 3, 3)
    """
    centers = np.asarray(centers, dtype=np.complex128)
    pixels, bands = centers.shape[:2]
    blocks = []
    for band in range(bands):
        factors = np.stack([cholesky(center) for center in centers[:, band]])
        draws = sample_wishart_many(factors, looks, rng)
        blocks.append(vectorize_many(draws))
    return np.concatenate(blocks, axis=-1).reshape(window, window, -1).astype(np.float32)


def random_sample(rng, window=4, bands=1, looks=4):
    """A Sample whose pixels are drawn around a few random centers."""
    choices = np.stack([
        np.stack([random_hermitian_pd(rng) for _ in range(bands)]) for _ in range(3)
    ])
    picks = rng.integers(0, 3, size=window * window)
    return Sample(wishart_patch(rng, window, choices[picks], looks), 0, (0, 0))


class TemporaryDirectoryMixin:
    """Gives each test a fresh ``self.tmp`` directory."""

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()

    def write_json(self, name, data):
        path = self.tmp / name
        path.write_text(json.dumps(data))
        return path
