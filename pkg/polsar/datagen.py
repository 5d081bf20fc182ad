"""
Synthetic dual-frequency scenes and scene file I/O.

Each pixel of class m in band b is an independent multilook Wishart draw
centred on ``spec.centers[b, m]``. A fraction rho of every region's pixels
(the same positions in both bands) is drawn from a uniformly chosen other
class instead, which plants the mixed, impure windows that sample
rectification is meant to clean up.

Rows are generated independently: row r of band b draws from the
substream ``(seed, 'datagen', b, r)``, so the output is identical whatever
the thread count.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import UNLABELED, PolsarRaster, devectorize_many, vectorize_many
from .exceptions import ValidationError
from .formats import read_pcv1, read_pgm, write_pcv1, write_pgm
from .seeding import make_rng
from .serializers import ManifestSerializer, format_errors
from .specs import Region, SceneSpec, default_palette
from .wishart import cholesky, sample_wishart_many

logger = logging.getLogger(__name__)

BAND_TAGS = ('band1', 'band2')
MANIFEST_NAME = 'manifest.json'


@dataclass(frozen=True, eq=False)
class DualBandScene:
    """
    Two co-registered single-band rasters sharing one label map.

    Unpacks as ``band1, band2, labels``.
    """

    band1: PolsarRaster
    band2: PolsarRaster
    class_names: tuple
    palette: tuple

    def __post_init__(self):
        if self.band1.features.shape != self.band2.features.shape:
            raise ValidationError("band rasters of a scene must have the same shape")

    def __iter__(self):
        return iter((self.band1, self.band2, self.labels))

    @property
    def labels(self):
        return self.band1.labels

    @property
    def num_classes(self):
        return len(self.class_names)

    def band(self, index):
        """Return band 1 or band 2."""
        if index not in (1, 2):
            raise ValidationError(f"band must be 1 or 2, got {index}")
        return self.band1 if index == 1 else self.band2


# ============================================================================
# Scene generation
# ============================================================================

def impurity_sources(spec, labels):
    """
    Pick the class each pixel is drawn from.

    Returns:
        uint8 array (H, W): the pixel's own label, or for the rho-fraction
        of each region chosen uniformly, a random other class. Unlabeled
        pixels keep 255.
    """
    sources = labels.copy()
    if spec.impurity <= 0 or spec.num_classes < 2:
        return sources
    for index, region in enumerate(spec.regions):
        owned = np.flatnonzero((region.mask(spec.height, spec.width) & (labels == region.label)).ravel())
        count = int(round(spec.impurity * owned.size))
        if count == 0:
            continue
        rng = make_rng(spec.seed, 'impurity', index)
        chosen = rng.choice(owned, size=count, replace=False)
        # uniform over the M - 1 other classes
        offsets = rng.integers(1, spec.num_classes, size=count)
        flat = sources.reshape(-1)
        flat[chosen] = (region.label + offsets) % spec.num_classes
    return sources


def _background_center(spec, band):
    return spec.centers[band].mean(axis=0)


def _generate_row(spec, band, row, sources_row, factors):
    rng = make_rng(spec.seed, 'datagen', band, row)
    row_factors = factors[sources_row]
    draws = sample_wishart_many(row_factors, spec.looks, rng)
    return vectorize_many(draws).astype(np.float32)


def generate_band(spec, band, sources, threads=1):
    """Draw the (H, W, 9) feature raster of one band from per-pixel source classes."""
    factors = np.stack(
        [cholesky(spec.centers[band, label]) for label in range(spec.num_classes)]
        + [cholesky(_background_center(spec, band))]
    )
    # unlabeled pixels use the extra background factor at index M
    indices = np.where(sources == UNLABELED, spec.num_classes, sources).astype(np.intp)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(
            lambda row: _generate_row(spec, band, row, indices[row], factors),
            range(spec.height),
        ))
    return np.stack(rows)


def generate_scene(spec, threads=1):
    """
    Generate a synthetic dual-frequency scene.

    Args:
        spec: Validated SceneSpec
        threads: Worker threads for row generation (output is independent
            of this value)

    Returns:
        DualBandScene; unpacks as ``band1, band2, labels``
    """
    spec.validate()
    labels = spec.label_map()
    sources = impurity_sources(spec, labels)
    impure = int(np.count_nonzero((sources != labels) & (labels != UNLABELED)))
    logger.info(
        "generating %dx%d scene, %d classes, L=%d, %d impure pixels",
        spec.height, spec.width, spec.num_classes, spec.looks, impure,
    )
    bands = [
        PolsarRaster(generate_band(spec, band, sources, threads), labels, BAND_TAGS[band])
        for band in range(2)
    ]
    return DualBandScene(bands[0], bands[1], spec.class_names, spec.palette)


# Well-separated class centers, given as Feature9 vectors; they loosely
# follow surface, volume, double-bounce and mixed scattering.
_BASE_CENTERS = (
    (1.00, 0.00, 0.00, 0.30, 0.05, 0.25, 0.00, 0.00, 0.50),
    (0.30, 0.00, 0.00, 0.02, 0.00, 0.60, 0.00, 0.00, 0.30),
    (2.00, 0.00, 0.00, -0.80, 0.20, 0.10, 0.00, 0.00, 1.50),
    (0.60, 0.05, 0.02, 0.10, -0.10, 1.20, 0.05, 0.00, 0.20),
    (0.15, 0.00, 0.00, 0.05, 0.00, 0.05, 0.00, 0.00, 0.15),
    (3.00, 0.20, 0.10, 1.50, 0.00, 0.40, 0.05, 0.05, 1.00),
)

DEFAULT_CONFUSION = {0: (0, 1), 1: (1, 2)}


def make_complementary_spec(num_classes=3, confusion=None, *, size=64, scale=1.05,
                            looks=4, impurity=0.0, seed=0):
    """
    Build a scene in which each band is weak on a different class pair.

    In each band the second class of its confused pair gets the first
    class's center scaled by ``scale`` (near-identical), while every other
    class keeps a well-separated center. Band 2 uses the base centers
    shifted by two so classes that coincide in band 1 differ in band 2.
    Classes are laid out as vertical stripes of (near) equal width.

    Args:
        num_classes: Number of classes M (2..6)
        confusion: {band index (0 or 1): (class_a, class_b)}; defaults to
            band 1 confusing classes 0/1 and band 2 confusing 1/2
        size: Scene height and width
        scale: Scaling between the confused centers
        looks: Wishart looks
        impurity: Fraction of impure pixels per region
        seed: Root seed

    Returns:
        Validated SceneSpec
    """
    if not 2 <= num_classes <= len(_BASE_CENTERS):
        raise ValidationError(f"complementary scenes support 2..{len(_BASE_CENTERS)} classes")
    confusion = DEFAULT_CONFUSION if confusion is None else confusion
    bases = devectorize_many(np.array(_BASE_CENTERS))
    centers = np.zeros((2, num_classes, 3, 3), dtype=np.complex128)
    for band in range(2):
        shift = 2 * band
        for label in range(num_classes):
            centers[band, label] = bases[(label + shift) % len(_BASE_CENTERS)]
        pair = confusion.get(band)
        if pair is not None:
            first, second = pair
            if not (0 <= first < num_classes and 0 <= second < num_classes) or first == second:
                raise ValidationError(f"invalid confusion pair {pair} for band {band + 1}")
            centers[band, second] = scale * centers[band, first]

    edges = np.linspace(0, size, num_classes + 1).round().astype(int)
    regions = [
        Region('rect', label, 0, int(edges[label]), size, int(edges[label + 1] - edges[label]))
        for label in range(num_classes)
    ]
    return SceneSpec(
        height=size,
        width=size,
        num_classes=num_classes,
        regions=regions,
        centers=centers,
        looks=looks,
        impurity=impurity,
        seed=seed,
        class_names=tuple(f"class{label}" for label in range(num_classes)),
        palette=default_palette(num_classes),
    ).validate()


# ============================================================================
# Scene files
# ============================================================================

def write_raster(raster, path, labels_path=None):
    write_pcv1(path, raster.features)
    if labels_path is not None and raster.labels is not None:
        write_pgm(labels_path, raster.labels)


def write_scene(scene, out_dir):
    """
    Write ``band1.pcv``, ``band2.pcv``, ``labels.pgm`` and ``manifest.json``.

    Returns:
        Path of the manifest
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_raster(scene.band1, out_dir / 'band1.pcv', out_dir / 'labels.pgm')
    write_raster(scene.band2, out_dir / 'band2.pcv')
    manifest = {
        'format': 'PCV1',
        'height': scene.band1.height,
        'width': scene.band1.width,
        'num_classes': scene.num_classes,
        'band1': 'band1.pcv',
        'band2': 'band2.pcv',
        'labels': 'labels.pgm',
        'class_names': list(scene.class_names),
        'palette': [list(color) for color in scene.palette],
    }
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    return manifest_path


def read_manifest(manifest_path):
    manifest_path = Path(manifest_path)
    try:
        data = json.loads(manifest_path.read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"manifest not found: {manifest_path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    serializer = ManifestSerializer(data=data)
    if not serializer.is_valid():
        raise ValidationError(f"invalid manifest {manifest_path}: {format_errors(serializer.errors)}")
    return serializer.save()


def read_scene(manifest_path):
    """
    Load a scene from its manifest.

    Raises:
        ValidationError: If the manifest is invalid, any file's dimensions
            disagree with it, or a label exceeds the declared classes
        FormatError: If a band or label file is malformed
    """
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    labels = read_pgm(root / manifest['labels'])
    expected = (manifest['height'], manifest['width'])
    if labels.shape != expected:
        raise ValidationError(f"label raster is {labels.shape}, manifest declares {expected}")
    bands = []
    for index, tag in enumerate(BAND_TAGS, start=1):
        features = read_pcv1(root / manifest[tag])
        if features.shape[:2] != expected:
            raise ValidationError(f"band {index} is {features.shape[:2]}, manifest declares {expected}")
        raster = PolsarRaster(features, labels, tag)
        raster.check_classes(manifest['num_classes'])
        bands.append(raster)
    return DualBandScene(bands[0], bands[1], tuple(manifest['class_names']),
                         tuple(tuple(color) for color in manifest['palette']))
