"""
Accuracy assessment and classification maps.

Metrics follow the usual remote-sensing definitions over a confusion
matrix F (rows: true class, columns: predicted class):

    OA    = sum_i F(i, i) / N
    AA    = mean over present classes of F(i, i) / rowsum(i)
    kappa = (OA - p_e) / (1 - p_e),  p_e = sum_i rowsum(i) colsum(i) / N^2

Maps are rendered one pixel per classified pixel with the scene palette;
unlabeled pixels are black.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import UNLABELED, concat_bands, extract_pixel_samples
from .exceptions import ValidationError
from .formats import decode_ppm, write_ppm
from .specs import check_palette
from .training import predict_samples

logger = logging.getLogger(__name__)

PREDICT_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """
    Attributes:
        counts: Int64 array (M, M); counts[i, j] = pixels of class i predicted j
    """

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValidationError(f"confusion matrix must be square, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValidationError("confusion matrix counts must be non-negative")
        object.__setattr__(self, 'counts', counts)

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)


@dataclass(frozen=True)
class Metrics:
    """
    Attributes:
        oa: Overall accuracy
        aa: Average accuracy over classes present in the reference
        kappa: Cohen's kappa, or None when p_e == 1
        per_class: Per-class accuracy, None for classes absent from the reference
        excluded: Classes left out of AA
    """

    oa: float
    aa: float
    kappa: float
    per_class: tuple
    excluded: tuple = field(default=())


def accumulate(predictions, labels, num_classes):
    """
    Tally predictions against reference labels.

    Pixels labeled 255 are skipped.

    Raises:
        ValidationError: On length mismatch or a class index >= num_classes
    """
    predictions = np.asarray(predictions).reshape(-1).astype(np.int64)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if predictions.shape != labels.shape:
        raise ValidationError(f"{predictions.size} predictions for {labels.size} labels")
    keep = labels != UNLABELED
    predictions, labels = predictions[keep], labels[keep]
    for name, values in (('label', labels), ('prediction', predictions)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise ValidationError(f"{name} class index outside 0..{num_classes - 1}")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return ConfusionMatrix(counts)


def oa_aa_kappa(confusion):
    """
    Overall accuracy, average accuracy and kappa.

    Classes with no reference pixels are excluded from AA with a warning.
    Kappa is None when chance agreement p_e equals 1.

    Raises:
        ValidationError: If the matrix is empty
    """
    counts = confusion.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise ValidationError("cannot compute accuracy from an empty confusion matrix")
    diagonal = np.diagonal(counts)
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    oa = float(diagonal.sum() / total)

    present = rows > 0
    excluded = tuple(int(label) for label in np.flatnonzero(~present))
    if excluded:
        logger.warning("classes %s have no reference pixels and are excluded from AA", list(excluded))
    per_class = tuple(
        float(diagonal[label] / rows[label]) if present[label] else None
        for label in range(confusion.num_classes)
    )
    aa = float(np.mean(diagonal[present] / rows[present]))

    chance = float((rows * cols).sum() / (total * total))
    kappa = None if chance == 1.0 else float((oa - chance) / (1.0 - chance))
    return Metrics(oa, aa, kappa, per_class, excluded)


def metrics_report(confusion, class_names=None):
    """JSON-ready report: per_class_accuracy, OA, AA, kappa, confusion."""
    metrics = oa_aa_kappa(confusion)
    report = {
        'per_class_accuracy': list(metrics.per_class),
        'OA': metrics.oa,
        'AA': metrics.aa,
        'kappa': metrics.kappa,
        'confusion': confusion.counts.tolist(),
    }
    if class_names is not None:
        report['class_names'] = list(class_names)
    return report


def write_metrics_report(path, report):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + '\n')
    return path


def format_accuracy_table(report):
    """Plain-text per-class accuracy table for logs."""
    names = report.get('class_names') or [f"class{i}" for i in range(len(report['per_class_accuracy']))]
    lines = [f"{'class':<16}{'accuracy':>10}"]
    for name, value in zip(names, report['per_class_accuracy']):
        lines.append(f"{name:<16}{'-' if value is None else f'{100 * value:.2f}':>10}")
    kappa = report['kappa']
    lines.append(f"{'OA':<16}{100 * report['OA']:>10.2f}")
    lines.append(f"{'AA':<16}{100 * report['AA']:>10.2f}")
    lines.append(f"{'kappa':<16}{'undefined' if kappa is None else f'{100 * kappa:.2f}':>10}")
    return '\n'.join(lines)


# ============================================================================
# Maps
# ============================================================================

def colorize(predictions, palette, num_classes=None):
    """
    Paint a class raster.

    Args:
        predictions: (H, W) integer raster; 255 marks unlabeled pixels
        palette: At least M RGB triples
        num_classes: Declared M; the palette must cover it even if some
            classes are never predicted

    Returns:
        Uint8 array (H, W, 3); unlabeled pixels are black

    Raises:
        ValidationError: If a class has no palette entry
    """
    predictions = np.asarray(predictions)
    if num_classes is not None and len(palette) < num_classes:
        raise ValidationError(f"palette has {len(palette)} colors but {num_classes} classes are declared")
    labeled = predictions != UNLABELED
    highest = int(predictions[labeled].max()) if np.any(labeled) else -1
    if highest >= len(palette):
        raise ValidationError(f"palette has {len(palette)} colors but class {highest} occurs")
    colors = np.asarray(palette, dtype=np.uint8).reshape(-1, 3)
    rgb = np.zeros(predictions.shape + (3,), dtype=np.uint8)
    rgb[labeled] = colors[predictions[labeled].astype(np.intp)]
    return rgb


def render_map(predictions, palette, ppm_path=None, png_path=None, num_classes=None):
    """
    Render a classification map as binary PPM and, optionally, PNG.

    Returns:
        The (H, W, 3) uint8 image
    """
    rgb = colorize(predictions, palette, num_classes)
    if ppm_path is not None:
        Path(ppm_path).parent.mkdir(parents=True, exist_ok=True)
        write_ppm(ppm_path, rgb)
    if png_path is not None:
        Path(png_path).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(rgb).save(png_path, format='PNG')
    return rgb


def classes_from_rgb(rgb, palette):
    """
    Invert :func:`colorize`.

    Raises:
        ValidationError: If a pixel's color is neither black nor in the palette
    """
    rgb = np.asarray(rgb, dtype=np.uint8)
    check_palette(palette, len(palette))
    codes = (rgb[..., 0].astype(np.int64) << 16) | (rgb[..., 1].astype(np.int64) << 8) | rgb[..., 2]
    lookup = {(r << 16) | (g << 8) | b: label for label, (r, g, b) in enumerate(palette)}
    classes = np.full(codes.shape, UNLABELED, dtype=np.uint8)
    for code in np.unique(codes):
        if code == 0:
            continue
        if int(code) not in lookup:
            raise ValidationError(f"map color #{int(code):06x} is not in the palette")
        classes[codes == code] = lookup[int(code)]
    return classes


def parse_ppm(data, palette):
    """Parse PPM bytes produced by :func:`render_map` back into a class raster."""
    return classes_from_rgb(decode_ppm(data), palette)


# ============================================================================
# Scene inference
# ============================================================================

def input_raster(checkpoint, scene):
    """The raster a checkpoint classifies: one band for teachers, both for students."""
    if checkpoint.model_config.in_channels == 18:
        return concat_bands(scene.band1, scene.band2)
    band = checkpoint.metadata.get('band', 1)
    return scene.band(band if band in (1, 2) else 1)


def predict_scene(checkpoint, scene, *, seed=0, all_pixels=False, chunk=PREDICT_CHUNK):
    """
    Classify a scene with pixel-centred windows.

    Border windows are shifted inside the image. Each window's
    rectification stream is seeded from ``(seed, 'predict', row, col)``,
    so maps are reproducible.

    Args:
        checkpoint: Checkpoint to evaluate
        scene: DualBandScene
        seed: Root seed of the rectification streams
        all_pixels: Classify every pixel, not only labeled ones

    Returns:
        Uint8 array (H, W) of predicted classes, 255 where not classified
    """
    model = checkpoint.build_model()
    raster = input_raster(checkpoint, scene)
    if all_pixels:
        raster = raster.with_labels(None)
    window = checkpoint.model_config.window
    samples = extract_pixel_samples(raster, window)
    predictions = np.full((raster.height, raster.width), UNLABELED, dtype=np.uint8)
    for start in range(0, len(samples), chunk):
        part = samples[start:start + chunk]
        patches = np.stack([sample.patch for sample in part])
        keys = [('predict', sample.center[0], sample.center[1]) for sample in part]
        probabilities = predict_samples(model, checkpoint.normalizer, patches, keys, seed=seed)
        rows, cols = zip(*(sample.center for sample in part))
        predictions[list(rows), list(cols)] = np.argmax(probabilities, axis=1)
    logger.info("classified %d pixels of a %dx%d scene", len(samples), raster.height, raster.width)
    return predictions


def evaluate_scene(checkpoint, scene, *, seed=0):
    """
    Classify every pixel and score the labeled ones.

    Returns:
        (prediction raster over all pixels, metrics report dict)
    """
    predictions = predict_scene(checkpoint, scene, seed=seed, all_pixels=True)
    confusion = accumulate(predictions, scene.labels, scene.num_classes)
    return predictions, metrics_report(confusion, scene.class_names)
