"""
PolSAR domain types and sample extraction.

This module defines the value objects the rest of the pipeline passes
around: per-pixel covariance matrices, feature rasters and s x s training
samples, together with the covariance <-> 9-D vector conversion and the
sliding-window sampler.

Feature vectors (``Feature9``) are plain numpy arrays whose last axis has
length 9, ordered::

    [C11, Re(C12), Im(C12), Re(C13), Im(C13), C22, Re(C23), Im(C23), C33]

A raster carrying two co-registered bands stores 18 channels: band 1's
nine features followed by band 2's.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, ValidationError

logger = logging.getLogger(__name__)

UNLABELED = 255
FEATURES_PER_BAND = 9

HERMITIAN_TOLERANCE = 1e-9
DIAGONAL_TOLERANCE = 1e-9
PSD_TOLERANCE = 1e-9

# (row, col) of each upper-triangle entry in Feature9 order
_DIAGONAL_SLOTS = ((0, 0), (1, 1), (2, 2))
_DIAGONAL_INDEX = (0, 5, 8)
_OFF_DIAGONAL_SLOTS = ((0, 1), (0, 2), (1, 2))
_OFF_DIAGONAL_INDEX = ((1, 2), (3, 4), (6, 7))


def _check_hermitian(entries):
    scale = max(float(np.max(np.abs(entries), initial=0.0)), 1e-300)
    asymmetry = float(np.max(np.abs(entries - np.conj(np.swapaxes(entries, -1, -2))), initial=0.0))
    if asymmetry > HERMITIAN_TOLERANCE * scale:
        raise ValidationError(
            f"covariance is not Hermitian: asymmetry {asymmetry:.3e} exceeds "
            f"{HERMITIAN_TOLERANCE:g} relative to max entry {scale:.3e}"
        )


@dataclass(frozen=True, eq=False)
class HermitianCov3:
    """
    3x3 complex Hermitian positive-semidefinite polarimetric covariance.

    Attributes:
        entries: Read-only (3, 3) complex128 array in linear power units

    Raises:
        ValidationError: If the matrix is not Hermitian, has a negative or
            complex diagonal, or an eigenvalue below -1e-9 * trace
    """

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.complex128)
        if entries.shape != (3, 3):
            raise ValidationError(f"covariance must be 3x3, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValidationError("covariance has non-finite entries")
        _check_hermitian(entries)
        diagonal = np.diagonal(entries)
        trace = float(np.sum(diagonal.real))
        if np.any(np.abs(diagonal.imag) > HERMITIAN_TOLERANCE * max(abs(trace), 1e-300)):
            raise ValidationError("covariance diagonal must be real")
        if np.any(diagonal.real < -DIAGONAL_TOLERANCE):
            raise ValidationError(f"covariance diagonal must be non-negative, got {diagonal.real}")
        eigenvalues = np.linalg.eigvalsh(entries)
        if eigenvalues[0] < -PSD_TOLERANCE * max(trace, 0.0):
            raise ValidationError(
                f"covariance is not positive semidefinite: min eigenvalue {eigenvalues[0]:.3e}"
            )
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @classmethod
    def identity(cls):
        return cls(np.eye(3, dtype=np.complex128))

    @property
    def trace(self):
        return float(np.trace(self.entries).real)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, HermitianCov3):
            return NotImplemented
        return bool(np.array_equal(self.entries, other.entries))

    def __hash__(self):
        return hash(self.entries.tobytes())

    def __repr__(self):
        return f"HermitianCov3(trace={self.trace:.6g})"


# ============================================================================
# Covariance <-> feature conversion
# ============================================================================

def vectorize_many(covariances):
    """
    Vectorize a stack of covariance matrices.

    Args:
        covariances: Complex array of shape (..., 3, 3), Hermitian

    Returns:
        Float64 array of shape (..., 9) in Feature9 order
    """
    covariances = np.asarray(covariances)
    features = np.empty(covariances.shape[:-2] + (FEATURES_PER_BAND,), dtype=np.float64)
    for (row, col), index in zip(_DIAGONAL_SLOTS, _DIAGONAL_INDEX):
        features[..., index] = covariances[..., row, col].real
    for (row, col), (re_index, im_index) in zip(_OFF_DIAGONAL_SLOTS, _OFF_DIAGONAL_INDEX):
        features[..., re_index] = covariances[..., row, col].real
        features[..., im_index] = covariances[..., row, col].imag
    return features


def devectorize_many(features):
    """
    Rebuild covariance matrices from Feature9 vectors.

    The lower triangle is the conjugate of the upper one, so the result is
    Hermitian by construction. No validation is performed; use
    :func:`devectorize` for a checked single conversion.

    Args:
        features: Real array of shape (..., 9)

    Returns:
        Complex128 array of shape (..., 3, 3)
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != FEATURES_PER_BAND:
        raise ValidationError(f"feature vectors must have 9 entries, got {features.shape[-1]}")
    covariances = np.zeros(features.shape[:-1] + (3, 3), dtype=np.complex128)
    for (row, col), index in zip(_DIAGONAL_SLOTS, _DIAGONAL_INDEX):
        covariances[..., row, col] = features[..., index]
    for (row, col), (re_index, im_index) in zip(_OFF_DIAGONAL_SLOTS, _OFF_DIAGONAL_INDEX):
        value = features[..., re_index] + 1j * features[..., im_index]
        covariances[..., row, col] = value
        covariances[..., col, row] = np.conj(value)
    return covariances


def vectorize_covariance(covariance):
    """
    Map a covariance matrix to its 9-D real feature vector.

    Args:
        covariance: HermitianCov3, or a (3, 3) complex array

    Returns:
        Float64 array of shape (9,)

    Raises:
        ValidationError: If a raw array is not Hermitian within 1e-9 relative
    """
    if not isinstance(covariance, HermitianCov3):
        entries = np.asarray(covariance, dtype=np.complex128)
        if entries.shape != (3, 3):
            raise ValidationError(f"covariance must be 3x3, got shape {entries.shape}")
        _check_hermitian(entries)
        return vectorize_many(entries)
    return vectorize_many(covariance.entries)


def devectorize(features):
    """
    Map a 9-D feature vector back to its covariance matrix.

    Args:
        features: Array-like of 9 finite reals

    Returns:
        HermitianCov3

    Raises:
        ValidationError: If the vector is not finite, has the wrong length,
            or has a diagonal entry below -1e-9
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (FEATURES_PER_BAND,):
        raise ValidationError(f"feature vector must have shape (9,), got {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValidationError("feature vector has non-finite entries")
    diagonal = features[list(_DIAGONAL_INDEX)]
    if np.any(diagonal < -DIAGONAL_TOLERANCE):
        raise ValidationError(f"feature vector has negative diagonal entries: {diagonal}")
    return HermitianCov3(devectorize_many(features))


# ============================================================================
# Rasters and samples
# ============================================================================

@dataclass(frozen=True, eq=False)
class PolsarRaster:
    """
    An H x W grid of feature vectors with an optional label map.

    Attributes:
        features: Read-only float32 array of shape (H, W, 9 * bands)
        labels: Read-only uint8 array of shape (H, W), or None.
            Class indices 0..M-1; 255 marks unlabeled pixels.
        band_tag: Free-form band name (e.g. "band1", "L")
    """

    features: np.ndarray
    labels: np.ndarray = None
    band_tag: str = ''

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float32)
        if features.ndim != 3 or features.shape[2] % FEATURES_PER_BAND or features.shape[2] == 0:
            raise ValidationError(
                f"raster features must have shape (H, W, 9k), got {features.shape}"
            )
        features.setflags(write=False)
        object.__setattr__(self, 'features', features)
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.uint8)
            if labels.shape != features.shape[:2]:
                raise ValidationError(
                    f"label raster shape {labels.shape} does not match features {features.shape[:2]}"
                )
            labels.setflags(write=False)
            object.__setattr__(self, 'labels', labels)

    @property
    def height(self):
        return self.features.shape[0]

    @property
    def width(self):
        return self.features.shape[1]

    @property
    def channels(self):
        return self.features.shape[2]

    @property
    def bands(self):
        return self.channels // FEATURES_PER_BAND

    def with_labels(self, labels):
        return PolsarRaster(self.features, labels, self.band_tag)

    def check_classes(self, num_classes):
        """Raise ValidationError if any labeled pixel has class index >= num_classes."""
        if self.labels is None:
            return
        labeled = self.labels[self.labels != UNLABELED]
        if labeled.size and int(labeled.max()) >= num_classes:
            raise ValidationError(
                f"label raster contains class {int(labeled.max())} but only {num_classes} classes are declared"
            )


@dataclass(frozen=True, eq=False)
class Sample:
    """
    One s x s window cut from a raster.

    Attributes:
        patch: Float32 array (s, s, 9 * bands); a read-only view of the raster
        label: Class index of the center pixel (255 when unlabeled)
        origin: (row, col) of the window's top-left pixel
        band_tag: Band name inherited from the raster
        center: (row, col) of the pixel this sample classifies
    """

    patch: np.ndarray
    label: int
    origin: tuple
    band_tag: str = ''
    center: tuple = field(default=None)

    def __post_init__(self):
        if self.center is None:
            half = self.window // 2
            object.__setattr__(self, 'center', (self.origin[0] + half, self.origin[1] + half))

    @property
    def window(self):
        return self.patch.shape[0]

    @property
    def bands(self):
        return self.patch.shape[2] // FEATURES_PER_BAND

    def covariances(self, band=0):
        """Pixel covariances of one band as a (s*s, 3, 3) complex array, row-major."""
        start = band * FEATURES_PER_BAND
        block = self.patch[:, :, start:start + FEATURES_PER_BAND]
        return devectorize_many(block.reshape(-1, FEATURES_PER_BAND))

    def replace_patch(self, patch):
        return Sample(patch, self.label, self.origin, self.band_tag, self.center)


def _check_window(raster, window, stride=1):
    if window < 1 or window > min(raster.height, raster.width):
        raise ConfigurationError(
            f"window size {window} must be in 1..{min(raster.height, raster.width)} "
            f"for a {raster.height}x{raster.width} raster"
        )
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")


def window_starts(extent, window, stride):
    """Window offsets along one axis; the last window is shifted in to end at the edge."""
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] != extent - window:
        starts.append(extent - window)
    return starts


def extract_samples(raster, window, stride=1, *, training=True):
    """
    Slide an s x s window over the raster.

    Window top-left corners run over ``range(0, H - s + 1, stride)`` in both
    directions, plus H - s (W - s) when the stride skips it so the last window ends on
    the border.
    Each window is labeled by its center pixel (s // 2, s // 2).

    Args:
        raster: PolsarRaster to cut
        window: Window size s
        stride: Step between window positions in pixels
        training: When True, only windows with a labeled center are kept and
            the raster must carry labels. When False every window is kept and
            its label is the center label, or 255 if the raster has none.

    Returns:
        List of Sample in row-major window order

    Raises:
        ConfigurationError: If s > min(H, W) or stride < 1
        ValidationError: If training extraction is requested without labels
    """
    _check_window(raster, window, stride)
    if training and raster.labels is None:
        raise ValidationError("training extraction requires a labeled raster")

    half = window // 2
    samples = []
    for top in window_starts(raster.height, window, stride):
        for left in window_starts(raster.width, window, stride):
            center = (top + half, left + half)
            label = UNLABELED if raster.labels is None else int(raster.labels[center])
            if training and label == UNLABELED:
                continue
            patch = raster.features[top:top + window, left:left + window]
            samples.append(Sample(patch, label, (top, left), raster.band_tag, center))
    return samples


def window_for_pixel(row, col, height, width, window):
    """Top-left corner of the s x s window centred on (row, col), shifted inside the image."""
    half = window // 2
    top = min(max(row - half, 0), height - window)
    left = min(max(col - half, 0), width - window)
    return top, left


def extract_pixel_samples(raster, window, pixels=None):
    """
    Cut one window per pixel for full-scene inference.

    Windows near the border are shifted to stay inside the image (no
    padding), so every pixel gets a sample.

    Args:
        raster: PolsarRaster to cut
        window: Window size s
        pixels: Iterable of (row, col); defaults to every labeled pixel, or
            every pixel when the raster has no labels

    Returns:
        List of Sample whose ``center`` is the classified pixel
    """
    _check_window(raster, window)
    if pixels is None:
        if raster.labels is None:
            pixels = np.ndindex(raster.height, raster.width)
        else:
            pixels = zip(*np.nonzero(raster.labels != UNLABELED))
    samples = []
    for row, col in pixels:
        row, col = int(row), int(col)
        top, left = window_for_pixel(row, col, raster.height, raster.width, window)
        label = UNLABELED if raster.labels is None else int(raster.labels[row, col])
        patch = raster.features[top:top + window, left:left + window]
        samples.append(Sample(patch, label, (top, left), raster.band_tag, (row, col)))
    return samples


def stack_samples(samples):
    """Stack samples into a (n, s, s, C) float32 array and an int64 label vector."""
    if not samples:
        raise ValidationError("cannot stack an empty sample list")
    patches = np.stack([sample.patch for sample in samples]).astype(np.float32, copy=False)
    labels = np.array([sample.label for sample in samples], dtype=np.int64)
    return patches, labels


def split_samples(samples, train_ratio, rng):
    """
    Stratified train / held-out split.

    Each class contributes ``max(1, round(train_ratio * count))`` samples to
    the training split (all of them if the class has a single sample).
    Both splits keep the input's order.

    Args:
        samples: List of labeled Sample
        train_ratio: Fraction in (0, 1] assigned to training
        rng: numpy Generator

    Returns:
        (train, heldout) lists of Sample
    """
    if not 0.0 < train_ratio <= 1.0:
        raise ConfigurationError(f"train_ratio must be in (0, 1], got {train_ratio}")
    labels = np.array([sample.label for sample in samples], dtype=np.int64)
    chosen = np.zeros(len(samples), dtype=bool)
    for label in np.unique(labels):
        indices = np.flatnonzero(labels == label)
        count = max(1, int(round(train_ratio * indices.size)))
        chosen[rng.permutation(indices)[:count]] = True
    train = [sample for sample, keep in zip(samples, chosen) if keep]
    heldout = [sample for sample, keep in zip(samples, chosen) if not keep]
    logger.debug("split %d samples into %d train / %d held-out", len(samples), len(train), len(heldout))
    return train, heldout


def concat_bands(first, second):
    """
    Stack two co-registered single-band rasters into an 18-channel raster.

    Raises:
        ValidationError: If shapes or label rasters differ
    """
    if first.features.shape != second.features.shape:
        raise ValidationError(
            f"band rasters are misaligned: {first.features.shape} vs {second.features.shape}"
        )
    if (first.labels is None) != (second.labels is None) or (
        first.labels is not None and not np.array_equal(first.labels, second.labels)
    ):
        raise ValidationError("band rasters carry different label maps")
    features = np.concatenate([first.features, second.features], axis=2)
    return PolsarRaster(features, first.labels, f"{first.band_tag}+{second.band_tag}")


# ============================================================================
# Normalization
# ============================================================================

@dataclass(frozen=True, eq=False)
class FeatureNormalizer:
    """
    Per-channel standardization fitted on the training split.

    Attributes:
        mean: Float32 array (C,)
        std: Float32 array (C,), floored at 1e-6
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'mean', np.asarray(self.mean, dtype=np.float32))
        object.__setattr__(self, 'std', np.asarray(self.std, dtype=np.float32))

    @classmethod
    def fit(cls, patches):
        patches = np.asarray(patches, dtype=np.float64)
        flat = patches.reshape(-1, patches.shape[-1])
        mean = flat.mean(axis=0)
        std = np.maximum(flat.std(axis=0), 1e-6)
        return cls(mean, std)

    @classmethod
    def identity(cls, channels):
        return cls(np.zeros(channels), np.ones(channels))

    @property
    def channels(self):
        return self.mean.shape[0]

    def apply(self, patches, dtype=np.float32):
        patches = np.asarray(patches)
        if patches.shape[-1] != self.channels:
            raise ConfigurationError(
                f"normalizer fitted on {self.channels} channels, input has {patches.shape[-1]}"
            )
        mean = self.mean.astype(dtype)
        std = self.std.astype(dtype)
        return ((patches.astype(dtype) - mean) / std).astype(dtype, copy=False)
