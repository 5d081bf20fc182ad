"""
Dynamic sample rectification.

A training or inference sample is an s x s window whose center label
stands for the whole window. Near class boundaries part of the window
belongs to other classes. Rectification:

1. assesses the sample's purity r: the fraction of patch tokens whose
   predicted class agrees with the cls token's prediction;
2. keeps the topK = round(r * s^2) pixels closest, in Wishart distance,
   to the sample's mean covariance;
3. replaces every other pixel with a fresh multilook Wishart draw around
   that mean, so the sample keeps its s x s shape.

Everything here operates on raw (un-normalized) covariance features.
:func:`sdsr_forward` wires the steps around a model in two passes: a
gradient-free inference pass that measures purity, then a gradient pass
on the rectified, re-normalized batch.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .core import FEATURES_PER_BAND, Sample, vectorize_many
from .exceptions import ValidationError
from .nn.tensor import no_grad
from .wishart import WishartParams, cholesky, sample_centers, sample_wishart_many, wishart_distances

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PurityReport:
    """
    Attributes:
        purity: r in [0, 1]
        top_k: Number of pixels retained, in 1..s^2
        agreeing: Boolean array (N,), True where a patch agrees with cls
    """

    purity: float
    top_k: int
    agreeing: np.ndarray

    @property
    def num_patches(self):
        return self.agreeing.shape[0]


@dataclass(frozen=True)
class RectifiedSample:
    """
    Attributes:
        patch: Float32 array (s, s, C)
        retained: Boolean array (s, s) of pixels kept from the input
        generated: Number of regenerated pixels (s^2 - topK)
    """

    patch: np.ndarray
    retained: np.ndarray
    generated: int


def top_k_for(purity, window):
    pixels = window * window
    return int(min(max(int(np.rint(purity * pixels)), 1), pixels))


def assess_purity(output, window):
    """
    Measure how many patch predictions agree with the cls prediction.

    Args:
        output: ForwardOutput of a single sample (batch axis of 1), or a
            (cls_logits (M,), patch_logits (N, M)) pair of arrays
        window: Window size s

    Returns:
        PurityReport; argmax ties resolve to the lower class index
    """
    if isinstance(output, tuple):
        cls_logits, patch_logits = (np.asarray(part) for part in output)
    else:
        cls_logits = output.cls_logits.data.reshape(-1)
        patch_logits = output.patch_logits.data.reshape(-1, cls_logits.shape[0])
    cls_class = int(np.argmax(cls_logits))
    agreeing = np.argmax(patch_logits, axis=-1) == cls_class
    purity = float(np.count_nonzero(agreeing)) / agreeing.shape[0]
    return PurityReport(purity, top_k_for(purity, window), agreeing)


def _band_centers(sample, centers):
    if isinstance(centers, (tuple, list)):
        centers = tuple(centers)
    else:
        centers = (centers,)
    if len(centers) != sample.bands:
        raise ValidationError(f"{sample.bands}-band sample needs {sample.bands} centers, got {len(centers)}")
    return tuple(np.asarray(center, dtype=np.complex128) for center in centers)


def pixel_distances(sample, centers):
    """
    Wishart distance of every pixel of a sample, in row-major order.

    For a dual-band sample the per-band distances to the per-band centers
    are summed.
    """
    centers = _band_centers(sample, centers)
    total = np.zeros(sample.window * sample.window)
    for band, center in enumerate(centers):
        total += wishart_distances(sample.covariances(band), center)
    return total


def select_pixels(sample, centers, top_k):
    """
    Indices of the topK pixels closest to the sample center.

    Args:
        sample: Sample (9 or 18 channels)
        centers: Sigma as HermitianCov3 / array, or one per band
        top_k: Number of pixels to keep, 1..s^2

    Returns:
        Sorted int64 array of row-major pixel indices; equal distances are
        broken by the lower index
    """
    pixels = sample.window * sample.window
    if not 1 <= top_k <= pixels:
        raise ValidationError(f"top_k must be in 1..{pixels}, got {top_k}")
    distances = pixel_distances(sample, centers)
    order = np.argsort(distances, kind='stable')
    return np.sort(order[:top_k])


def wishart_params_for(sample, looks=4):
    """Per-band WishartParams centred on the sample's regularized mean covariances."""
    return tuple(WishartParams(np.asarray(center), looks) for center in sample_centers(sample))


def rectify(sample, report, params, rng):
    """
    Replace the sample's least typical pixels with Wishart draws.

    Args:
        sample: Sample to rectify (left untouched)
        report: PurityReport from this sample's forward pass
        params: WishartParams, or one per band, giving Sigma and L
        rng: numpy Generator for the replacement draws

    Returns:
        RectifiedSample with the same shape as ``sample.patch``; retained
        pixels are bit-identical to the input
    """
    params = tuple(params) if isinstance(params, (tuple, list)) else (params,)
    window = sample.window
    keep = select_pixels(sample, [p.center for p in params], report.top_k)
    retained = np.zeros(window * window, dtype=bool)
    retained[keep] = True
    replaced = np.flatnonzero(~retained)
    patch = np.array(sample.patch, dtype=np.float32)
    if replaced.size:
        flat = patch.reshape(window * window, -1)
        for band, band_params in enumerate(params):
            factor = cholesky(band_params.center)
            factors = np.broadcast_to(factor, (replaced.size,) + factor.shape)
            draws = sample_wishart_many(factors, band_params.looks, rng)
            start = band * FEATURES_PER_BAND
            flat[replaced, start:start + FEATURES_PER_BAND] = vectorize_many(draws).astype(np.float32)
    return RectifiedSample(patch, retained.reshape(window, window), int(replaced.size))


def rectify_batch(patches, reports, rngs, looks=4):
    """
    Rectify a batch of raw patches.

    Args:
        patches: Float32 array (B, s, s, C)
        reports: B PurityReports
        rngs: B generators, one substream per sample
        looks: Wishart looks for the replacement draws

    Returns:
        (float32 array (B, s, s, C), list of RectifiedSample or None for
        samples kept unchanged)
    """
    patches = np.asarray(patches, dtype=np.float32)
    rectified = patches.copy()
    details = []
    for index, (report, rng) in enumerate(zip(reports, rngs)):
        if report.top_k == patches.shape[1] * patches.shape[2]:
            details.append(None)
            continue
        sample = Sample(patches[index], -1, (0, 0))
        result = rectify(sample, report, wishart_params_for(sample, looks), rng)
        rectified[index] = result.patch
        details.append(result)
    return rectified, details


def sdsr_forward(model, raw_patches, normalizer, rngs, training=False):
    """
    Forward a batch through the model with sample rectification.

    Pass 1 runs in eval mode without recording gradients and yields one
    PurityReport per sample. Impure samples are rectified on their raw
    features, re-normalized, and pass 2 runs in ``training`` mode with
    gradients; its output is returned. A batch in which every sample is
    pure goes through pass 2 unchanged.

    Args:
        model: SKDNet
        raw_patches: Float32 array (B, s, s, C) of un-normalized features
        normalizer: FeatureNormalizer matching the model input
        rngs: One generator per sample
        training: Mode for pass 2 (batch-norm statistics update only here)

    Returns:
        (ForwardOutput of pass 2, list of PurityReport)
    """
    raw_patches = np.asarray(raw_patches, dtype=np.float32)
    if len(rngs) != raw_patches.shape[0]:
        raise ValidationError(f"expected {raw_patches.shape[0]} generators, got {len(rngs)}")
    window = raw_patches.shape[1]
    dtype = model.dtype

    was_training = model.training
    model.eval()
    with no_grad():
        first = model(normalizer.apply(raw_patches, dtype))
    reports = [assess_purity(first[index], window) for index in range(raw_patches.shape[0])]
    rectified, _ = rectify_batch(raw_patches, reports, rngs, model.config.looks)
    logger.debug(
        "sdsr: mean purity %.3f, %d/%d samples rectified",
        float(np.mean([report.purity for report in reports])),
        sum(report.top_k < window * window for report in reports),
        len(reports),
    )

    model.train(training)
    try:
        output = model(normalizer.apply(rectified, dtype))
    finally:
        model.train(was_training)
    return output, reports

