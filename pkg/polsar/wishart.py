"""
Complex Wishart statistics for multilook covariance matrices.

Density, the Wishart distance used for pixel selection, sample-center
estimation and multilook sampling. All inversions and determinants go
through a Cholesky factorization; a center that fails to factor is
regularized once (``eps = 1e-6 * trace / q`` on the diagonal) and a
second failure raises NumericalError.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .core import HermitianCov3
from .exceptions import DomainError, NumericalError, ValidationError

logger = logging.getLogger(__name__)

REGULARIZATION = 1e-6


@dataclass(frozen=True, eq=False)
class WishartParams:
    """
    Parameters of a complex Wishart distribution.

    Attributes:
        center: (q, q) complex Hermitian positive-definite matrix (Sigma);
            a HermitianCov3 is accepted and unwrapped
        looks: Number of looks L (positive integer)
    """

    center: np.ndarray
    looks: int = 4

    def __post_init__(self):
        center = np.array(self.center, dtype=np.complex128)
        if center.ndim != 2 or center.shape[0] != center.shape[1]:
            raise ValidationError(f"Wishart center must be square, got shape {center.shape}")
        if int(self.looks) != self.looks or self.looks < 1:
            raise DomainError(f"looks must be a positive integer, got {self.looks}")
        center.setflags(write=False)
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'looks', int(self.looks))

    @property
    def dimension(self):
        return self.center.shape[0]


def regularize(sigma):
    """Return ``sigma + eps * I`` with ``eps = 1e-6 * trace(sigma) / q``."""
    sigma = np.asarray(sigma, dtype=np.complex128)
    q = sigma.shape[-1]
    epsilon = REGULARIZATION * float(np.trace(sigma).real) / q
    return sigma + epsilon * np.eye(q)


def cholesky(sigma):
    """
    Lower Cholesky factor of a Hermitian positive-definite matrix.

    A matrix that does not factor is regularized and retried once.

    Raises:
        NumericalError: If the regularized matrix still does not factor
    """
    sigma = np.asarray(sigma, dtype=np.complex128)
    try:
        return linalg.cholesky(sigma, lower=True)
    except (linalg.LinAlgError, ValueError):
        logger.debug("Cholesky failed, retrying with regularization")
    try:
        return linalg.cholesky(regularize(sigma), lower=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Cholesky factorization failed after regularization: {exc}") from exc


def log_det(factor):
    """ln det(Sigma) from its lower Cholesky factor."""
    return 2.0 * float(np.sum(np.log(np.diagonal(factor).real)))


def inverse(factor):
    q = factor.shape[0]
    return linalg.cho_solve((factor, True), np.eye(q, dtype=np.complex128))


def sample_center(sample, band=0):
    """
    Regularized mean covariance of one band of a sample.

    Args:
        sample: Sample (9 or 18 channels)
        band: Band index within the sample

    Returns:
        HermitianCov3 equal to the pixel mean plus ``eps * I``
    """
    covariances = sample.covariances(band)
    mean = covariances.mean(axis=0)
    mean = 0.5 * (mean + mean.conj().T)
    return HermitianCov3(regularize(mean))


def sample_centers(sample):
    """Per-band regularized centers of a (possibly dual-band) sample."""
    return tuple(sample_center(sample, band) for band in range(sample.bands))


def wishart_distances(covariances, sigma):
    """
    Wishart distance of many pixels to one center.

    Args:
        covariances: Complex array (n, q, q)
        sigma: Center (q, q) or HermitianCov3

    Returns:
        Float64 array (n,) of ``Tr(Sigma^-1 C_i) + ln det Sigma``
    """
    factor = cholesky(np.asarray(sigma))
    sigma_inv = inverse(factor)
    # Tr(A C) = sum_jk A_jk C_kj
    traces = np.einsum('jk,nkj->n', sigma_inv, np.asarray(covariances, dtype=np.complex128)).real
    return traces + log_det(factor)


def wishart_distance(covariance, sigma):
    """
    Wishart distance ``Tr(Sigma^-1 C) + ln det Sigma``.

    Args:
        covariance: Pixel covariance C (HermitianCov3 or array)
        sigma: Positive-definite center Sigma (HermitianCov3 or array)

    Returns:
        float

    Raises:
        NumericalError: If Sigma cannot be factored even after regularization
    """
    covariance = np.asarray(covariance, dtype=np.complex128)
    return float(wishart_distances(covariance[np.newaxis], sigma)[0])


def log_normalizer(looks, dimension):
    """ln K(L, q) = q(q-1)/2 ln(pi) + sum_{i=1..q} ln Gamma(L - i + 1)."""
    q = dimension
    return 0.5 * q * (q - 1) * np.log(np.pi) + float(
        sum(gammaln(looks - i + 1) for i in range(1, q + 1))
    )


def wishart_log_pdf(covariance, params):
    """
    Log-density of the scaled complex Wishart distribution.

    ``p(C) = L^{Lq} |C|^{L-q} exp(-L Tr(Sigma^-1 C)) / (K(L, q) |Sigma|^L)``

    Args:
        covariance: Positive-definite (q, q) matrix C
        params: WishartParams with the same q

    Returns:
        float

    Raises:
        DomainError: If L < q or C is not positive definite
    """
    looks, q = params.looks, params.dimension
    if looks < q:
        raise DomainError(f"Wishart density is degenerate for L={looks} < q={q}")
    covariance = np.atleast_2d(np.asarray(covariance, dtype=np.complex128))
    if covariance.shape != (q, q):
        raise ValidationError(f"covariance shape {covariance.shape} does not match q={q}")
    try:
        covariance_factor = linalg.cholesky(covariance, lower=True)
    except linalg.LinAlgError as exc:
        raise DomainError("Wishart density requires a positive-definite covariance") from exc
    sigma_factor = cholesky(params.center)
    trace = float(np.trace(linalg.cho_solve((sigma_factor, True), covariance)).real)
    return (
        looks * q * np.log(looks)
        + (looks - q) * log_det(covariance_factor)
        - looks * trace
        - log_normalizer(looks, q)
        - looks * log_det(sigma_factor)
    )


def sample_wishart_many(factors, looks, rng):
    """
    Draw multilook covariances, one per Cholesky factor.

    Each draw is ``(1/L) sum_k z_k z_k^H`` with ``z_k = chol(Sigma) g_k`` and
    ``g_k`` standard circular complex Gaussian.

    Args:
        factors: Complex array (n, q, q) of lower Cholesky factors
        looks: Number of looks L
        rng: numpy Generator; consumes n * L * q * 2 standard normals

    Returns:
        Complex128 array (n, q, q), exactly Hermitian
    """
    factors = np.asarray(factors, dtype=np.complex128)
    count, q = factors.shape[0], factors.shape[-1]
    normals = rng.standard_normal((count, looks, q, 2))
    gaussians = (normals[..., 0] + 1j * normals[..., 1]) / np.sqrt(2.0)
    scattering = np.einsum('nij,nlj->nli', factors, gaussians)
    draws = np.einsum('nli,nlj->nij', scattering, scattering.conj()) / looks
    return 0.5 * (draws + np.conj(np.swapaxes(draws, -1, -2)))


def sample_wishart(params, rng):
    """
    Draw one multilook covariance from ``W(Sigma, L)``.

    Args:
        params: WishartParams with q == 3 and L >= 3
        rng: numpy Generator

    Returns:
        HermitianCov3 with E[C] = Sigma

    Raises:
        DomainError: If L < q
    """
    if params.looks < params.dimension:
        raise DomainError(f"cannot draw full-rank samples with L={params.looks} < q={params.dimension}")
    factor = cholesky(params.center)
    return HermitianCov3(sample_wishart_many(factor[np.newaxis], params.looks, rng)[0])


def wishart_ml_classify(covariances, class_centers):
    """
    Supervised maximum-likelihood Wishart classifier.

    Args:
        covariances: Complex array (n, bands, 3, 3)
        class_centers: Complex array (M, bands, 3, 3)

    Returns:
        int64 array (n,) of the class minimizing the summed per-band distance
    """
    covariances = np.asarray(covariances, dtype=np.complex128)
    class_centers = np.asarray(class_centers, dtype=np.complex128)
    count, bands = covariances.shape[:2]
    scores = np.zeros((count, class_centers.shape[0]))
    for label, centers in enumerate(class_centers):
        for band in range(bands):
            scores[:, label] += wishart_distances(covariances[:, band], centers[band])
    return np.argmin(scores, axis=1)


__all__ = [
    'WishartParams', 'cholesky', 'inverse', 'log_det', 'log_normalizer',
    'regularize', 'sample_center', 'sample_centers', 'sample_wishart', 'sample_wishart_many',
    'wishart_distance', 'wishart_distances', 'wishart_log_pdf', 'wishart_ml_classify',
]
