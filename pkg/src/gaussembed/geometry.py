"""Closed-form distances between Gaussian word representations.

Every word is a multivariate normal.  The spherical variant (one standard
deviation scalar per word, covariance ``sigma**2 * I``) is what the trainer
learns; the diagonal variant is kept for validation and evaluation.  All
distances here have closed forms, which is what makes them usable inside a
stochastic training loop:

* 2-Wasserstein distance
    ``W2(a, b) = sqrt(||mu_a - mu_b||^2 + D * (sigma_a - sigma_b)^2)``
* Kullback-Leibler divergence
    ``KL(a || b) = D*log(sigma_b/sigma_a) - D/2 + D*sigma_a^2/(2*sigma_b^2)
    + ||mu_b - mu_a||^2 / (2*sigma_b^2)``

Energies are ``-distance + bias``; their analytic gradients feed the SGD
trainer and are checked against central finite differences in the tests.
All functions are pure and safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# W2 appears in gradient denominators; below this value the denominator is
# floored to keep the (otherwise singular) gradient finite at W2 = 0.
GRAD_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class GaussianWord:
    """A spherical Gaussian: mean vector plus one standard deviation scalar."""

    mean: np.ndarray
    sigma: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        if mean.ndim != 1:
            raise ValueError("mean must be a 1-D vector")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean components must be finite")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be a finite positive number, got {self.sigma}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class DiagonalGaussian:
    """A Gaussian with an axis-aligned (diagonal) covariance, one variance per axis."""

    mean: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variances", variances)
        if mean.shape != variances.shape or mean.ndim != 1:
            raise ValueError("mean and variances must be 1-D vectors of equal length")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean components must be finite")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class EnergyGradient:
    """Partial derivatives of an energy with respect to both Gaussians and the bias.

    ``a`` is the first argument of the energy (the center word / child),
    ``b`` the second (context, negative sample, or parent).
    """

    d_mean_a: np.ndarray
    d_sigma_a: float
    d_mean_b: np.ndarray
    d_sigma_b: float
    d_bias: float


def _check_same_dim(a, b) -> int:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return a.dim


def w2_spherical(a: GaussianWord, b: GaussianWord) -> float:
    """2-Wasserstein distance between two spherical Gaussians.

    Symmetric, non-negative, zero exactly when the parameters coincide, and a
    true metric: it equals the Euclidean distance between the points
    ``(mean, sqrt(D)*sigma)`` in D+1 dimensions.
    """
    d = _check_same_dim(a, b)
    diff = a.mean - b.mean
    return math.sqrt(float(diff @ diff) + d * (a.sigma - b.sigma) ** 2)


def w2_diagonal(a: DiagonalGaussian, b: DiagonalGaussian) -> float:
    """2-Wasserstein distance between two diagonal Gaussians.

    For commuting (diagonal) covariances the trace term collapses to the sum
    of squared differences of per-axis standard deviations.  Agrees with
    :func:`w2_spherical` to machine precision when all variances are equal.
    """
    _check_same_dim(a, b)
    if np.any(a.variances <= 0) or np.any(b.variances <= 0):
        raise ValueError("variances must be strictly positive")
    diff = a.mean - b.mean
    sdev = np.sqrt(a.variances) - np.sqrt(b.variances)
    return math.sqrt(float(diff @ diff) + float(sdev @ sdev))


def kl_spherical(a: GaussianWord, b: GaussianWord) -> float:
    """KL divergence ``KL(a || b)`` between two spherical Gaussians.

    Asymmetric: it is small when ``a``'s probability mass lies inside ``b``'s,
    which is what makes it a directional (entailment-style) score.
    """
    d = _check_same_dim(a, b)
    diff = b.mean - a.mean
    ratio = a.sigma / b.sigma
    return (
        d * math.log(b.sigma / a.sigma)
        - 0.5 * d
        + 0.5 * d * ratio * ratio
        + 0.5 * float(diff @ diff) / (b.sigma * b.sigma)
    )


def energy_w2(a: GaussianWord, b: GaussianWord, bias: float, *, squared: bool = False) -> float:
    """Similarity energy ``-W2(a, b) + bias`` (or ``-W2^2 + bias`` when squared).

    The bias shifts the energy so the sigmoid of it can fall on either side
    of 1/2; the squared variant is smooth at coinciding parameters.
    """
    w2 = w2_spherical(a, b)
    return -(w2 * w2 if squared else w2) + bias


def energy_kl(child: GaussianWord, parent: GaussianWord, bias: float) -> float:
    """Directional energy ``-KL(child || parent) + bias``.

    Not symmetric in its arguments: high energy means the child distribution
    sits inside the parent's, the geometry expected of a hyponym/hypernym pair.
    """
    return -kl_spherical(child, parent) + bias


def grad_energy_w2(
    a: GaussianWord,
    b: GaussianWord,
    *,
    squared: bool = False,
    grad_floor: float = GRAD_FLOOR,
) -> EnergyGradient:
    """Analytic gradient of :func:`energy_w2` with respect to both Gaussians.

    The plain (non-squared) energy has a ``1/W2`` factor in its gradient; the
    denominator is floored at ``grad_floor`` so the gradient stays finite when
    the two Gaussians coincide (where symmetry makes the true direction zero).
    """
    d = _check_same_dim(a, b)
    diff = a.mean - b.mean
    sdiff = a.sigma - b.sigma
    if squared:
        d_mean_a = -2.0 * diff
        d_sigma_a = -2.0 * d * sdiff
    else:
        w2 = math.sqrt(float(diff @ diff) + d * sdiff * sdiff)
        denom = max(w2, grad_floor)
        d_mean_a = -diff / denom
        d_sigma_a = -d * sdiff / denom
    return EnergyGradient(
        d_mean_a=d_mean_a,
        d_sigma_a=float(d_sigma_a),
        d_mean_b=-d_mean_a,
        d_sigma_b=float(-d_sigma_a),
        d_bias=1.0,
    )


def grad_energy_kl(child: GaussianWord, parent: GaussianWord) -> EnergyGradient:
    """Analytic gradient of :func:`energy_kl` with respect to child and parent."""
    d = _check_same_dim(child, parent)
    diff = parent.mean - child.mean
    sw, sp = child.sigma, parent.sigma
    inv_p2 = 1.0 / (sp * sp)
    # E = -KL, so every term below is the negated KL partial.
    d_mean_child = diff * inv_p2
    d_sigma_child = d / sw - d * sw * inv_p2
    d_mean_parent = -diff * inv_p2
    d_sigma_parent = -d / sp + (d * sw * sw + float(diff @ diff)) * inv_p2 / sp
    return EnergyGradient(
        d_mean_a=d_mean_child,
        d_sigma_a=float(d_sigma_child),
        d_mean_b=d_mean_parent,
        d_sigma_b=float(d_sigma_parent),
        d_bias=1.0,
    )
