"""Axis-aligned ellipsoids, diagonal Gaussians and the conversions between them.

A nodule is tied to a Gaussian by requiring that the nodule ellipsoid is the
``q``-quantile set of the Gaussian. For a diagonal Gaussian the probability of
that ellipsoid is a chi-square probability with three degrees of freedom, so
the only numerical ingredient is the chi2(3) quantile function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

_BISECT_TOL = 1e-10


def _as_vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid in (z, y, x) millimetre coordinates."""

    center: tuple[float, float, float]
    radii: tuple[float, float, float]

    def __post_init__(self):
        center = _as_vec3(self.center, "center")
        radii = _as_vec3(self.radii, "radii")
        if np.any(radii <= 0):
            raise ValueError(f"radii must be positive, got {radii}")
        object.__setattr__(self, "center", tuple(float(c) for c in center))
        object.__setattr__(self, "radii", tuple(float(r) for r in radii))

    @classmethod
    def sphere(cls, center, radius: float) -> "Ellipsoid":
        return cls(center, (radius, radius, radius))

    def contains(self, points) -> np.ndarray:
        """Boolean inside test for an ``(..., 3)`` array of points."""
        p = np.asarray(points, dtype=float)
        u = (p - np.asarray(self.center)) / np.asarray(self.radii)
        return np.sum(u * u, axis=-1) <= 1.0


@dataclass(frozen=True)
class GaussianComponent:
    """Diagonal-covariance 3D Gaussian."""

    mean: tuple[float, float, float]
    variances: tuple[float, float, float]

    def __post_init__(self):
        mean = _as_vec3(self.mean, "mean")
        var = _as_vec3(self.variances, "variances")
        if np.any(var <= 0):
            raise ValueError(f"variances must be positive, got {var}")
        object.__setattr__(self, "mean", tuple(float(m) for m in mean))
        object.__setattr__(self, "variances", tuple(float(v) for v in var))


def chi2_3_cdf(x: float) -> float:
    """P(chi2_3 <= x) = erf(sqrt(x/2)) - sqrt(2x/pi) exp(-x/2)."""
    if x <= 0:
        return 0.0
    return math.erf(math.sqrt(x / 2.0)) - math.sqrt(2.0 * x / math.pi) * math.exp(-x / 2.0)


@lru_cache(maxsize=256)
def chi2_3_quantile(q: float) -> float:
    """Inverse of :func:`chi2_3_cdf` by bisection, absolute accuracy 1e-10."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    lo, hi = 0.0, 1.0
    while chi2_3_cdf(hi) < q:
        hi *= 2.0
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if chi2_3_cdf(mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def quantile_scale(q: float) -> float:
    """Variance per squared radius for the q-quantile set: 1 / chi2_3_quantile(q)."""
    return 1.0 / chi2_3_quantile(q)


def nodule_to_gaussian(nodule: Ellipsoid, q: float) -> GaussianComponent:
    scale = quantile_scale(q)
    radii = np.asarray(nodule.radii)
    return GaussianComponent(nodule.center, tuple(radii * radii * scale))


def gaussian_to_nodule(gaussian: GaussianComponent, q: float) -> Ellipsoid:
    var = np.asarray(gaussian.variances)
    return Ellipsoid(gaussian.mean, tuple(np.sqrt(var * chi2_3_quantile(q))))


def overlaps(a: Ellipsoid, b: Ellipsoid) -> bool:
    """Normalized-separation overlap test; exact for spheres, tangency counts."""
    u = (np.subtract(a.center, b.center)) / (np.add(a.radii, b.radii))
    return bool(np.dot(u, u) <= 1.0)


def distance(a, b) -> float:
    return float(np.linalg.norm(np.subtract(a, b, dtype=float)))
