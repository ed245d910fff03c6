"""Voxelization of ellipsoid sets and the (soft) Dice coefficient.

A voxel is inside an ellipsoid iff its center is. Grids produced by
:func:`bounding_grid` are aligned to the global lattice ``spacing * (k + 0.5)``
so a nodule rasterizes to the same voxels whichever aligned grid is used;
:func:`voxel_keys` works directly on that lattice without a dense array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from annoclear.geometry import Ellipsoid

_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)


@dataclass(frozen=True)
class VoxelGrid:
    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]
    shape: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        if len(self.origin) != 3 or len(self.spacing) != 3 or len(self.shape) != 3:
            raise ValueError("origin, spacing and shape must have 3 components")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if any(n <= 0 for n in self.shape):
            raise ValueError(f"shape must be positive, got {self.shape}")

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1] * self.shape[2]

    def axis_centers(self, axis: int, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Voxel-center coordinates along ``axis`` for indices ``start:stop``."""
        stop = self.shape[axis] if stop is None else stop
        k = np.arange(start, stop, dtype=float)
        s, o = self.spacing[axis], self.origin[axis]
        base = o / s
        if abs(base - round(base)) < 1e-9:
            return s * (round(base) + k + 0.5)
        return o + s * (k + 0.5)


@dataclass(frozen=True)
class VoxelMask:
    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    def total(self) -> float:
        return float(self.values.sum(dtype=float))


def _inside(ell: Ellipsoid, zc: np.ndarray, yc: np.ndarray, xc: np.ndarray) -> np.ndarray:
    (cz, cy, cx), (rz, ry, rx) = ell.center, ell.radii
    uz = (zc - cz) / rz
    uy = (yc - cy) / ry
    ux = (xc - cx) / rx
    return (uz[:, None, None] * uz[:, None, None] + uy[None, :, None] * uy[None, :, None]) \
        + ux[None, None, :] * ux[None, None, :] <= 1.0


def _index_range(c: float, r: float, n: int, s: float, o: float):
    # indices whose centers might fall in [c - r, c + r]; one voxel of slack each side
    lo = max(0, int(math.floor((c - r - o) / s - 0.5)) - 1)
    hi = min(n, int(math.ceil((c + r - o) / s - 0.5)) + 2)
    return lo, hi


def rasterize_into(out: np.ndarray, nodules: Sequence[Ellipsoid], grid: VoxelGrid) -> np.ndarray:
    """OR the voxelized ``nodules`` into the boolean array ``out`` (shape of ``grid``)."""
    for ell in nodules:
        ranges = []
        for ax in range(3):
            lo, hi = _index_range(ell.center[ax], ell.radii[ax], grid.shape[ax],
                                  grid.spacing[ax], grid.origin[ax])
            if lo >= hi:
                break
            ranges.append((lo, hi))
        else:
            (z0, z1), (y0, y1), (x0, x1) = ranges
            inside = _inside(ell, grid.axis_centers(0, z0, z1), grid.axis_centers(1, y0, y1),
                             grid.axis_centers(2, x0, x1))
            out[z0:z1, y0:y1, x0:x1] |= inside
    return out


def rasterize_nodules(nodules: Sequence[Ellipsoid], grid: VoxelGrid) -> VoxelMask:
    mask = rasterize_into(np.zeros(grid.shape, dtype=bool), nodules, grid)
    return VoxelMask(grid, mask.astype(float))


def soft_combine(masks: Sequence[VoxelMask], weights: Sequence[float]) -> VoxelMask:
    if len(masks) == 0 or len(masks) != len(weights):
        raise ValueError("need one weight per mask and at least one mask")
    grid = masks[0].grid
    if any(m.grid != grid for m in masks):
        raise ValueError("all masks must share the same grid")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must be non-negative and sum to 1, got {list(w)}")
    values = np.zeros(grid.shape, dtype=float)
    for m, wi in zip(masks, w):
        values += wi * m.values
    return VoxelMask(grid, np.clip(values, 0.0, 1.0))


def dice(a: VoxelMask, b: VoxelMask) -> float:
    """2 sum(a*b) / (sum a + sum b); 1.0 when both masks are empty."""
    if a.grid != b.grid:
        raise ValueError("dice needs masks on the same grid")
    denom = a.total() + b.total()
    if denom == 0.0:
        return 1.0
    return 2.0 * float(np.sum(a.values * b.values, dtype=float)) / denom


def bounding_grid(nodules: Sequence[Ellipsoid], spacing=(1.0, 1.0, 1.0), pad: float = 0.0) -> VoxelGrid:
    """Smallest lattice-aligned grid covering the padded bounding boxes of ``nodules``."""
    if len(nodules) == 0:
        raise ValueError("bounding_grid needs at least one nodule")
    centers = np.array([n.center for n in nodules])
    radii = np.array([n.radii for n in nodules])
    lo = (centers - radii).min(axis=0) - pad
    hi = (centers + radii).max(axis=0) + pad
    s = np.asarray(spacing, dtype=float)
    k0 = np.floor(lo / s).astype(int)
    k1 = np.ceil(hi / s).astype(int)
    k1 = np.maximum(k1, k0 + 1)
    return VoxelGrid(tuple(k0 * s), tuple(s), tuple(k1 - k0))


def voxel_keys(nodules: Sequence[Ellipsoid], spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Sorted unique lattice keys of the voxels inside the union of ``nodules``.

    Sparse equivalent of rasterizing on any aligned grid: two key sets
    intersect exactly where the dense masks would.
    """
    s = tuple(float(v) for v in spacing)
    chunks = []
    for ell in nodules:
        lo, hi = [], []
        for ax in range(3):
            c, r = ell.center[ax], ell.radii[ax]
            lo.append(int(math.floor((c - r) / s[ax] - 0.5)) - 1)
            hi.append(int(math.ceil((c + r) / s[ax] - 0.5)) + 2)
        if any(abs(v) >= _KEY_OFFSET - 2 for v in lo + hi):
            raise ValueError(f"nodule {ell} outside the representable lattice")
        axes = [np.arange(lo[ax], hi[ax]) for ax in range(3)]
        centers = [s[ax] * (axes[ax] + 0.5) for ax in range(3)]
        inside = _inside(ell, *centers)
        kz, ky, kx = np.nonzero(inside)
        keys = ((axes[0][kz] + _KEY_OFFSET) << (2 * _KEY_BITS)) \
            | ((axes[1][ky] + _KEY_OFFSET) << _KEY_BITS) | (axes[2][kx] + _KEY_OFFSET)
        chunks.append(keys.astype(np.int64))
    if not chunks:
        return np.empty(0, dtype=np.int64)
    return np.unique(np.concatenate(chunks))


def intersection_size(a: np.ndarray, b: np.ndarray) -> int:
    if a.size == 0 or b.size == 0:
        return 0
    return int(np.intersect1d(a, b, assume_unique=True).size)
