"""Structured (R, Z) grid on which all fields live."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class CartesianGrid:
    """Uniform grid of ``nr x nz`` points covering ``[r_min, r_max] x [z_min, z_max]``.

    Point ``(i, j)`` sits at ``(r_min + i*dr, z_min + j*dz)`` and owns the control
    volume ``[R_i - dr/2, R_i + dr/2] x [Z_j - dz/2, Z_j + dz/2]``. Control-volume
    corners are indexed ``(i, j)`` for the corner at ``(R_i - dr/2, Z_j - dz/2)``,
    giving an ``(nr + 1, nz + 1)`` corner array.
    """

    r_min: float
    r_max: float
    z_min: float
    z_max: float
    nr: int
    nz: int

    def __post_init__(self):
        if self.nr < 3 or self.nz < 3:
            raise ValueError(f"grid needs at least 3x3 points, got {self.nr}x{self.nz}")
        if not (self.r_max > self.r_min and self.z_max > self.z_min):
            raise ValueError("grid extents must be increasing")
        if self.r_min - 0.5 * (self.r_max - self.r_min) / (self.nr - 1) <= 0.0:
            raise ValueError("grid must satisfy R > 0 on every control volume")

    @property
    def dr(self) -> float:
        return (self.r_max - self.r_min) / (self.nr - 1)

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / (self.nz - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nr, self.nz)

    @property
    def size(self) -> int:
        return self.nr * self.nz

    @cached_property
    def r(self) -> np.ndarray:
        return self.r_min + self.dr * np.arange(self.nr)

    @cached_property
    def z(self) -> np.ndarray:
        return self.z_min + self.dz * np.arange(self.nz)

    @cached_property
    def r_corners(self) -> np.ndarray:
        return self.r_min + self.dr * (np.arange(self.nr + 1) - 0.5)

    @cached_property
    def z_corners(self) -> np.ndarray:
        return self.z_min + self.dz * (np.arange(self.nz + 1) - 0.5)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(R, Z)`` point coordinates with ``indexing='ij'``."""
        return np.meshgrid(self.r, self.z, indexing="ij")

    def index(self, i, j):
        """Flat (C-order) index of point ``(i, j)``."""
        return np.asarray(i) * self.nz + np.asarray(j)

    def refine(self, factor: int = 2) -> "CartesianGrid":
        """Same extents with the spacing divided by ``factor`` (nested points)."""
        return CartesianGrid(
            self.r_min, self.r_max, self.z_min, self.z_max,
            factor * (self.nr - 1) + 1, factor * (self.nz - 1) + 1,
        )

    def contains(self, r, z) -> np.ndarray:
        r = np.asarray(r)
        z = np.asarray(z)
        return (r >= self.r_min) & (r <= self.r_max) & (z >= self.z_min) & (z <= self.z_max)

    def bilinear(self, values: np.ndarray, r, z) -> np.ndarray:
        """Bilinear interpolation of a point field at arbitrary locations."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        x = np.clip((r - self.r_min) / self.dr, 0.0, self.nr - 1)
        y = np.clip((z - self.z_min) / self.dz, 0.0, self.nz - 1)
        i = np.minimum(np.floor(x).astype(int), self.nr - 2)
        j = np.minimum(np.floor(y).astype(int), self.nz - 2)
        tx = x - i
        ty = y - j
        v = values
        # nested lerps reproduce constant fields exactly
        lo = v[i, j] + tx * (v[i + 1, j] - v[i, j])
        hi = v[i, j + 1] + tx * (v[i + 1, j + 1] - v[i, j + 1])
        return lo + ty * (hi - lo)
