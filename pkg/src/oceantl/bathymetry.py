"""Piecewise-linear bathymetry profiles and their gridded masks."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GeometryError
from .fields import GridSpec, MaskGrid

# Tolerance for "receiver sits exactly on the seafloor line" comparisons,
# meters. Keeps flat-bottom grids whose last row equals the bottom depth
# classified as seafloor on every platform.
_ON_BOTTOM_EPS = 1e-9


@dataclass(frozen=True)
class BathymetryProfile:
    """Seafloor depth along range as straight segments between knots."""

    knot_ranges_m: np.ndarray
    knot_depths_m: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.knot_ranges_m, dtype=np.float64)
        z = np.asarray(self.knot_depths_m, dtype=np.float64)
        if r.ndim != 1 or r.shape != z.shape or r.size < 1:
            raise GeometryError("bathymetry needs matching 1-d range and depth knots")
        if np.any(np.diff(r) <= 0):
            raise GeometryError("bathymetry knot ranges must be strictly increasing")
        if not np.all(np.isfinite(z)) or np.any(z <= 0):
            raise GeometryError("bathymetry depths must be finite and positive")
        object.__setattr__(self, "knot_ranges_m", r)
        object.__setattr__(self, "knot_depths_m", z)

    @classmethod
    def flat(cls, depth_m: float, range_extent_m: float) -> "BathymetryProfile":
        return cls(np.array([0.0, range_extent_m]), np.array([depth_m, depth_m]))

    @classmethod
    def from_csv(cls, path: str | Path) -> "BathymetryProfile":
        """Load ``range_m,depth_m`` rows; a header line is allowed."""
        data = np.genfromtxt(path, delimiter=",", comments="#", skip_header=0, names=None)
        if data.ndim == 1:
            data = data[None, :]
        if np.isnan(data[0]).any():
            data = data[1:]
        if data.shape[0] < 1 or data.shape[1] < 2 or np.isnan(data).any():
            raise GeometryError(f"unreadable bathymetry table: {path}")
        return cls(data[:, 0], data[:, 1])

    def to_csv(self, path: str | Path) -> None:
        rows = np.column_stack([self.knot_ranges_m, self.knot_depths_m])
        np.savetxt(path, rows, delimiter=",", header="range_m,depth_m", comments="")

    def depth_at(self, range_m) -> np.ndarray:
        """Seafloor depth at each range, end knots extended flat."""
        return np.interp(
            np.asarray(range_m, dtype=np.float64), self.knot_ranges_m, self.knot_depths_m
        )

    def max_depth(self) -> float:
        return float(self.knot_depths_m.max())

    def min_depth(self) -> float:
        return float(self.knot_depths_m.min())


def is_below_bottom(range_m, depth_m, bathymetry: BathymetryProfile) -> np.ndarray:
    """True where a point sits on or under the seafloor line.

    Masking and field post-processing both route through this predicate so a
    mask cell and its clipped field cell can never disagree.
    """
    floor = bathymetry.depth_at(range_m)
    return np.asarray(depth_m, dtype=np.float64) >= floor - _ON_BOTTOM_EPS


def rasterize_mask(bathymetry: BathymetryProfile, grid: GridSpec) -> MaskGrid:
    """Rasterize a profile to a ``[n_range, n_depth]`` uint8 mask.

    Parameters
    ----------
    bathymetry : BathymetryProfile
        Seafloor line to rasterize.
    grid : GridSpec
        Target receiver grid.

    Returns
    -------
    MaskGrid
        1 on and below the seafloor, 0 in the water column.
    """
    below = is_below_bottom(
        grid.range_axis[:, None], grid.depth_axis[None, :], bathymetry
    )
    return MaskGrid(grid, below.astype(np.uint8))
