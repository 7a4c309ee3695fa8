"""Receiver grids, transmission loss fields, and bathymetry masks.

Conventions used everywhere in this package:

* Range ``r`` runs from 0 at the source column to ``range_extent_m``.
* Depth ``z`` is positive downward, 0 at the sea surface.
* Gridded arrays are indexed ``[i_range, j_depth]`` and both axes include
  their endpoints, so axis spacing is ``extent / (n - 1)``.
* Transmission loss is ``-20 log10(|p| / p_ref)`` with a unit reference
  pressure at 1 m. Pressures more than ``clip_db / 20`` decades below the
  reference are clipped, which bounds TL above by ``clip_db``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# 200 dB keeps ten orders of magnitude of pressure and flattens everything
# quieter, including the masked sub-bottom region.
DEFAULT_CLIP_DB = 200.0

REFERENCE_PRESSURE = 1.0


@dataclass(frozen=True)
class GridSpec:
    """Rectangular receiver grid over the range/depth plane."""

    n_range: int
    n_depth: int
    range_extent_m: float
    depth_extent_m: float

    def __post_init__(self) -> None:
        if self.n_range < 2 or self.n_depth < 2:
            raise ConfigError("grid needs at least 2 points per axis")
        if self.range_extent_m <= 0 or self.depth_extent_m <= 0:
            raise ConfigError("grid extents must be positive")

    @property
    def dr(self) -> float:
        return self.range_extent_m / (self.n_range - 1)

    @property
    def dz(self) -> float:
        return self.depth_extent_m / (self.n_depth - 1)

    @property
    def range_axis(self) -> np.ndarray:
        return np.linspace(0.0, self.range_extent_m, self.n_range)

    @property
    def depth_axis(self) -> np.ndarray:
        return np.linspace(0.0, self.depth_extent_m, self.n_depth)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_range, self.n_depth)


@dataclass
class TLField:
    """Transmission loss samples on a :class:`GridSpec`.

    ``values`` is float32 with shape ``grid.shape``; ``meta`` carries
    free-form provenance (frequency, source depth, solver settings) that
    the binary container serializes alongside the samples.
    """

    grid: GridSpec
    values: np.ndarray
    clip_db: float = DEFAULT_CLIP_DB
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != self.grid.shape:
            raise ConfigError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )


@dataclass
class MaskGrid:
    """Binary bathymetry mask on a :class:`GridSpec`.

    1 marks cells at or below the seafloor, 0 marks water. Stored as uint8.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.shape != self.grid.shape:
            raise ConfigError(
                f"mask shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        bad = (self.values > 1).sum()
        if bad:
            raise ConfigError(f"mask has {bad} cells outside {{0, 1}}")

    @property
    def water(self) -> np.ndarray:
        """Boolean water-column selector (True where receivers see ocean)."""
        return self.values == 0


def pressure_floor(clip_db: float) -> float:
    """Smallest pressure magnitude kept before the TL clip engages."""
    return REFERENCE_PRESSURE * 10.0 ** (-clip_db / 20.0)


def tl_from_pressure(pressure: np.ndarray, clip_db: float = DEFAULT_CLIP_DB) -> np.ndarray:
    """Convert complex or real pressure amplitude to clipped TL in dB.

    Loud spots (|p| above the 1 m reference) are kept as negative TL; only
    the quiet tail is clipped so masked regions take exactly ``clip_db``.
    """
    mag = np.abs(pressure)
    floor = pressure_floor(clip_db)
    return np.asarray(
        -20.0 * np.log10(np.maximum(mag, floor) / REFERENCE_PRESSURE),
        dtype=np.float64,
    )
