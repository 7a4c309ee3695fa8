"""Sound speed profiles and their piecewise-constant layer form.

The ray solver works on a stack of uniform-speed layers. A continuous
profile is sampled at evenly spaced interface depths; each layer then takes
the mean of its two interface speeds. Adjacent layers whose speeds agree are
merged so isovelocity water costs no interface events at all.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import GeometryError

MUNK_REFERENCE_SPEED = 1500.0
MUNK_CHANNEL_AXIS_M = 1300.0
MUNK_PERTURBATION = 0.00737


def munk_speed(
    depth_m,
    axis_depth_m: float = MUNK_CHANNEL_AXIS_M,
    reference_speed: float = MUNK_REFERENCE_SPEED,
    perturbation: float = MUNK_PERTURBATION,
):
    """Canonical deep-water sound channel profile.

    Parameters
    ----------
    depth_m : array_like
        Depths in meters, positive down.
    axis_depth_m : float
        Depth of the channel axis (speed minimum).
    reference_speed : float
        Speed at the channel axis, m/s.
    perturbation : float
        Dimensionless strength of the departure from the axis speed.

    Returns
    -------
    ndarray or float
        Sound speed in m/s, same shape as ``depth_m``.
    """
    z = np.asarray(depth_m, dtype=np.float64)
    if np.any(z < 0.0):
        raise GeometryError("depth must be non-negative")
    eta = 2.0 * (z - axis_depth_m) / axis_depth_m
    c = reference_speed * (1.0 + perturbation * (eta + np.exp(-eta) - 1.0))
    return c if c.ndim else float(c)


@dataclass(frozen=True)
class SoundSpeedProfile:
    """Depth-tabulated sound speed with linear interpolation between knots."""

    depths_m: np.ndarray
    speeds_mps: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.depths_m, dtype=np.float64)
        c = np.asarray(self.speeds_mps, dtype=np.float64)
        if d.ndim != 1 or d.shape != c.shape or d.size < 1:
            raise GeometryError("profile needs matching 1-d depth and speed tables")
        if np.any(np.diff(d) <= 0):
            raise GeometryError("profile depths must be strictly increasing")
        if not np.all(np.isfinite(c)) or np.any(c <= 0):
            raise GeometryError("profile speeds must be finite and positive")
        object.__setattr__(self, "depths_m", d)
        object.__setattr__(self, "speeds_mps", c)

    @classmethod
    def constant(cls, speed_mps: float) -> "SoundSpeedProfile":
        return cls(np.array([0.0]), np.array([float(speed_mps)]))

    @classmethod
    def from_function(
        cls, fn: Callable[[np.ndarray], np.ndarray], depth_extent_m: float, n_knots: int = 101
    ) -> "SoundSpeedProfile":
        z = np.linspace(0.0, depth_extent_m, n_knots)
        return cls(z, np.asarray(fn(z), dtype=np.float64))

    @classmethod
    def munk(cls, depth_extent_m: float, n_knots: int = 101) -> "SoundSpeedProfile":
        return cls.from_function(munk_speed, depth_extent_m, n_knots)

    def speed_at(self, depth_m) -> np.ndarray:
        """Interpolated speed, clamped to the end values outside the table."""
        return np.interp(np.asarray(depth_m, dtype=np.float64), self.depths_m, self.speeds_mps)

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.speeds_mps == self.speeds_mps[0]))


@dataclass(frozen=True)
class LayeredMedium:
    """Uniform-speed layers between horizontal interfaces.

    ``boundaries_m`` has ``n_layers + 1`` entries from the surface (0) to the
    maximum water depth; ``interface_speeds_mps`` matches it entry for entry.
    Layer ``k`` occupies ``boundaries_m[k] <= z <= boundaries_m[k + 1]``.
    """

    boundaries_m: np.ndarray
    interface_speeds_mps: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.boundaries_m, dtype=np.float64)
        c = np.asarray(self.interface_speeds_mps, dtype=np.float64)
        if b.ndim != 1 or b.size < 2 or b.shape != c.shape:
            raise GeometryError("need n+1 boundaries with matching interface speeds")
        if b[0] != 0.0 or np.any(np.diff(b) <= 0):
            raise GeometryError("boundaries must start at 0 and strictly increase")
        if not np.all(np.isfinite(c)) or np.any(c <= 0):
            raise GeometryError("interface speeds must be finite and positive")
        object.__setattr__(self, "boundaries_m", b)
        object.__setattr__(self, "interface_speeds_mps", c)

    @property
    def n_layers(self) -> int:
        return self.boundaries_m.size - 1

    @property
    def depth_extent_m(self) -> float:
        return float(self.boundaries_m[-1])

    @property
    def layer_speeds_mps(self) -> np.ndarray:
        c = self.interface_speeds_mps
        return 0.5 * (c[:-1] + c[1:])

    def layer_of(self, depth_m) -> np.ndarray:
        """Index of the layer containing each depth (interfaces go down)."""
        z = np.asarray(depth_m, dtype=np.float64)
        idx = np.searchsorted(self.boundaries_m, z, side="right") - 1
        return np.clip(idx, 0, self.n_layers - 1)

    def collapsed_layers(self, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
        """Boundaries and per-layer speeds with same-speed neighbors merged.

        An isovelocity column collapses to a single layer, which removes all
        interface events from ray stepping. Merging keeps the speed of the
        first layer of each run; by construction the run members differ from
        it by at most ``tol``.
        """
        speeds = self.layer_speeds_mps
        keep = [0]
        for k in range(1, self.n_layers):
            if abs(speeds[k] - speeds[keep[-1]]) > tol:
                keep.append(k)
        bounds = np.concatenate([self.boundaries_m[keep], self.boundaries_m[[-1]]])
        return bounds, speeds[np.asarray(keep)]


def discretize_profile(
    profile: SoundSpeedProfile, depth_extent_m: float, n_layers: int = 24
) -> LayeredMedium:
    """Sample a profile at ``n_layers + 1`` even interfaces over the column.

    Parameters
    ----------
    profile : SoundSpeedProfile
        Continuous profile to discretize.
    depth_extent_m : float
        Bottom of the deepest layer, meters.
    n_layers : int
        Number of uniform divisions of the water column.

    Returns
    -------
    LayeredMedium
    """
    if n_layers < 1:
        raise GeometryError("need at least one layer")
    if depth_extent_m <= 0:
        raise GeometryError("depth extent must be positive")
    bounds = np.linspace(0.0, depth_extent_m, n_layers + 1)
    return LayeredMedium(bounds, profile.speed_at(bounds))
