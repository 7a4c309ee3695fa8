"""Piecewise-straight ray fans in layered media over sloping bathymetry.

Within a uniform-speed layer a ray is a straight segment, so integration
reduces to hopping between discrete events: layer interfaces (Snell
refraction or total internal reflection), the sea surface, the seafloor
line, bathymetry knots, the range walls, and a path-length cap. All rays of
a fan advance through their next event together, which keeps the stepping
loop short (its iteration count is the largest per-ray event count, not the
fan size) and every inner computation vectorized.

Angles are measured from horizontal, positive toward the surface, so a ray
launched at -10 degrees heads down. Depth is positive downward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bathymetry import BathymetryProfile
from .errors import ConfigError, GeometryError, RayTraceError
from .soundspeed import LayeredMedium

EVENT_LAUNCH = 0
EVENT_INTERFACE = 1
EVENT_SURFACE = 2
EVENT_BOTTOM = 3
EVENT_KNOT = 4
EVENT_EXIT = 5
EVENT_PATH_CAP = 6

# Path-length slack below which a candidate event is treated as the one just
# processed rather than a new crossing (meters).
_T_EPS = 1e-6

_U_TINY = 1e-15

DEFAULT_MAX_EVENTS = 200_000


@dataclass(frozen=True)
class SourceSpec:
    """Point tone source and the ray fan launched from it.

    ``aperture_deg`` is the full fan opening, symmetric about horizontal, so
    160 means launch angles from -80 to +80 degrees.
    """

    z_src_m: float = 18.0
    frequency_hz: float = 230.0
    aperture_deg: float = 160.0
    n_rays: int = 2001

    def __post_init__(self) -> None:
        if self.frequency_hz <= 0:
            raise ConfigError("source frequency must be positive")
        if not 0.0 < self.aperture_deg < 180.0:
            raise ConfigError("fan aperture must be in (0, 180) degrees")
        if self.n_rays < 2:
            raise ConfigError("need at least two rays")
        if self.z_src_m <= 0:
            raise ConfigError("source must sit below the surface")

    @property
    def launch_angles_rad(self) -> np.ndarray:
        half = 0.5 * np.radians(self.aperture_deg)
        return np.linspace(-half, half, self.n_rays)

    @property
    def angle_step_rad(self) -> float:
        return np.radians(self.aperture_deg) / (self.n_rays - 1)


@dataclass
class RayPath:
    """Vertex history of one traced ray."""

    launch_angle_rad: float
    x_m: np.ndarray
    z_m: np.ndarray
    s_m: np.ndarray
    tau_s: np.ndarray
    amp: np.ndarray
    events: np.ndarray  # event code recorded at each vertex

    @property
    def n_events(self) -> int:
        return int(self.events.size - 1)


class _TraceEnv:
    """Precomputed geometry shared by every ray of a run."""

    def __init__(
        self,
        medium: LayeredMedium,
        bathymetry: BathymetryProfile,
        range_extent_m: float,
        max_path_m: float,
        surface_sign: float,
        bottom_sign: float,
    ) -> None:
        if range_extent_m <= 0:
            raise GeometryError("range extent must be positive")
        if max_path_m <= 0:
            raise GeometryError("path cap must be positive")
        if bathymetry.max_depth() > medium.depth_extent_m + 1e-6:
            raise GeometryError(
                "bathymetry reaches below the deepest layer boundary"
            )
        self.bounds, self.speeds = medium.collapsed_layers()
        self.n_layers = self.speeds.size
        self.range_extent = float(range_extent_m)
        self.max_path = float(max_path_m)
        self.surface_sign = float(surface_sign)
        self.bottom_sign = float(bottom_sign)

        # Side extensions keep every x inside some segment; their slope is
        # exactly zero so the far-away virtual knots are never binding.
        big = 1e12
        xk = bathymetry.knot_ranges_m
        zk = bathymetry.knot_depths_m
        self.seg_x = np.concatenate([[-big], xk, [big]])
        seg_z = np.concatenate([[zk[0]], zk, [zk[-1]]])
        self.seg_z0 = seg_z[:-1]
        with np.errstate(invalid="ignore"):
            self.seg_m = np.diff(seg_z) / np.diff(self.seg_x)
        self.n_segs = self.seg_m.size

    def segment_of(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.seg_x, x, side="right") - 1
        return np.clip(idx, 0, self.n_segs - 1)

    def bottom_depth(self, seg: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.seg_z0[seg] + self.seg_m[seg] * (x - self.seg_x[seg])


# Segment batches handed to the deposition callback: columns are
# (x0, z0, ux, uz, s0, tau0, amp, speed, length).
SegmentCallback = Callable[[dict], None]


def _trace(
    env: _TraceEnv,
    z_src_m: float,
    angles_rad: np.ndarray,
    max_events: int,
    segment_callback: SegmentCallback | None = None,
    record_paths: bool = False,
) -> list[RayPath] | None:
    n = angles_rad.size
    x = np.zeros(n)
    z = np.full(n, float(z_src_m))
    ux = np.cos(angles_rad)
    uz = -np.sin(angles_rad)
    s = np.zeros(n)
    tau = np.zeros(n)
    amp = np.ones(n)
    # A source sitting exactly on a layer boundary would make the first
    # interface event a zero-time candidate, which the re-trigger guard
    # below swallows; resolve the starting layer in the travel direction.
    z_eff = z + 2.0 * _T_EPS * np.sign(uz)
    layer = np.searchsorted(env.bounds, z_eff, side="right") - 1
    layer = np.clip(layer, 0, env.n_layers - 1)
    seg = env.segment_of(x)
    alive = np.ones(n, dtype=bool)

    margin = 2.0 * _T_EPS
    if np.any(z >= env.bottom_depth(seg, x) - margin) or np.any(z <= margin):
        raise GeometryError("source is not strictly inside the water column")

    paths = None
    if record_paths:
        paths = [
            [(0.0, z_src_m, 0.0, 0.0, 1.0, EVENT_LAUNCH)] for _ in range(n)
        ]

    inf = np.inf
    for _ in range(max_events):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        xi, zi, uxi, uzi = x[idx], z[idx], ux[idx], uz[idx]
        si, taui, ampi = s[idx], tau[idx], amp[idx]
        li, gi = layer[idx], seg[idx]
        ci = env.speeds[li]

        with np.errstate(divide="ignore", invalid="ignore"):
            t_up = np.where(uzi < -_U_TINY, (env.bounds[li] - zi) / uzi, inf)
            t_dn = np.where(uzi > _U_TINY, (env.bounds[li + 1] - zi) / uzi, inf)
            m = env.seg_m[gi]
            den = uzi - m * uxi
            num = env.bottom_depth(gi, xi) - zi
            t_bot = np.where(den > _U_TINY, num / den, inf)
            t_knot = np.where(
                uxi > _U_TINY,
                (env.seg_x[gi + 1] - xi) / uxi,
                np.where(uxi < -_U_TINY, (env.seg_x[gi] - xi) / uxi, inf),
            )
            t_exit = np.where(
                uxi > _U_TINY,
                (env.range_extent - xi) / uxi,
                np.where(uxi < -_U_TINY, -xi / uxi, inf),
            )
        t_cap = np.maximum(env.max_path - si, 0.0)

        # Near-zero candidates are re-triggers of the event just handled.
        for cand in (t_up, t_dn, t_bot, t_knot):
            cand[cand <= _T_EPS] = inf

        stack = np.stack([t_bot, t_up, t_dn, t_knot, t_exit, t_cap])
        # With equal times the lower row wins, so a bottom lying exactly on
        # a layer boundary reflects instead of refracting into nothing.
        which = np.argmin(stack, axis=0)
        t = stack[which, np.arange(idx.size)]
        if not np.all(np.isfinite(t)):
            bad = idx[~np.isfinite(t)][0]
            raise RayTraceError(f"ray {bad} has no reachable next event")

        if segment_callback is not None:
            moved = t > 0.0
            if np.any(moved):
                segment_callback(
                    {
                        "x0": xi[moved],
                        "z0": zi[moved],
                        "ux": uxi[moved],
                        "uz": uzi[moved],
                        "s0": si[moved],
                        "tau0": taui[moved],
                        "amp": ampi[moved],
                        "speed": ci[moved],
                        "length": t[moved],
                    }
                )

        xn = xi + t * uxi
        zn = zi + t * uzi
        sn = si + t
        taun = taui + t / ci
        uxn, uzn = uxi.copy(), uzi.copy()
        ampn = ampi.copy()
        ln, gn = li.copy(), gi.copy()
        alive_n = np.ones(idx.size, dtype=bool)
        event = np.zeros(idx.size, dtype=np.int8)

        is_bot = which == 0
        if np.any(is_bot):
            mm = env.seg_m[gi[is_bot]]
            zn[is_bot] = env.bottom_depth(gi[is_bot], xn[is_bot])
            norm2 = 1.0 + mm * mm
            un = (-mm * uxi[is_bot] + uzi[is_bot]) / norm2
            uxn[is_bot] = uxi[is_bot] + 2.0 * un * mm
            uzn[is_bot] = uzi[is_bot] - 2.0 * un
            ampn[is_bot] *= env.bottom_sign
            event[is_bot] = EVENT_BOTTOM

        is_up = which == 1
        surf = is_up & (li == 0)
        if np.any(surf):
            zn[surf] = 0.0
            uzn[surf] = -uzi[surf]
            ampn[surf] *= env.surface_sign
            event[surf] = EVENT_SURFACE
        iface_up = is_up & (li > 0)
        if np.any(iface_up):
            zn[iface_up] = env.bounds[li[iface_up]]
            c1 = env.speeds[li[iface_up]]
            c2 = env.speeds[li[iface_up] - 1]
            ux2 = uxi[iface_up] * c2 / c1
            tir = np.abs(ux2) >= 1.0
            uzn[iface_up] = np.where(
                tir, -uzi[iface_up], -np.sqrt(np.maximum(1.0 - ux2 * ux2, 0.0))
            )
            uxn[iface_up] = np.where(tir, uxi[iface_up], ux2)
            ln[iface_up] = np.where(tir, li[iface_up], li[iface_up] - 1)
            event[iface_up] = EVENT_INTERFACE

        is_dn = which == 2
        floorhit = is_dn & (li == env.n_layers - 1)
        if np.any(floorhit):
            # Only reachable when the seafloor coincides with the deepest
            # boundary and roundoff let the layer event win; reflect as if
            # off the flat bottom.
            zn[floorhit] = env.bounds[-1]
            uzn[floorhit] = -uzi[floorhit]
            ampn[floorhit] *= env.bottom_sign
            event[floorhit] = EVENT_BOTTOM
        iface_dn = is_dn & (li < env.n_layers - 1)
        if np.any(iface_dn):
            zn[iface_dn] = env.bounds[li[iface_dn] + 1]
            c1 = env.speeds[li[iface_dn]]
            c2 = env.speeds[li[iface_dn] + 1]
            ux2 = uxi[iface_dn] * c2 / c1
            tir = np.abs(ux2) >= 1.0
            uzn[iface_dn] = np.where(
                tir, -uzi[iface_dn], np.sqrt(np.maximum(1.0 - ux2 * ux2, 0.0))
            )
            uxn[iface_dn] = np.where(tir, uxi[iface_dn], ux2)
            ln[iface_dn] = np.where(tir, li[iface_dn], li[iface_dn] + 1)
            event[iface_dn] = EVENT_INTERFACE

        is_knot = which == 3
        if np.any(is_knot):
            fwd = uxi[is_knot] > 0
            xn[is_knot] = np.where(
                fwd, env.seg_x[gi[is_knot] + 1], env.seg_x[gi[is_knot]]
            )
            gn[is_knot] = np.clip(
                gi[is_knot] + np.where(fwd, 1, -1), 0, env.n_segs - 1
            )
            event[is_knot] = EVENT_KNOT

        is_exit = which == 4
        if np.any(is_exit):
            xn[is_exit] = np.where(uxi[is_exit] > 0, env.range_extent, 0.0)
            alive_n[is_exit] = False
            event[is_exit] = EVENT_EXIT

        is_cap = which == 5
        if np.any(is_cap):
            alive_n[is_cap] = False
            event[is_cap] = EVENT_PATH_CAP

        # Unit length drifts after many reflections; renormalize cheaply.
        nrm = np.sqrt(uxn * uxn + uzn * uzn)
        uxn /= nrm
        uzn /= nrm

        if not (
            np.all(np.isfinite(xn))
            and np.all(np.isfinite(zn))
            and np.all(np.isfinite(nrm))
        ):
            bad = idx[~(np.isfinite(xn) & np.isfinite(zn) & np.isfinite(nrm))][0]
            raise RayTraceError(f"ray {bad} reached a non-finite state")

        if record_paths:
            for k, ri in enumerate(idx):
                paths[ri].append(
                    (xn[k], zn[k], sn[k], taun[k], ampn[k], int(event[k]))
                )

        x[idx], z[idx], ux[idx], uz[idx] = xn, zn, uxn, uzn
        s[idx], tau[idx], amp[idx] = sn, taun, ampn
        layer[idx], seg[idx], alive[idx] = ln, gn, alive_n
    else:
        stuck = np.flatnonzero(alive)
        raise RayTraceError(
            f"{stuck.size} rays still alive after {max_events} events "
            f"(first: ray {stuck[0]} at x={x[stuck[0]]:.1f} m)"
        )

    if not record_paths:
        return None
    out = []
    for ray_i, verts in enumerate(paths):
        arr = np.asarray(verts, dtype=np.float64)
        out.append(
            RayPath(
                launch_angle_rad=float(angles_rad[ray_i]),
                x_m=arr[:, 0],
                z_m=arr[:, 1],
                s_m=arr[:, 2],
                tau_s=arr[:, 3],
                amp=arr[:, 4],
                events=arr[:, 5].astype(np.int8),
            )
        )
    return out


def trace_rays(
    medium: LayeredMedium,
    bathymetry: BathymetryProfile,
    source: SourceSpec,
    range_extent_m: float,
    max_path_m: float | None = None,
    surface_sign: float = -1.0,
    bottom_sign: float = 1.0,
    max_events: int = DEFAULT_MAX_EVENTS,
) -> list[RayPath]:
    """Trace the fan of a source and return every ray's vertex history.

    Parameters
    ----------
    medium : LayeredMedium
        Layer stack; same-speed neighbors are merged before stepping.
    bathymetry : BathymetryProfile
        Seafloor line, specular with reflection coefficient ``bottom_sign``.
    source : SourceSpec
        Source depth and fan geometry.
    range_extent_m : float
        Right wall of the domain; rays die on either wall.
    max_path_m : float
        Path-length cap; defaults to four domain crossings.

    Returns
    -------
    list of RayPath
    """
    if max_path_m is None:
        max_path_m = 4.0 * range_extent_m
    env = _TraceEnv(
        medium, bathymetry, range_extent_m, max_path_m, surface_sign, bottom_sign
    )
    return _trace(
        env,
        source.z_src_m,
        source.launch_angles_rad,
        max_events,
        record_paths=True,
    )
